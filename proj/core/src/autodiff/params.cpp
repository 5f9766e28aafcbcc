#include "clpf/autodiff/params.hpp"

#include <cmath>
#include <stdexcept>

namespace clpf::ad {

std::size_t ParamStore::add(std::string name, Matrix value) {
  if (by_name_.contains(name)) {
    throw std::invalid_argument("ParamStore: duplicate parameter name '" + name + "'");
  }
  if (!all_finite(value)) throw NumericError("ParamStore: non-finite initial value for " + name);
  const std::size_t idx = values_.size();
  by_name_.emplace(name, idx);
  m_.emplace_back(value.rows(), value.cols());
  v_.emplace_back(value.rows(), value.cols());
  values_.push_back(std::make_shared<const Matrix>(std::move(value)));
  names_.push_back(std::move(name));
  return idx;
}

void ParamStore::set(std::size_t i, Matrix value) {
  if (!value.same_shape(*values_.at(i))) {
    throw ShapeError("ParamStore: shape change for " + names_[i] + ": " +
                     values_[i]->shape_string() + " -> " + value.shape_string());
  }
  values_[i] = std::make_shared<const Matrix>(std::move(value));
}

std::optional<std::size_t> ParamStore::find(std::string_view name) const {
  auto it = by_name_.find(std::string(name));
  if (it == by_name_.end()) return std::nullopt;
  return it->second;
}

std::size_t ParamStore::index(std::string_view name) const {
  auto i = find(name);
  if (!i) throw std::out_of_range("ParamStore: no parameter named '" + std::string(name) + "'");
  return *i;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v->size();
  return n;
}

std::vector<Matrix> ParamStore::zero_gradients() const {
  std::vector<Matrix> out;
  out.reserve(values_.size());
  for (const auto& v : values_) out.emplace_back(v->rows(), v->cols());
  return out;
}

ParamView::ParamView(const ParamStore& store, Tape* tape) : store_(&store), tape_(tape) {
  tensors_.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    tensors_.push_back(tape != nullptr ? tape->parameter(i, store.shared_value(i))
                                       : Tensor(store.shared_value(i)));
  }
}

std::vector<Matrix> parameter_gradients(const ParamStore& store, const Tape& tape,
                                        const Gradients& grads) {
  std::vector<Matrix> out = store.zero_gradients();
  for (const auto& [index, node] : tape.parameter_nodes()) {
    if (index >= out.size()) throw TapeError("parameter index out of range for this store");
    if (const Matrix* g = grads.find(node)) {
      Matrix& acc = out[index];
      for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += (*g)[k];
    }
  }
  return out;
}

void adam_step(ParamStore& store, const std::vector<Matrix>& grads, const AdamOptions& opts) {
  if (grads.size() != store.size()) {
    throw std::invalid_argument("adam_step: expected " + std::to_string(store.size()) +
                                " gradients, got " + std::to_string(grads.size()));
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (!grads[i].same_shape(store.value(i))) {
      throw ShapeError("adam_step: gradient shape for " + store.name(i) + " is " +
                       grads[i].shape_string() + ", parameter is " +
                       store.value(i).shape_string());
    }
  }
  const std::uint64_t t = store.step() + 1;
  const double c1 = 1.0 - std::pow(opts.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(opts.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < store.size(); ++i) {
    Matrix& m = store.first_moment(i);
    Matrix& v = store.second_moment(i);
    Matrix p = store.value(i);
    const Matrix& g = grads[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = opts.beta1 * m[k] + (1.0 - opts.beta1) * g[k];
      v[k] = opts.beta2 * v[k] + (1.0 - opts.beta2) * g[k] * g[k];
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      p[k] -= opts.lr * mhat / (std::sqrt(vhat) + opts.eps);
    }
    store.set(i, std::move(p));
  }
  store.set_step(t);
}

double clip_global_norm(std::vector<Matrix>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (double x : g.values()) sq += x * x;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("clip_global_norm: non-finite gradient norm");
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& g : grads) {
      for (double& x : g.values()) x *= s;
    }
  }
  return norm;
}

}  // namespace clpf::ad
