#include "clpf/autodiff/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace clpf::ad {

Tensor activate(Activation act, const Tensor& x) {
  switch (act) {
    case Activation::kIdentity: return x;
    case Activation::kTanh: return tanh(x);
    case Activation::kSoftplus: return softplus(x);
    case Activation::kSigmoid: return sigmoid(x);
  }
  return x;
}

namespace {

// Derivative of the activation given pre-activation `a` and output `y`.
Tensor activation_slope(Activation act, const Tensor& a, const Tensor& y) {
  switch (act) {
    case Activation::kIdentity: return Tensor::filled(a.rows(), a.cols(), 1.0);
    case Activation::kTanh: return 1.0 - square(y);
    case Activation::kSoftplus: return sigmoid(a);
    case Activation::kSigmoid: return y * (1.0 - y);
  }
  return a;
}

}  // namespace

void MlpSpec::validate() const {
  if (widths.size() < 2) throw std::invalid_argument("MlpSpec: need input and output widths");
  for (auto w : widths) {
    if (w == 0) throw std::invalid_argument("MlpSpec: widths must be positive");
  }
}

Matrix uniform_matrix(std::size_t rows, std::size_t cols, double a, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-a, a);
  Matrix m(rows, cols);
  for (auto& v : m.values()) v = u(rng);
  return m;
}

Mlp::Mlp(MlpSpec spec, ParamStore& store, const std::string& prefix, std::mt19937_64& rng)
    : spec_(std::move(spec)) {
  spec_.validate();
  for (std::size_t k = 0; k + 1 < spec_.widths.size(); ++k) {
    const std::size_t fan_in = spec_.widths[k], fan_out = spec_.widths[k + 1];
    const double a = std::sqrt(1.0 / static_cast<double>(fan_in));
    const bool last = k + 2 == spec_.widths.size();
    Matrix w = last && spec_.zero_last ? Matrix(fan_in, fan_out)
                                       : uniform_matrix(fan_in, fan_out, a, rng);
    Matrix b = last && spec_.zero_last ? Matrix(1, fan_out) : uniform_matrix(1, fan_out, a, rng);
    w_.push_back(store.add(prefix + ".w" + std::to_string(k), std::move(w)));
    b_.push_back(store.add(prefix + ".b" + std::to_string(k), std::move(b)));
  }
}

Tensor Mlp::apply(const ParamView& p, const Tensor& x) const {
  if (x.cols() != in_width()) {
    throw ShapeError("Mlp: input width " + std::to_string(x.cols()) + ", expected " +
                     std::to_string(in_width()));
  }
  Tensor h = x;
  for (std::size_t k = 0; k < layers(); ++k) {
    h = affine(h, p[w_[k]], p[b_[k]]);
    h = activate(k + 1 == layers() ? spec_.output : spec_.hidden, h);
  }
  return h;
}

Mlp::TangentResult Mlp::apply_with_tangents(const ParamView& p, const Tensor& x,
                                            const std::vector<Tensor>& tangents) const {
  std::vector<Tensor> w, b;
  for (std::size_t k = 0; k < layers(); ++k) {
    w.push_back(p[w_[k]]);
    b.push_back(p[b_[k]]);
  }
  return apply_weights(w, b, x, tangents);
}

Mlp::TangentResult Mlp::apply_weights(const std::vector<Tensor>& w, const std::vector<Tensor>& b,
                                      const Tensor& x, const std::vector<Tensor>& tangents) const {
  if (x.cols() != in_width()) {
    throw ShapeError("Mlp: input width " + std::to_string(x.cols()) + ", expected " +
                     std::to_string(in_width()));
  }
  if (w.size() != layers() || b.size() != layers()) {
    throw std::invalid_argument("Mlp: wrong number of layer weights");
  }
  TangentResult res;
  Tensor h = x;
  res.jvp = tangents;
  for (std::size_t k = 0; k < layers(); ++k) {
    const Activation act = k + 1 == layers() ? spec_.output : spec_.hidden;
    const Tensor a = affine(h, w[k], b[k]);
    h = activate(act, a);
    const Tensor slope = act == Activation::kIdentity ? Tensor() : activation_slope(act, a, h);
    for (auto& t : res.jvp) {
      t = matmul(t, w[k]);
      if (slope.defined()) t = slope * t;
    }
  }
  res.out = h;
  return res;
}

Gru::Gru(GruSpec spec, ParamStore& store, const std::string& prefix, std::mt19937_64& rng)
    : spec_(spec) {
  if (spec.input == 0 || spec.hidden == 0) throw std::invalid_argument("GruSpec: widths must be positive");
  const double a = 1.0 / std::sqrt(static_cast<double>(spec.hidden));
  const std::size_t h3 = 3 * spec.hidden;
  w_ih_ = store.add(prefix + ".w_ih", uniform_matrix(spec.input, h3, a, rng));
  w_hh_ = store.add(prefix + ".w_hh", uniform_matrix(spec.hidden, h3, a, rng));
  b_ih_ = store.add(prefix + ".b_ih", uniform_matrix(1, h3, a, rng));
  b_hh_ = store.add(prefix + ".b_hh", uniform_matrix(1, h3, a, rng));
}

Tensor Gru::step(const ParamView& p, const Tensor& input, const Tensor& state) const {
  const std::size_t H = spec_.hidden;
  if (input.cols() != spec_.input || state.cols() != H) {
    throw ShapeError("Gru: input/state widths " + std::to_string(input.cols()) + "/" +
                     std::to_string(state.cols()) + ", expected " + std::to_string(spec_.input) +
                     "/" + std::to_string(H));
  }
  const Tensor gi = affine(input, p[w_ih_], p[b_ih_]);
  const Tensor gh = affine(state, p[w_hh_], p[b_hh_]);
  const Tensor r = sigmoid(slice_cols(gi, 0, H) + slice_cols(gh, 0, H));
  const Tensor z = sigmoid(slice_cols(gi, H, 2 * H) + slice_cols(gh, H, 2 * H));
  const Tensor n = tanh(slice_cols(gi, 2 * H, 3 * H) + r * slice_cols(gh, 2 * H, 3 * H));
  return (1.0 - z) * n + z * state;
}

}  // namespace clpf::ad
