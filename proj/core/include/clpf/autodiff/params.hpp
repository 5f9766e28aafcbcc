#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "clpf/autodiff/tensor.hpp"

namespace clpf::ad {

/// Named parameter arrays plus Adam moment buffers.
class ParamStore {
 public:
  /// Registers a new parameter; throws std::invalid_argument on a duplicate name.
  std::size_t add(std::string name, Matrix value);

  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  const Matrix& value(std::size_t i) const { return *values_.at(i); }
  const std::shared_ptr<const Matrix>& shared_value(std::size_t i) const { return values_.at(i); }
  void set(std::size_t i, Matrix value);
  std::optional<std::size_t> find(std::string_view name) const;
  std::size_t index(std::string_view name) const;

  const Matrix& first_moment(std::size_t i) const { return m_.at(i); }
  const Matrix& second_moment(std::size_t i) const { return v_.at(i); }
  Matrix& first_moment(std::size_t i) { return m_.at(i); }
  Matrix& second_moment(std::size_t i) { return v_.at(i); }
  std::uint64_t step() const { return step_; }
  void set_step(std::uint64_t s) { step_ = s; }

  /// Total number of scalar entries.
  std::size_t scalar_count() const;
  /// Zero gradients shaped like every parameter.
  std::vector<Matrix> zero_gradients() const;

 private:
  std::vector<std::string> names_;
  std::vector<std::shared_ptr<const Matrix>> values_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  std::unordered_map<std::string, std::size_t> by_name_;
  std::uint64_t step_ = 0;
};

/// Parameters of a store as tensors for one forward pass. With a tape each
/// parameter becomes a differentiable leaf; without one they are constants.
class ParamView {
 public:
  ParamView(const ParamStore& store, Tape* tape);

  const Tensor& operator[](std::size_t i) const { return tensors_.at(i); }
  Tape* tape() const { return tape_; }
  const ParamStore& store() const { return *store_; }

 private:
  const ParamStore* store_;
  Tape* tape_;
  std::vector<Tensor> tensors_;
};

/// Gradients for every store parameter after `backward` on the tape a view was built on.
std::vector<Matrix> parameter_gradients(const ParamStore& store, const Tape& tape,
                                        const Gradients& grads);

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update. `grads` must match the store one-to-one in shape.
void adam_step(ParamStore& store, const std::vector<Matrix>& grads, const AdamOptions& opts);

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_global_norm(std::vector<Matrix>& grads, double max_norm);

}  // namespace clpf::ad
