#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "clpf/autodiff/params.hpp"

namespace clpf::ad {

enum class Activation { kIdentity, kTanh, kSoftplus, kSigmoid };

Tensor activate(Activation act, const Tensor& x);

struct MlpSpec {
  /// Input width, hidden widths..., output width.
  std::vector<std::size_t> widths;
  Activation hidden = Activation::kTanh;
  Activation output = Activation::kIdentity;
  /// Zero the last layer at initialization.
  bool zero_last = false;

  void validate() const;
};

/// Fully connected network with parameters registered in a ParamStore under
/// `<prefix>.w<k>` / `<prefix>.b<k>`.
class Mlp {
 public:
  Mlp() = default;
  Mlp(MlpSpec spec, ParamStore& store, const std::string& prefix, std::mt19937_64& rng);

  const MlpSpec& spec() const { return spec_; }
  std::size_t in_width() const { return spec_.widths.front(); }
  std::size_t out_width() const { return spec_.widths.back(); }
  std::size_t layers() const { return spec_.widths.size() - 1; }
  std::size_t weight_index(std::size_t layer) const { return w_.at(layer); }
  std::size_t bias_index(std::size_t layer) const { return b_.at(layer); }

  Tensor apply(const ParamView& p, const Tensor& x) const;

  /// Forward pass that also pushes tangent directions through the network.
  /// `tangents[k]` has the shape of `x` (or one row, broadcast); the result
  /// holds J(x)·tangents[k] per row. The output activation must be identity.
  struct TangentResult {
    Tensor out;
    std::vector<Tensor> jvp;
  };
  TangentResult apply_with_tangents(const ParamView& p, const Tensor& x,
                                    const std::vector<Tensor>& tangents) const;

  /// Same as `apply_with_tangents` but with explicit per-layer weights, for
  /// callers that transform the weights first (e.g. spectral scaling).
  TangentResult apply_weights(const std::vector<Tensor>& w, const std::vector<Tensor>& b,
                              const Tensor& x, const std::vector<Tensor>& tangents) const;

 private:
  MlpSpec spec_;
  std::vector<std::size_t> w_;
  std::vector<std::size_t> b_;
};

struct GruSpec {
  std::size_t input = 0;
  std::size_t hidden = 0;
};

/// GRU cell with gate order (reset, update, candidate):
///   r = σ(x W_ir + b_ir + h W_hr + b_hr)
///   z = σ(x W_iz + b_iz + h W_hz + b_hz)
///   n = tanh(x W_in + b_in + r ⊙ (h W_hn + b_hn))
///   h' = (1 − z) ⊙ n + z ⊙ h
class Gru {
 public:
  Gru() = default;
  Gru(GruSpec spec, ParamStore& store, const std::string& prefix, std::mt19937_64& rng);

  const GruSpec& spec() const { return spec_; }
  std::size_t w_ih() const { return w_ih_; }
  std::size_t w_hh() const { return w_hh_; }
  std::size_t b_ih() const { return b_ih_; }
  std::size_t b_hh() const { return b_hh_; }

  Tensor step(const ParamView& p, const Tensor& input, const Tensor& state) const;

 private:
  GruSpec spec_;
  std::size_t w_ih_ = 0, w_hh_ = 0, b_ih_ = 0, b_hh_ = 0;
};

/// Uniform(−a, a) matrix.
Matrix uniform_matrix(std::size_t rows, std::size_t cols, double a, std::mt19937_64& rng);

}  // namespace clpf::ad
