#pragma once

#include <cstddef>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "clpf/autodiff/nn.hpp"

namespace clpf::flows {

using ad::ParamStore;
using ad::ParamView;
using ad::Tensor;

/// Raised when the fixed-point inversion of a residual core does not converge.
class InversionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// `value` is rows x d, `logdet` rows x 1 holding log|det ∂value/∂input|.
struct FlowResult {
  Tensor value;
  Tensor logdet;
  /// Largest fixed-point iteration count over all blocks and rows (0 if unused).
  std::size_t iterations = 0;
};

struct FlowConfig {
  std::string type = "affine";  // anode | affine | identity
  std::size_t dim = 1;
  std::size_t context_dim = 2;
  std::size_t blocks = 5;
  /// Hidden widths of the ANODE dynamics nets or the affine index nets u, v.
  std::vector<std::size_t> hidden = {32, 32};
  /// ANODE: fixed RK4 steps over τ ∈ [0, 1].
  std::size_t rk4_steps = 16;
  /// Affine: hidden widths of the residual branch r of the core k(y) = y + r(y).
  std::vector<std::size_t> core_hidden = {16, 16};
  double lipschitz = 0.9;
  std::size_t power_iters = 2;
  std::size_t max_iters = 200;
  double tol = 1e-8;
  /// Clamp for the log-scale u of the affine blocks.
  double scale_clamp = 5.0;
  /// Multiplies t before it enters any network.
  double time_scale = 1.0;
  /// Zero the output layer of the index / dynamics nets so the flow starts at the identity.
  bool zero_init = true;

  nlohmann::ordered_json to_json() const;
  static FlowConfig from_json(const nlohmann::ordered_json& j);
  void validate() const;
};

/// A flow with its parameters resolved for one forward pass.
class BoundFlow {
 public:
  virtual ~BoundFlow() = default;
  /// x = F(o; z, t). `z` is rows x m (or one row), `t` rows x 1 (or 1 x 1).
  virtual FlowResult forward(const Tensor& o, const Tensor& z, const Tensor& t) const = 0;
  /// o = F⁻¹(x; z, t); logdet is log|det ∂o/∂x|.
  virtual FlowResult inverse(const Tensor& x, const Tensor& z, const Tensor& t) const = 0;
};

/// Continuously indexed invertible decoder F_θ(·; z, t).
class IndexedFlow {
 public:
  virtual ~IndexedFlow() = default;
  virtual const FlowConfig& config() const = 0;
  virtual std::unique_ptr<BoundFlow> bind(const ParamView& p) const = 0;

  std::size_t dim() const { return config().dim; }
  std::size_t context_dim() const { return config().context_dim; }
};

std::unique_ptr<IndexedFlow> make_flow(const FlowConfig& cfg, ParamStore& store,
                                       const std::string& prefix, std::mt19937_64& rng);

/// Identity map, logdet 0.
class IdentityFlow final : public IndexedFlow {
 public:
  explicit IdentityFlow(FlowConfig cfg);
  const FlowConfig& config() const override { return cfg_; }
  std::unique_ptr<BoundFlow> bind(const ParamView& p) const override;

 private:
  FlowConfig cfg_;
};

/// N blocks, each the time-1 map of dh/dτ = f(h, z, t, τ), integrated with RK4.
class AnodeFlow final : public IndexedFlow {
 public:
  AnodeFlow(FlowConfig cfg, ParamStore& store, const std::string& prefix, std::mt19937_64& rng);
  const FlowConfig& config() const override { return cfg_; }
  std::unique_ptr<BoundFlow> bind(const ParamView& p) const override;
  const std::vector<ad::Mlp>& dynamics() const { return nets_; }

 private:
  FlowConfig cfg_;
  std::vector<ad::Mlp> nets_;
};

/// N blocks h ← k(h·exp(−u(z,t)) − v(z,t)) with k(y) = y + r(y), Lip(r) < 1.
class AffineFlow final : public IndexedFlow {
 public:
  AffineFlow(FlowConfig cfg, ParamStore& store, const std::string& prefix, std::mt19937_64& rng);
  const FlowConfig& config() const override { return cfg_; }
  std::unique_ptr<BoundFlow> bind(const ParamView& p) const override;

  struct Block {
    ad::Mlp u;
    ad::Mlp v;
    ad::Mlp core;
  };
  const std::vector<Block>& blocks() const { return blocks_; }

 private:
  FlowConfig cfg_;
  std::vector<Block> blocks_;
};

/// Largest-singular-value estimate of `w` by `iters` power iterations on tape,
/// started from a vector converged off tape. Returns a 1 x 1 tensor.
Tensor spectral_norm(const Tensor& w, std::size_t iters);

}  // namespace clpf::flows
