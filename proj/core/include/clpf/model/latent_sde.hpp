#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "clpf/autodiff/tensor.hpp"
#include "clpf/processes/rng.hpp"

namespace clpf::model {

using ad::Tensor;

/// Drift or diffusion on a batch of latent states: rows x m -> rows x m (1 x m broadcasts).
using LatentField = std::function<Tensor(const Tensor& z, double t)>;

struct SolveOptions {
  /// Largest Euler–Maruyama step; an interval uses ceil(Δ/h) equal steps.
  double h = 0.01;
  /// Elementwise bound on u = (μ_post − μ_prior)/σ.
  double u_clip = 20.0;
  /// Record the state and increment of every step.
  bool keep_path = false;
};

/// One interval of a latent path. Rows of every tensor are independent samples.
struct LatentPath {
  Tensor endpoint;
  /// rows x 1 accumulated log M.
  Tensor log_weight;
  /// Step boundaries and states (rows x m each) when `keep_path` is set.
  std::vector<double> times;
  std::vector<Matrix> states;
  std::vector<Matrix> increments;
  std::size_t clip_events = 0;
  std::size_t u_entries = 0;
};

/// Euler–Maruyama on dz = μ_post dt + σ dW from `z_start` over [t0, t1] with
/// log M += −½|u|²Δt − uᵀΔW per step. An empty `posterior_drift` means the
/// posterior drift is the prior drift: u ≡ 0 and log M stays exactly 0.
LatentPath solve_posterior_interval(const LatentField& posterior_drift,
                                    const LatentField& prior_drift, const LatentField& diffusion,
                                    const Tensor& z_start, double t0, double t1, Rng& rng,
                                    const SolveOptions& opts = {});

/// Same scheme under the prior drift; log_weight is zero.
LatentPath solve_prior_interval(const LatentField& prior_drift, const LatentField& diffusion,
                                const Tensor& z_start, double t0, double t1, Rng& rng,
                                const SolveOptions& opts = {});

}  // namespace clpf::model
