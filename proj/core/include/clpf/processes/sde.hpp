#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "clpf/autodiff/matrix.hpp"
#include "clpf/processes/rng.hpp"
#include "clpf/processes/time_series.hpp"

namespace clpf {

/// Poisson arrivals on (0, T] with Exponential(λ) gaps; redrawn until non-empty.
TimeGrid sample_poisson_grid(double lambda, double horizon, Rng& rng);

struct WienerPath {
  /// Step boundaries; times.size() == increments.rows() + 1.
  std::vector<double> times;
  /// One row of k-dimensional increments per step.
  Matrix increments;
  std::uint64_t seed = 0;

  std::size_t steps() const { return increments.rows(); }
  std::size_t dim() const { return increments.cols(); }
};

/// Increments N(0, Δt I_k) for the steps between consecutive `times`.
WienerPath wiener_path(std::size_t dim, std::span<const double> times, Rng& rng);

/// Number of equal Euler–Maruyama steps covering [t0, t1] with step at most h.
std::size_t step_count(double t0, double t1, double h);
/// t0, t0 + δ, ..., t1 with `step_count(t0, t1, h)` equal steps.
std::vector<double> step_times(double t0, double t1, double h);

using VectorField = std::function<void(std::span<const double> z, double t, std::span<double> out)>;

/// dZ = μ(Z, t) dt + diag(σ(Z, t)) dW with state dimension `dim`.
struct SdeSpec {
  std::size_t dim = 0;
  VectorField drift;
  VectorField diffusion;
};

/// z_{k+1} = z_k + μ(z_k, t_k) Δt + σ(z_k, t_k) ⊙ ΔW_k. Returns (steps + 1) × dim states.
/// Throws clpf::ad::NumericError naming the step if the state becomes non-finite.
Matrix euler_maruyama(const SdeSpec& spec, std::span<const double> z0, const WienerPath& path);

/// Smallest Δt accepted by the transition densities.
inline constexpr double kMinTransitionDt = 1e-9;

/// Unit OU transition (θ = 1, stationary variance 1): per dimension
/// N(o_prev e^{−Δt}, 1 − e^{−2Δt}), summed over dimensions.
double ou_transition_logpdf(std::span<const double> o_prev, std::span<const double> o_next,
                            double dt);
/// Exact draw from the OU transition; Δt below the floor is raised to it.
std::vector<double> ou_sample(std::span<const double> o_prev, double dt, Rng& rng);

/// log X_next | X_prev ~ N(log x_prev + (μ − σ²/2)Δt, σ²Δt).
double gbm_exact_sample(double x_prev, double dt, double mu, double sigma, Rng& rng);
/// Density of X_next including the −log x_next Jacobian.
double gbm_exact_logpdf(double x_prev, double x_next, double dt, double mu, double sigma);

}  // namespace clpf
