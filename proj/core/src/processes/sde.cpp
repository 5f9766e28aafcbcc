#include "clpf/processes/sde.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "clpf/autodiff/tensor.hpp"

namespace clpf {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

double normal_logpdf(double x, double mean, double var) {
  const double r = x - mean;
  return -kHalfLog2Pi - 0.5 * std::log(var) - 0.5 * r * r / var;
}

}  // namespace

TimeGrid sample_poisson_grid(double lambda, double horizon, Rng& rng) {
  if (!(lambda > 0.0) || !(horizon > 0.0)) {
    throw std::invalid_argument("sample_poisson_grid: λ and T must be positive");
  }
  for (;;) {
    std::vector<double> times;
    double t = rng.exponential(lambda);
    while (t <= horizon) {
      times.push_back(t);
      t += rng.exponential(lambda);
    }
    if (!times.empty()) return TimeGrid(std::move(times), horizon);
  }
}

WienerPath wiener_path(std::size_t dim, std::span<const double> times, Rng& rng) {
  WienerPath p;
  p.seed = rng.seed();
  p.times.assign(times.begin(), times.end());
  const std::size_t steps = times.empty() ? 0 : times.size() - 1;
  p.increments = Matrix(steps, dim);
  for (std::size_t k = 0; k < steps; ++k) {
    const double dt = times[k + 1] - times[k];
    if (!(dt > 0.0)) throw std::invalid_argument("wiener_path: non-positive step size");
    const double s = std::sqrt(dt);
    for (std::size_t j = 0; j < dim; ++j) p.increments(k, j) = s * rng.normal();
  }
  return p;
}

std::size_t step_count(double t0, double t1, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("step_count: h must be positive");
  if (!(t1 >= t0)) throw std::invalid_argument("step_count: t1 < t0");
  const double r = (t1 - t0) / h;
  const auto n = static_cast<std::size_t>(std::ceil(r - 1e-9 * std::max(1.0, r)));
  return std::max<std::size_t>(n, 1);
}

std::vector<double> step_times(double t0, double t1, double h) {
  const std::size_t n = step_count(t0, t1, h);
  std::vector<double> ts(n + 1);
  const double dt = (t1 - t0) / static_cast<double>(n);
  for (std::size_t k = 0; k < n; ++k) ts[k] = t0 + static_cast<double>(k) * dt;
  ts[n] = t1;
  return ts;
}

Matrix euler_maruyama(const SdeSpec& spec, std::span<const double> z0, const WienerPath& path) {
  if (z0.size() != spec.dim) throw std::invalid_argument("euler_maruyama: initial state dimension");
  if (path.steps() > 0 && path.dim() != spec.dim) {
    throw std::invalid_argument("euler_maruyama: Wiener dimension " + std::to_string(path.dim()) +
                                " does not match diffusion width " + std::to_string(spec.dim));
  }
  const std::size_t m = spec.dim;
  Matrix traj(path.steps() + 1, m);
  std::copy(z0.begin(), z0.end(), traj.row_span(0).begin());
  std::vector<double> mu(m), sigma(m);
  for (std::size_t k = 0; k < path.steps(); ++k) {
    const auto z = traj.row_span(k);
    const double t = path.times[k];
    const double dt = path.times[k + 1] - t;
    spec.drift(z, t, mu);
    if (spec.diffusion) {
      spec.diffusion(z, t, sigma);
    } else {
      std::fill(sigma.begin(), sigma.end(), 0.0);
    }
    auto next = traj.row_span(k + 1);
    for (std::size_t j = 0; j < m; ++j) {
      next[j] = z[j] + mu[j] * dt + sigma[j] * path.increments(k, j);
      if (!std::isfinite(next[j])) {
        throw ad::NumericError("euler_maruyama: non-finite state at step " + std::to_string(k));
      }
    }
  }
  return traj;
}

double ou_transition_logpdf(std::span<const double> o_prev, std::span<const double> o_next,
                            double dt) {
  if (o_prev.size() != o_next.size()) throw std::invalid_argument("ou_transition_logpdf: dims");
  if (!(dt >= kMinTransitionDt)) {
    throw std::domain_error("ou_transition_logpdf: Δt " + std::to_string(dt) +
                            " below the minimum " + std::to_string(kMinTransitionDt));
  }
  const double decay = std::exp(-dt);
  const double var = -std::expm1(-2.0 * dt);
  double lp = 0.0;
  for (std::size_t j = 0; j < o_prev.size(); ++j) {
    lp += normal_logpdf(o_next[j], o_prev[j] * decay, var);
  }
  return lp;
}

std::vector<double> ou_sample(std::span<const double> o_prev, double dt, Rng& rng) {
  if (!(dt > 0.0)) throw std::domain_error("ou_sample: Δt must be positive");
  dt = std::max(dt, kMinTransitionDt);
  const double decay = std::exp(-dt);
  const double sd = std::sqrt(-std::expm1(-2.0 * dt));
  std::vector<double> out(o_prev.size());
  for (std::size_t j = 0; j < o_prev.size(); ++j) out[j] = o_prev[j] * decay + sd * rng.normal();
  return out;
}

double gbm_exact_sample(double x_prev, double dt, double mu, double sigma, Rng& rng) {
  if (!(x_prev > 0.0) || !(dt > 0.0)) throw std::domain_error("gbm_exact_sample: x_prev, Δt > 0");
  return x_prev * std::exp((mu - 0.5 * sigma * sigma) * dt + sigma * std::sqrt(dt) * rng.normal());
}

double gbm_exact_logpdf(double x_prev, double x_next, double dt, double mu, double sigma) {
  if (!(x_prev > 0.0) || !(x_next > 0.0)) {
    throw std::domain_error("gbm_exact_logpdf: values must be positive");
  }
  if (!(dt > 0.0) || !(sigma > 0.0)) throw std::domain_error("gbm_exact_logpdf: Δt, σ > 0");
  const double y = std::log(x_next);
  return normal_logpdf(y, std::log(x_prev) + (mu - 0.5 * sigma * sigma) * dt, sigma * sigma * dt) -
         y;
}

}  // namespace clpf
