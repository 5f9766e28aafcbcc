#include "clpf/model/latent_sde.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "clpf/processes/sde.hpp"

namespace clpf::model {

namespace {

Matrix draw_increments(std::size_t rows, std::size_t cols, double dt, Rng& rng) {
  Matrix dw(rows, cols);
  const double sd = std::sqrt(dt);
  for (std::size_t i = 0; i < dw.size(); ++i) dw[i] = sd * rng.normal();
  return dw;
}

LatentPath solve(const LatentField* posterior_drift, const LatentField& prior_drift,
                 const LatentField& diffusion, const Tensor& z_start, double t0, double t1,
                 Rng& rng, const SolveOptions& opts) {
  if (!(t1 > t0)) {
    throw std::invalid_argument("latent interval must have t1 > t0, got [" + std::to_string(t0) +
                                ", " + std::to_string(t1) + "]");
  }
  const std::vector<double> times = step_times(t0, t1, opts.h);
  const std::size_t rows = z_start.rows();
  const std::size_t m = z_start.cols();

  LatentPath path;
  Tensor z = z_start;
  Tensor log_m = Tensor::zeros(rows, 1);
  if (opts.keep_path) {
    path.times = times;
    path.states.push_back(z.value());
  }
  for (std::size_t k = 0; k + 1 < times.size(); ++k) {
    const double t = times[k];
    const double dt = times[k + 1] - t;
    Tensor dw(draw_increments(rows, m, dt, rng));
    try {
      const Tensor sigma = diffusion(z, t);
      Tensor drift;
      if (posterior_drift != nullptr) {
        drift = (*posterior_drift)(z, t);
        const Tensor u_raw = (drift - prior_drift(z, t)) / sigma;
        for (double v : u_raw.value().values()) {
          if (std::abs(v) > opts.u_clip) ++path.clip_events;
        }
        path.u_entries += u_raw.value().size();
        const Tensor u = ad::clamp(u_raw, -opts.u_clip, opts.u_clip);
        log_m = log_m - ad::sum_cols(ad::square(u)) * (0.5 * dt) - ad::sum_cols(u * dw);
      } else {
        drift = prior_drift(z, t);
      }
      z = z + drift * dt + sigma * dw;
    } catch (const ad::NumericError& e) {
      throw ad::NumericError("latent SDE step " + std::to_string(k) + " at t=" +
                             std::to_string(t) + ": " + e.what());
    }
    if (opts.keep_path) {
      path.states.push_back(z.value());
      path.increments.push_back(dw.value());
    }
  }
  path.endpoint = z;
  path.log_weight = log_m;
  return path;
}

}  // namespace

LatentPath solve_posterior_interval(const LatentField& posterior_drift,
                                    const LatentField& prior_drift, const LatentField& diffusion,
                                    const Tensor& z_start, double t0, double t1, Rng& rng,
                                    const SolveOptions& opts) {
  return solve(posterior_drift ? &posterior_drift : nullptr, prior_drift, diffusion, z_start, t0,
               t1, rng, opts);
}

LatentPath solve_prior_interval(const LatentField& prior_drift, const LatentField& diffusion,
                                const Tensor& z_start, double t0, double t1, Rng& rng,
                                const SolveOptions& opts) {
  return solve(nullptr, prior_drift, diffusion, z_start, t0, t1, rng, opts);
}

}  // namespace clpf::model
