#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>

#include "clpf/model/model.hpp"
#include "clpf/processes/sde.hpp"

namespace clpf::model {

namespace {

enum Stream : std::uint64_t { kLatentStep = 1, kBaseStep, kLatentPartial, kBaseBridge, kDecoder };

// Normals keyed by (seed, stream, key); the same key always yields the same draws.
std::vector<double> keyed_normals(std::uint64_t seed, Stream stream, std::uint64_t key,
                                  std::size_t count) {
  const std::uint64_t s =
      Rng::splitmix64(Rng::splitmix64(Rng::splitmix64(seed) + stream) + key);
  Rng rng(s);
  std::vector<double> out(count);
  for (double& v : out) v = rng.normal();
  return out;
}

std::uint64_t time_key(double t) { return std::bit_cast<std::uint64_t>(t); }

// Lattice cell of t: `index` and whether t sits on the lattice point itself.
struct Cell {
  std::size_t index;
  bool on_lattice;
};

Cell locate(double t, double h) {
  const double q = t / h;
  const double k = std::round(q);
  if (std::abs(q - k) <= 1e-9 * std::max(1.0, q)) return {static_cast<std::size_t>(k), true};
  return {static_cast<std::size_t>(std::floor(q)), false};
}

}  // namespace

TimeSeries sample_trajectory(const ClpfModel& model, const TimeGrid& grid, std::uint64_t seed) {
  if (grid.size() == 0) throw std::invalid_argument("sample_trajectory: empty grid");
  const auto& cfg = model.config();
  const std::size_t n = grid.size();
  const std::size_t d = cfg.data_dim;
  const std::size_t m = cfg.latent_dim;
  const double h = cfg.em_step;
  const bool wiener = cfg.wiener_base();

  const ParamView p(model.params(), nullptr);
  const ModelPass pass(model, p);

  const std::size_t last = locate(grid.times().back(), h).index + 1;
  // Latent and base states on the lattice k·h, k = 0..last.
  std::vector<Matrix> z_lat;
  std::vector<Matrix> o_lat;
  z_lat.reserve(last + 1);
  o_lat.reserve(last + 1);
  z_lat.push_back(cfg.has_latent() ? pass.z0(1).value() : Matrix(1, m));
  {
    Matrix o0(1, d);
    if (!wiener) o0 = Matrix(1, d, keyed_normals(seed, kBaseStep, 0, d));
    o_lat.push_back(std::move(o0));
  }
  const double a = std::exp(-h);
  const double sd = wiener ? std::sqrt(h) : std::sqrt(-std::expm1(-2.0 * h));
  for (std::size_t k = 0; k < last; ++k) {
    const double t = static_cast<double>(k) * h;
    if (cfg.has_latent()) {
      const Tensor z(z_lat[k]);
      const Matrix mu = pass.prior_drift(z, t).value();
      const Matrix sig = pass.diffusion(z, t).value();
      const auto xi = keyed_normals(seed, kLatentStep, k, m);
      Matrix next = z_lat[k];
      for (std::size_t j = 0; j < m; ++j) {
        next[j] += mu[j] * h + sig[sig.size() == 1 ? 0 : j] * std::sqrt(h) * xi[j];
      }
      z_lat.push_back(std::move(next));
    } else {
      z_lat.push_back(z_lat[k]);
    }
    const auto eta = keyed_normals(seed, kBaseStep, k + 1, d);
    Matrix o = o_lat[k];
    for (std::size_t j = 0; j < d; ++j) o[j] = (wiener ? o[j] : a * o[j]) + sd * eta[j];
    o_lat.push_back(std::move(o));
  }

  Matrix o_grid(n, d);
  Matrix z_grid(n, m);
  Matrix t_grid(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = grid[i];
    t_grid(i, 0) = t;
    const Cell c = locate(t, h);
    if (c.on_lattice) {
      for (std::size_t j = 0; j < m; ++j) z_grid(i, j) = z_lat[c.index][j];
      for (std::size_t j = 0; j < d; ++j) o_grid(i, j) = o_lat[c.index][j];
      continue;
    }
    const double ta = static_cast<double>(c.index) * h;
    const double tb = static_cast<double>(c.index + 1) * h;
    const double s1 = t - ta;
    const double s2 = tb - t;
    // Partial Euler–Maruyama step from the lattice point below t.
    if (cfg.has_latent()) {
      const Tensor z(z_lat[c.index]);
      const Matrix mu = pass.prior_drift(z, ta).value();
      const Matrix sig = pass.diffusion(z, ta).value();
      const auto xi = keyed_normals(seed, kLatentPartial, time_key(t), m);
      for (std::size_t j = 0; j < m; ++j) {
        z_grid(i, j) =
            z_lat[c.index][j] + mu[j] * s1 + sig[sig.size() == 1 ? 0 : j] * std::sqrt(s1) * xi[j];
      }
    }
    // Base-process bridge between the enclosing lattice points.
    const auto eta = keyed_normals(seed, kBaseBridge, time_key(t), d);
    for (std::size_t j = 0; j < d; ++j) {
      const double oa = o_lat[c.index][j];
      const double ob = o_lat[c.index + 1][j];
      double mean = 0.0;
      double var = 0.0;
      if (wiener) {
        mean = oa + s1 / h * (ob - oa);
        var = s1 * s2 / h;
      } else {
        const double a1 = std::exp(-s1);
        const double a2 = std::exp(-s2);
        const double v1 = -std::expm1(-2.0 * s1);
        const double v2 = -std::expm1(-2.0 * s2);
        var = 1.0 / (1.0 / v1 + a2 * a2 / v2);
        mean = var * (a1 * oa / v1 + a2 * ob / v2);
      }
      o_grid(i, j) = mean + std::sqrt(var) * eta[j];
    }
  }

  Matrix x;
  if (pass.flow() != nullptr) {
    x = pass.flow()->forward(Tensor(o_grid), Tensor(z_grid), Tensor(t_grid)).value.value();
  } else {
    const Matrix out = model.decoder_net().apply(p, Tensor(z_grid)).value();
    x = Matrix(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      const auto eps = keyed_normals(seed, kDecoder, time_key(grid[i]), d);
      for (std::size_t j = 0; j < d; ++j) {
        const double logvar = std::clamp(out(i, d + j), -12.0, 12.0);
        x(i, j) = out(i, j) + std::exp(0.5 * logvar) * eps[j];
      }
    }
  }
  return TimeSeries(grid, pass.from_model(Tensor(std::move(x))).value());
}

}  // namespace clpf::model
