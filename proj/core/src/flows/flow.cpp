#include "clpf/flows/flow.hpp"

#include <algorithm>
#include <cmath>

namespace clpf::flows {

using ad::concat;
using ad::Mlp;
using ad::MlpSpec;
using ad::Tape;

nlohmann::ordered_json FlowConfig::to_json() const {
  nlohmann::ordered_json j;
  j["type"] = type;
  j["dim"] = dim;
  j["context_dim"] = context_dim;
  j["blocks"] = blocks;
  j["hidden"] = hidden;
  j["rk4_steps"] = rk4_steps;
  j["core_hidden"] = core_hidden;
  j["lipschitz"] = lipschitz;
  j["power_iters"] = power_iters;
  j["max_iters"] = max_iters;
  j["tol"] = tol;
  j["scale_clamp"] = scale_clamp;
  j["time_scale"] = time_scale;
  j["zero_init"] = zero_init;
  return j;
}

FlowConfig FlowConfig::from_json(const nlohmann::ordered_json& j) {
  FlowConfig c;
  auto opt = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
  };
  opt("type", c.type);
  opt("dim", c.dim);
  opt("context_dim", c.context_dim);
  opt("blocks", c.blocks);
  opt("hidden", c.hidden);
  opt("rk4_steps", c.rk4_steps);
  opt("core_hidden", c.core_hidden);
  opt("lipschitz", c.lipschitz);
  opt("power_iters", c.power_iters);
  opt("max_iters", c.max_iters);
  opt("tol", c.tol);
  opt("scale_clamp", c.scale_clamp);
  opt("time_scale", c.time_scale);
  opt("zero_init", c.zero_init);
  c.validate();
  return c;
}

void FlowConfig::validate() const {
  if (type != "anode" && type != "affine" && type != "identity") {
    throw std::invalid_argument("flow type must be anode, affine or identity, got '" + type + "'");
  }
  if (dim == 0) throw std::invalid_argument("flow dim must be positive");
  if (type == "identity") return;
  if (blocks == 0) throw std::invalid_argument("flow needs at least one block");
  if (type == "anode" && rk4_steps == 0) throw std::invalid_argument("rk4_steps must be positive");
  if (type == "affine") {
    if (!(lipschitz > 0.0 && lipschitz < 1.0)) {
      throw std::invalid_argument("affine core Lipschitz bound must lie in (0, 1)");
    }
    if (max_iters == 0 || !(tol > 0.0)) throw std::invalid_argument("invalid inversion settings");
  }
}

namespace {

std::vector<std::size_t> widths(std::size_t in, const std::vector<std::size_t>& hidden,
                                std::size_t out) {
  std::vector<std::size_t> w{in};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(out);
  return w;
}

// One-hot 1 x width rows selecting the first `d` coordinates.
std::vector<Tensor> unit_tangents(std::size_t d, std::size_t width) {
  std::vector<Tensor> out;
  for (std::size_t k = 0; k < d; ++k) {
    Matrix e(1, width);
    e[k] = 1.0;
    out.emplace_back(std::move(e));
  }
  return out;
}

Tensor norm(const Tensor& x) { return ad::exp(ad::scale(ad::log(ad::sum(ad::square(x))), 0.5)); }

Tensor index_input(const Tensor& z, const Tensor& t, double time_scale) {
  return concat({z, ad::scale(t, time_scale)});
}

// ---------------------------------------------------------------------------

class BoundIdentity final : public BoundFlow {
 public:
  FlowResult forward(const Tensor& o, const Tensor&, const Tensor&) const override {
    return {o, Tensor::zeros(o.rows(), 1), 0};
  }
  FlowResult inverse(const Tensor& x, const Tensor&, const Tensor&) const override {
    return {x, Tensor::zeros(x.rows(), 1), 0};
  }
};

// ---------------------------------------------------------------------------

class BoundAnode final : public BoundFlow {
 public:
  BoundAnode(const AnodeFlow& flow, const ParamView& p) : flow_(flow), p_(p) {}

  FlowResult forward(const Tensor& o, const Tensor& z, const Tensor& t) const override {
    Tensor h = o;
    Tensor ld = Tensor::zeros(o.rows(), 1);
    for (std::size_t b = 0; b < flow_.dynamics().size(); ++b) integrate(b, h, ld, z, t, false);
    return {h, ld, 0};
  }

  FlowResult inverse(const Tensor& x, const Tensor& z, const Tensor& t) const override {
    Tensor h = x;
    Tensor ld = Tensor::zeros(x.rows(), 1);
    for (std::size_t b = flow_.dynamics().size(); b-- > 0;) integrate(b, h, ld, z, t, true);
    return {h, ld, 0};
  }

 private:
  struct Derivative {
    Tensor dh;
    Tensor trace;
  };

  Derivative eval(const Mlp& net, const Tensor& h, const Tensor& ctx, double tau) const {
    const std::size_t d = flow_.dim();
    const Tensor in = concat({h, ctx, Tensor::scalar(tau)});
    auto res = net.apply_with_tangents(p_, in, unit_tangents(d, net.in_width()));
    Tensor tr = ad::slice_cols(res.jvp[0], 0, 1);
    for (std::size_t k = 1; k < d; ++k) tr = tr + ad::slice_cols(res.jvp[k], k, k + 1);
    return {res.out, tr};
  }

  void integrate(std::size_t block, Tensor& h, Tensor& ld, const Tensor& z, const Tensor& t,
                 bool reverse) const {
    const Mlp& net = flow_.dynamics()[block];
    const Tensor ctx = index_input(z, t, flow_.config().time_scale);
    const std::size_t steps = flow_.config().rk4_steps;
    const double dt = (reverse ? -1.0 : 1.0) / static_cast<double>(steps);
    for (std::size_t s = 0; s < steps; ++s) {
      const double tau = reverse ? 1.0 - static_cast<double>(s) / static_cast<double>(steps)
                                 : static_cast<double>(s) / static_cast<double>(steps);
      const Derivative k1 = eval(net, h, ctx, tau);
      const Derivative k2 = eval(net, h + k1.dh * (0.5 * dt), ctx, tau + 0.5 * dt);
      const Derivative k3 = eval(net, h + k2.dh * (0.5 * dt), ctx, tau + 0.5 * dt);
      const Derivative k4 = eval(net, h + k3.dh * dt, ctx, tau + dt);
      h = h + (k1.dh + k2.dh * 2.0 + k3.dh * 2.0 + k4.dh) * (dt / 6.0);
      ld = ld + (k1.trace + k2.trace * 2.0 + k3.trace * 2.0 + k4.trace) * (dt / 6.0);
    }
  }

  const AnodeFlow& flow_;
  ParamView p_;
};

// ---------------------------------------------------------------------------

// Solves A^T a = g for a d x d row-major A by Gaussian elimination with pivoting.
std::vector<double> solve_transposed(const std::vector<double>& a, std::vector<double> g,
                                     std::size_t d) {
  std::vector<double> m(d * d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) m[i * d + j] = a[j * d + i];
  }
  for (std::size_t k = 0; k < d; ++k) {
    std::size_t p = k;
    for (std::size_t i = k + 1; i < d; ++i) {
      if (std::abs(m[i * d + k]) > std::abs(m[p * d + k])) p = i;
    }
    if (m[p * d + k] == 0.0) throw ad::NumericError("singular Jacobian in implicit gradient");
    if (p != k) {
      for (std::size_t j = 0; j < d; ++j) std::swap(m[k * d + j], m[p * d + j]);
      std::swap(g[k], g[p]);
    }
    for (std::size_t i = k + 1; i < d; ++i) {
      const double f = m[i * d + k] / m[k * d + k];
      for (std::size_t j = k; j < d; ++j) m[i * d + j] -= f * m[k * d + j];
      g[i] -= f * g[k];
    }
  }
  for (std::size_t i = d; i-- > 0;) {
    for (std::size_t j = i + 1; j < d; ++j) g[i] -= m[i * d + j] * g[j];
    g[i] /= m[i * d + i];
  }
  return g;
}

std::vector<Tensor> constants(const std::vector<Tensor>& ts) {
  std::vector<Tensor> out;
  out.reserve(ts.size());
  for (const auto& t : ts) out.push_back(t.detach());
  return out;
}

class BoundAffine final : public BoundFlow {
 public:
  BoundAffine(const AffineFlow& flow, const ParamView& p) : flow_(flow), p_(p) {
    const auto& cfg = flow.config();
    for (const auto& blk : flow.blocks()) {
      CoreWeights cw;
      for (std::size_t k = 0; k < blk.core.layers(); ++k) {
        const Tensor& w = p[blk.core.weight_index(k)];
        const Tensor sigma = spectral_norm(w, cfg.power_iters);
        cw.w.push_back(sigma.item() > cfg.lipschitz ? ad::div(w * cfg.lipschitz, sigma) : w);
        cw.b.push_back(p[blk.core.bias_index(k)]);
      }
      cores_.push_back(std::move(cw));
    }
  }

  FlowResult forward(const Tensor& o, const Tensor& z, const Tensor& t) const override {
    const std::size_t d = flow_.dim();
    Tensor h = o;
    Tensor ld = Tensor::zeros(o.rows(), 1);
    const Tensor ctx = index_input(z, t, flow_.config().time_scale);
    for (std::size_t b = 0; b < flow_.blocks().size(); ++b) {
      const auto& blk = flow_.blocks()[b];
      const Tensor u = log_scale(blk, ctx);
      const Tensor v = blk.v.apply(p_, ctx);
      const Tensor y = h * ad::exp(-u) - v;
      auto res = blk.core.apply_weights(cores_[b].w, cores_[b].b, y, unit_tangents(d, d));
      h = y + res.out;
      ld = ld - ad::sum_cols(u) + core_logdet(res.jvp, d);
    }
    return {h, ld, 0};
  }

  FlowResult inverse(const Tensor& x, const Tensor& z, const Tensor& t) const override {
    const std::size_t d = flow_.dim();
    Tensor h = x;
    Tensor ld = Tensor::zeros(x.rows(), 1);
    std::size_t iters = 0;
    const Tensor ctx = index_input(z, t, flow_.config().time_scale);
    for (std::size_t b = flow_.blocks().size(); b-- > 0;) {
      const auto& blk = flow_.blocks()[b];
      std::size_t it = 0;
      const Tensor y = solve_core(b, h, it);
      iters = std::max(iters, it);
      auto res = blk.core.apply_weights(cores_[b].w, cores_[b].b, y, unit_tangents(d, d));
      const Tensor u = log_scale(blk, ctx);
      const Tensor v = blk.v.apply(p_, ctx);
      h = (y + v) * ad::exp(u);
      ld = ld + ad::sum_cols(u) - core_logdet(res.jvp, d);
    }
    return {h, ld, iters};
  }

 private:
  struct CoreWeights {
    std::vector<Tensor> w;
    std::vector<Tensor> b;
  };

  Tensor log_scale(const AffineFlow::Block& blk, const Tensor& ctx) const {
    const double c = flow_.config().scale_clamp;
    return ad::clamp(blk.u.apply(p_, ctx), -c, c);
  }

  // log|det(I + J)| per row, J[i][j] = ∂r_i/∂y_j = jvp[j](:, i).
  static Tensor core_logdet(const std::vector<Tensor>& jvp, std::size_t d) {
    std::vector<Tensor> entries;
    entries.reserve(d * d);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        Tensor e = ad::slice_cols(jvp[j], i, i + 1);
        entries.push_back(i == j ? e + 1.0 : e);
      }
    }
    return ad::logabsdet(concat(std::span<const Tensor>(entries)), d);
  }

  // Jacobian of r at the rows of `y` (constants), row-major d x d per row.
  static std::vector<std::vector<double>> jacobians(const Mlp& core, const CoreWeights& cw,
                                                    const Matrix& y) {
    const std::size_t d = y.cols();
    auto res = core.apply_weights(constants(cw.w), constants(cw.b), Tensor(y), unit_tangents(d, d));
    std::vector<std::vector<double>> out(y.rows(), std::vector<double>(d * d));
    for (std::size_t r = 0; r < y.rows(); ++r) {
      for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) out[r][i * d + j] = res.jvp[j].value()(r, i);
      }
    }
    return out;
  }

  // y with y + r(y) = h, by fixed-point iteration; differentiable via the implicit function theorem.
  Tensor solve_core(std::size_t b, const Tensor& h, std::size_t& iters) const {
    const auto& cfg = flow_.config();
    const Mlp& core = flow_.blocks()[b].core;
    const CoreWeights& cw = cores_[b];
    const std::vector<Tensor> w = constants(cw.w), bias = constants(cw.b);
    const Matrix& target = h.value();
    Matrix y = target;
    double delta = 0.0;
    iters = 0;
    while (iters < cfg.max_iters) {
      ++iters;
      const Matrix r = core.apply_weights(w, bias, Tensor(y), {}).out.value();
      delta = 0.0;
      for (std::size_t k = 0; k < y.size(); ++k) {
        const double next = target[k] - r[k];
        delta = std::max(delta, std::abs(next - y[k]));
        y[k] = next;
      }
      if (delta < cfg.tol) break;
    }
    if (!(delta < cfg.tol)) {
      throw InversionError("affine flow: fixed-point inversion did not converge after " +
                           std::to_string(iters) + " iterations (residual " +
                           std::to_string(delta) + ")");
    }

    std::vector<Tensor> inputs{h};
    for (std::size_t k = 0; k < cw.w.size(); ++k) {
      inputs.push_back(cw.w[k]);
      inputs.push_back(cw.b[k]);
    }
    const std::size_t layers = cw.w.size();
    return ad::custom(
        y, inputs, [core, w, bias, y, layers](const Matrix& g, std::span<Matrix> gin) {
          const std::size_t d = y.cols();
          // a = (I + J)^{-T} g per row
          CoreWeights consts{w, bias};
          const auto jac = jacobians(core, consts, y);
          Matrix a(y.rows(), d);
          for (std::size_t r = 0; r < y.rows(); ++r) {
            std::vector<double> m = jac[r];
            for (std::size_t i = 0; i < d; ++i) m[i * d + i] += 1.0;
            auto g_row = g.row_span(r);
            const auto sol = solve_transposed(m, std::vector<double>(g_row.begin(), g_row.end()), d);
            for (std::size_t i = 0; i < d; ++i) a(r, i) = sol[i];
          }
          for (std::size_t k = 0; k < a.size(); ++k) gin[0][k] += a[k];
          // ∂y/∂θ = −(I + J)^{-1} ∂r/∂θ, so θ receives −aᵀ ∂r/∂θ.
          Tape local;
          std::vector<Tensor> lw, lb;
          for (std::size_t k = 0; k < layers; ++k) {
            lw.push_back(local.variable(w[k].value()));
            lb.push_back(local.variable(bias[k].value()));
          }
          const Tensor out = core.apply_weights(lw, lb, Tensor(y), {}).out;
          const auto grads = local.backward(ad::sum(out * Tensor(a)));
          for (std::size_t k = 0; k < layers; ++k) {
            const Matrix gw = grads.of(lw[k]), gb = grads.of(lb[k]);
            for (std::size_t i = 0; i < gw.size(); ++i) gin[1 + 2 * k][i] -= gw[i];
            for (std::size_t i = 0; i < gb.size(); ++i) gin[2 + 2 * k][i] -= gb[i];
          }
        });
  }

  const AffineFlow& flow_;
  ParamView p_;
  std::vector<CoreWeights> cores_;
};

}  // namespace

Tensor spectral_norm(const Tensor& w, std::size_t iters) {
  const Matrix& wm = w.value();
  const std::size_t in = wm.rows(), out = wm.cols();
  // Off-tape warm start: converged right-singular direction in input space.
  Matrix a(in, 1, 1.0 / std::sqrt(static_cast<double>(in)));
  std::vector<double> b(out);
  for (int it = 0; it < 100; ++it) {
    std::fill(b.begin(), b.end(), 0.0);
    for (std::size_t i = 0; i < in; ++i) {
      for (std::size_t j = 0; j < out; ++j) b[j] += a[i] * wm(i, j);
    }
    double nb = 0.0;
    for (double v : b) nb += v * v;
    nb = std::sqrt(nb);
    if (nb == 0.0) return Tensor::scalar(0.0);
    Matrix next(in, 1);
    double na = 0.0;
    for (std::size_t i = 0; i < in; ++i) {
      for (std::size_t j = 0; j < out; ++j) next[i] += wm(i, j) * b[j] / nb;
      na += next[i] * next[i];
    }
    na = std::sqrt(na);
    double change = 0.0;
    for (std::size_t i = 0; i < in; ++i) {
      next[i] /= na;
      change = std::max(change, std::abs(next[i] - a[i]));
    }
    a = std::move(next);
    if (change < 1e-12) break;
  }
  Tensor av(a);
  for (std::size_t k = 0; k < iters; ++k) {
    Tensor bv = ad::sum_rows(w * av);
    bv = ad::div(bv, norm(bv));
    av = ad::sum_cols(w * bv);
    av = ad::div(av, norm(av));
  }
  return norm(ad::sum_rows(w * av));
}

IdentityFlow::IdentityFlow(FlowConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

std::unique_ptr<BoundFlow> IdentityFlow::bind(const ParamView&) const {
  return std::make_unique<BoundIdentity>();
}

AnodeFlow::AnodeFlow(FlowConfig cfg, ParamStore& store, const std::string& prefix,
                     std::mt19937_64& rng)
    : cfg_(std::move(cfg)) {
  cfg_.validate();
  const std::size_t in = cfg_.dim + cfg_.context_dim + 2;
  for (std::size_t b = 0; b < cfg_.blocks; ++b) {
    nets_.emplace_back(MlpSpec{.widths = widths(in, cfg_.hidden, cfg_.dim),
                               .zero_last = cfg_.zero_init},
                       store, prefix + ".f" + std::to_string(b), rng);
  }
}

std::unique_ptr<BoundFlow> AnodeFlow::bind(const ParamView& p) const {
  return std::make_unique<BoundAnode>(*this, p);
}

AffineFlow::AffineFlow(FlowConfig cfg, ParamStore& store, const std::string& prefix,
                       std::mt19937_64& rng)
    : cfg_(std::move(cfg)) {
  cfg_.validate();
  const std::size_t in = cfg_.context_dim + 1;
  for (std::size_t b = 0; b < cfg_.blocks; ++b) {
    const std::string pre = prefix + ".block" + std::to_string(b);
    Block blk{
        Mlp({.widths = widths(in, cfg_.hidden, cfg_.dim), .zero_last = cfg_.zero_init}, store,
            pre + ".u", rng),
        Mlp({.widths = widths(in, cfg_.hidden, cfg_.dim), .zero_last = cfg_.zero_init}, store,
            pre + ".v", rng),
        Mlp({.widths = widths(cfg_.dim, cfg_.core_hidden, cfg_.dim)}, store, pre + ".core", rng)};
    blocks_.push_back(std::move(blk));
  }
}

std::unique_ptr<BoundFlow> AffineFlow::bind(const ParamView& p) const {
  return std::make_unique<BoundAffine>(*this, p);
}

std::unique_ptr<IndexedFlow> make_flow(const FlowConfig& cfg, ParamStore& store,
                                       const std::string& prefix, std::mt19937_64& rng) {
  cfg.validate();
  if (cfg.type == "anode") return std::make_unique<AnodeFlow>(cfg, store, prefix, rng);
  if (cfg.type == "affine") return std::make_unique<AffineFlow>(cfg, store, prefix, rng);
  return std::make_unique<IdentityFlow>(cfg);
}

}  // namespace clpf::flows
