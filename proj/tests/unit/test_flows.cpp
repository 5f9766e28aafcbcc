#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "clpf/autodiff/finite_diff.hpp"
#include "clpf/flows/flow.hpp"
#include "clpf/processes/sde.hpp"

using namespace clpf;
using namespace clpf::flows;
using ad::Tape;

namespace {

FlowConfig anode_cfg(std::size_t d, std::size_t m) {
  return {.type = "anode", .dim = d, .context_dim = m, .blocks = 2, .hidden = {8, 8},
          .rk4_steps = 16, .time_scale = 0.1, .zero_init = false};
}

FlowConfig affine_cfg(std::size_t d, std::size_t m) {
  return {.type = "affine", .dim = d, .context_dim = m, .blocks = 3, .hidden = {16, 16},
          .core_hidden = {8, 8}, .time_scale = 0.1, .zero_init = false};
}

struct Fixture {
  ParamStore store;
  std::unique_ptr<IndexedFlow> flow;
  Fixture(const FlowConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    flow = make_flow(cfg, store, "flow", rng);
  }
};

Matrix random_rows(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (auto& v : m.values()) v = n(rng);
  return m;
}

// log|det| of the forward Jacobian at a single point by central differences.
double fd_logdet(const BoundFlow& f, const Matrix& o, const Matrix& z, const Matrix& t) {
  const std::size_t d = o.cols();
  std::vector<double> jac(d * d);
  const double h = 1e-5;
  for (std::size_t j = 0; j < d; ++j) {
    Matrix op = o, om = o;
    op[j] += h;
    om[j] -= h;
    const Matrix xp = f.forward(Tensor(op), Tensor(z), Tensor(t)).value.value();
    const Matrix xm = f.forward(Tensor(om), Tensor(z), Tensor(t)).value.value();
    for (std::size_t i = 0; i < d; ++i) jac[i * d + j] = (xp[i] - xm[i]) / (2 * h);
  }
  return ad::logabsdet(Tensor(Matrix(1, d * d, jac)), d).item();
}

std::vector<double> flatten(const ParamStore& s) {
  std::vector<double> out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (double v : s.value(i).values()) out.push_back(v);
  }
  return out;
}

void unflatten(ParamStore& s, std::span<const double> p) {
  std::size_t k = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    Matrix m = s.value(i);
    for (double& v : m.values()) v = p[k++];
    s.set(i, std::move(m));
  }
}

double param_grad_error(Fixture& fx, const std::function<Tensor(const BoundFlow&)>& loss) {
  Tape tape;
  ParamView p(fx.store, &tape);
  auto bound = fx.flow->bind(p);
  const Tensor y = loss(*bound);
  const auto g = ad::parameter_gradients(fx.store, tape, tape.backward(y));
  std::vector<double> analytic;
  for (const auto& m : g) {
    for (double v : m.values()) analytic.push_back(v);
  }
  const auto base = flatten(fx.store);
  const auto numeric = ad::finite_diff_grad(
      [&](std::span<const double> x) {
        unflatten(fx.store, x);
        ParamView c(fx.store, nullptr);
        return loss(*fx.flow->bind(c)).item();
      },
      base, 1e-5);
  unflatten(fx.store, base);
  double worst = 0.0, scale = 0.0;
  for (double v : numeric) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / std::max(std::abs(numeric[i]), 1e-3 * scale));
  }
  return worst;
}

void zero_all(ParamStore& s) {
  for (std::size_t i = 0; i < s.size(); ++i) s.set(i, Matrix(s.value(i).rows(), s.value(i).cols()));
}

}  // namespace

TEST(AnodeFlow, ZeroDynamicsIsIdentity) {
  auto cfg = anode_cfg(2, 2);
  cfg.zero_init = true;
  Fixture fx(cfg, 1);
  auto f = fx.flow->bind(ParamView(fx.store, nullptr));
  const Matrix o(3, 2, {0.1, -2.0, 3.0, 0.5, 1.0, 1.0});
  auto r = f->forward(Tensor(o), Tensor(Matrix(1, 2, 0.3)), Tensor::scalar(1.0));
  EXPECT_EQ(r.value.value(), o);
  EXPECT_EQ(r.logdet.value(), Matrix(3, 1));
  EXPECT_EQ(f->inverse(Tensor(o), Tensor(Matrix(1, 2)), Tensor::scalar(0.5)).value.value(), o);
}

TEST(AnodeFlow, LinearDynamicsClosedForm) {
  // Single linear layer acting only on h: f = a h, so x = o e^{a}, logdet = a per block.
  auto cfg = anode_cfg(1, 2);
  cfg.hidden = {};
  cfg.blocks = 1;
  Fixture fx(cfg, 2);
  zero_all(fx.store);
  const double a = 0.7;
  Matrix w = fx.store.value(0);
  w[0] = a;
  fx.store.set(0, w);
  auto f = fx.flow->bind(ParamView(fx.store, nullptr));
  auto r = f->forward(Tensor(Matrix(2, 1, {1.5, -0.4})), Tensor(Matrix(1, 2, 0.9)), Tensor::scalar(2.0));
  // RK4 on a linear ODE multiplies by the degree-4 Taylor polynomial of e^{ah} each step.
  const double ah = a / 16.0;
  const double step = 1 + ah + ah * ah / 2 + ah * ah * ah / 6 + ah * ah * ah * ah / 24;
  EXPECT_NEAR(r.value.value()[0], 1.5 * std::pow(step, 16), 1e-13);
  EXPECT_NEAR(r.value.value()[0], 1.5 * std::exp(a), 1e-6);
  EXPECT_NEAR(r.value.value()[1], -0.4 * std::exp(a), 1e-6);
  EXPECT_NEAR(r.logdet.value()[0], a, 1e-12);
}

TEST(AnodeFlow, RoundTripAndInverseLogdet) {
  for (std::size_t d : {1u, 2u, 3u}) {
    Fixture fx(anode_cfg(d, 2), 10 + d);
    auto f = fx.flow->bind(ParamView(fx.store, nullptr));
    std::mt19937_64 rng(3);
    const Matrix o = random_rows(100, d, rng), z = random_rows(100, 2, rng);
    Matrix t(100, 1);
    for (std::size_t i = 0; i < 100; ++i) t[i] = 30.0 * std::uniform_real_distribution<double>()(rng);
    auto fwd = f->forward(Tensor(o), Tensor(z), Tensor(t));
    auto inv = f->inverse(fwd.value, Tensor(z), Tensor(t));
    for (std::size_t i = 0; i < o.size(); ++i) EXPECT_NEAR(inv.value.value()[i], o[i], 1e-4);
    for (std::size_t i = 0; i < 100; ++i) {
      EXPECT_NEAR(fwd.logdet.value()[i] + inv.logdet.value()[i], 0.0, 1e-3);
    }
  }
}

TEST(AnodeFlow, LogdetMatchesFiniteDifferenceJacobian) {
  for (std::size_t d : {1u, 2u, 3u}) {
    Fixture fx(anode_cfg(d, 2), 20 + d);
    auto f = fx.flow->bind(ParamView(fx.store, nullptr));
    std::mt19937_64 rng(4);
    for (int k = 0; k < 5; ++k) {
      const Matrix o = random_rows(1, d, rng), z = random_rows(1, 2, rng);
      const Matrix t = Matrix::scalar(5.0 * k);
      const double ld = f->forward(Tensor(o), Tensor(z), Tensor(t)).logdet.item();
      const double fd = fd_logdet(*f, o, z, t);
      EXPECT_NEAR(ld, fd, std::max(1e-3 * std::abs(fd), 1e-3)) << "d=" << d;
    }
  }
}

TEST(AnodeFlow, LogdetParameterGradientMatchesFiniteDifferences) {
  Fixture fx(anode_cfg(2, 2), 30);
  const Matrix o(2, 2, {0.3, -0.2, 1.0, 0.4}), z(1, 2, {0.5, -0.5});
  auto loss = [&](const BoundFlow& f) {
    auto r = f.forward(Tensor(o), Tensor(z), Tensor::scalar(3.0));
    return ad::sum(r.logdet) + ad::sum(ad::square(r.value));
  };
  EXPECT_LE(param_grad_error(fx, loss), 1e-3);
}

TEST(AffineFlow, ZeroIndexAndZeroCoreIsIdentity) {
  auto cfg = affine_cfg(2, 2);
  Fixture fx(cfg, 40);
  zero_all(fx.store);
  auto f = fx.flow->bind(ParamView(fx.store, nullptr));
  const Matrix o(2, 2, {0.1, -2.0, 3.0, 0.5});
  auto r = f->forward(Tensor(o), Tensor(Matrix(1, 2, 0.3)), Tensor::scalar(1.0));
  EXPECT_EQ(r.value.value(), o);
  EXPECT_EQ(r.logdet.value(), Matrix(2, 1));
  auto inv = f->inverse(Tensor(o), Tensor(Matrix(1, 2, 0.3)), Tensor::scalar(1.0));
  EXPECT_EQ(inv.value.value(), o);
  EXPECT_EQ(inv.iterations, 1u);
}

TEST(AffineFlow, PureScaling) {
  auto cfg = affine_cfg(1, 2);
  cfg.blocks = 1;
  Fixture fx(cfg, 41);
  zero_all(fx.store);
  const auto& blk = dynamic_cast<AffineFlow&>(*fx.flow).blocks()[0];
  fx.store.set(blk.u.bias_index(blk.u.layers() - 1), Matrix::scalar(std::log(2.0)));
  auto f = fx.flow->bind(ParamView(fx.store, nullptr));
  auto r = f->forward(Tensor::scalar(3.0), Tensor(Matrix(1, 2, 0.7)), Tensor::scalar(4.0));
  EXPECT_NEAR(r.value.item(), 1.5, 1e-15);
  EXPECT_NEAR(r.logdet.item(), -std::log(2.0), 1e-15);
}

TEST(AffineFlow, RoundTripWithinTolerance) {
  for (std::size_t d : {1u, 2u, 3u}) {
    Fixture fx(affine_cfg(d, 2), 50 + d);
    auto f = fx.flow->bind(ParamView(fx.store, nullptr));
    std::mt19937_64 rng(5);
    const Matrix o = random_rows(100, d, rng, 2.0), z = random_rows(100, 2, rng);
    Matrix t(100, 1);
    for (std::size_t i = 0; i < 100; ++i) t[i] = 30.0 * std::uniform_real_distribution<double>()(rng);
    auto fwd = f->forward(Tensor(o), Tensor(z), Tensor(t));
    auto inv = f->inverse(fwd.value, Tensor(z), Tensor(t));
    for (std::size_t i = 0; i < o.size(); ++i) EXPECT_NEAR(inv.value.value()[i], o[i], 1e-6);
    for (std::size_t i = 0; i < 100; ++i) {
      EXPECT_NEAR(fwd.logdet.value()[i] + inv.logdet.value()[i], 0.0, 1e-8);
    }
    EXPECT_LE(inv.iterations, 175u);
  }
}

TEST(AffineFlow, LogdetMatchesFiniteDifferenceJacobian) {
  for (std::size_t d : {1u, 2u, 3u}) {
    Fixture fx(affine_cfg(d, 2), 60 + d);
    auto f = fx.flow->bind(ParamView(fx.store, nullptr));
    std::mt19937_64 rng(6);
    for (int k = 0; k < 5; ++k) {
      const Matrix o = random_rows(1, d, rng), z = random_rows(1, 2, rng);
      const Matrix t = Matrix::scalar(4.0 * k + 1.0);
      const double ld = f->forward(Tensor(o), Tensor(z), Tensor(t)).logdet.item();
      const double fd = fd_logdet(*f, o, z, t);
      EXPECT_NEAR(ld, fd, std::max(1e-3 * std::abs(fd), 1e-6)) << "d=" << d;
    }
  }
}

TEST(AffineFlow, ForwardAndInverseGradientsMatchFiniteDifferences) {
  Fixture fx(affine_cfg(2, 2), 70);
  const Matrix o(2, 2, {0.3, -0.2, 1.0, 0.4}), z(1, 2, {0.5, -0.5});
  EXPECT_LE(param_grad_error(fx,
                             [&](const BoundFlow& f) {
                               auto r = f.forward(Tensor(o), Tensor(z), Tensor::scalar(3.0));
                               return ad::sum(r.logdet) + ad::sum(ad::square(r.value));
                             }),
            1e-3);
  EXPECT_LE(param_grad_error(fx,
                             [&](const BoundFlow& f) {
                               auto r = f.inverse(Tensor(o), Tensor(z), Tensor::scalar(3.0));
                               return ad::sum(r.logdet) + ad::sum(ad::square(r.value));
                             }),
            1e-3);
}

TEST(AffineFlow, InverseInputGradientMatchesFiniteDifferences) {
  Fixture fx(affine_cfg(2, 2), 71);
  const Matrix z(1, 2, {0.2, 0.1});
  ParamView c(fx.store, nullptr);
  auto f = fx.flow->bind(c);
  auto loss = [&](const Tensor& x) {
    auto r = f->inverse(x, Tensor(z), Tensor::scalar(2.0));
    return ad::sum(ad::square(r.value)) + ad::sum(r.logdet);
  };
  Tape tape;
  const Matrix x0(1, 2, {0.7, -1.1});
  Tensor x = tape.variable(x0);
  const Matrix g = tape.backward(loss(x)).of(x);
  const auto fd = ad::finite_diff_grad(
      [&](std::span<const double> p) { return loss(Tensor(Matrix(1, 2, {p[0], p[1]}))).item(); },
      x0.values(), 1e-5);
  EXPECT_LE(ad::max_relative_error(g.values(), fd, 1e-6), 1e-5);
}

TEST(AffineFlow, CoreIsContractive) {
  Fixture fx(affine_cfg(3, 2), 72);
  // Blow up the raw core weights; spectral scaling must keep the inverse convergent.
  for (std::size_t i = 0; i < fx.store.size(); ++i) {
    if (fx.store.name(i).find(".core.w") == std::string::npos) continue;
    Matrix m = fx.store.value(i);
    for (double& v : m.values()) v *= 25.0;
    fx.store.set(i, m);
  }
  auto f = fx.flow->bind(ParamView(fx.store, nullptr));
  std::mt19937_64 rng(7);
  const Matrix o = random_rows(20, 3, rng);
  auto fwd = f->forward(Tensor(o), Tensor(Matrix(1, 2)), Tensor::scalar(1.0));
  auto inv = f->inverse(fwd.value, Tensor(Matrix(1, 2)), Tensor::scalar(1.0));
  EXPECT_LE(inv.iterations, static_cast<std::size_t>(std::ceil(std::log(1e-8) / std::log(0.9))));
  for (std::size_t i = 0; i < o.size(); ++i) EXPECT_NEAR(inv.value.value()[i], o[i], 1e-6);
}

TEST(SpectralNorm, MatchesKnownSingularValue) {
  const Matrix w(2, 2, {3.0, 0.0, 0.0, -1.0});
  EXPECT_NEAR(spectral_norm(Tensor(w), 2).item(), 3.0, 1e-12);
  const Matrix r(2, 3, {1.0, 2.0, 2.0, 0.0, 0.0, 0.0});
  EXPECT_NEAR(spectral_norm(Tensor(r), 2).item(), 3.0, 1e-12);
  EXPECT_EQ(spectral_norm(Tensor(Matrix(3, 3)), 2).item(), 0.0);
}

TEST(Flows, ReadTheIndex) {
  for (const auto& cfg : {anode_cfg(2, 2), affine_cfg(2, 2)}) {
    Fixture fx(cfg, 80);
    auto f = fx.flow->bind(ParamView(fx.store, nullptr));
    const Tensor o(Matrix(1, 2, {0.4, -0.3}));
    const auto a = f->forward(o, Tensor(Matrix(1, 2, {1.0, 0.0})), Tensor::scalar(2.0)).value.value();
    const auto b = f->forward(o, Tensor(Matrix(1, 2, {-1.0, 0.5})), Tensor::scalar(2.0)).value.value();
    EXPECT_GT(std::abs(a[0] - b[0]) + std::abs(a[1] - b[1]), 1e-6) << cfg.type;
  }
}

TEST(Flows, ConditionalDensityIntegratesToOne) {
  // p(x | z, t) = N(o; 0, 1) |∂o/∂x| with o = F⁻¹(x), integrated over x for d = 1.
  for (const auto& cfg : {anode_cfg(1, 2), affine_cfg(1, 2)}) {
    Fixture fx(cfg, 90);
    auto f = fx.flow->bind(ParamView(fx.store, nullptr));
    const int n = 4001;
    const double lo = -12.0, hi = 12.0, dx = (hi - lo) / (n - 1);
    Matrix xs(n, 1);
    for (int i = 0; i < n; ++i) xs[i] = lo + i * dx;
    auto inv = f->inverse(Tensor(xs), Tensor(Matrix(1, 2, {0.3, -0.7})), Tensor::scalar(2.5));
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      const double o = inv.value.value()[i];
      const double w = (i == 0 || i == n - 1) ? 0.5 : 1.0;
      total += w * std::exp(-0.5 * o * o - 0.5 * std::log(2 * M_PI) + inv.logdet.value()[i]) * dx;
    }
    EXPECT_GE(total, 0.99) << cfg.type;
    EXPECT_LE(total, 1.01) << cfg.type;
  }
}

TEST(FlowConfig, JsonRoundTripAndValidation) {
  FlowConfig c = affine_cfg(3, 4);
  FlowConfig back = FlowConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json().dump(), c.to_json().dump());
  c.lipschitz = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.type = "coupling";
  EXPECT_THROW(c.validate(), std::invalid_argument);
}
