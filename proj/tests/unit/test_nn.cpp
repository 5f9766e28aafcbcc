#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "clpf/autodiff/finite_diff.hpp"
#include "clpf/autodiff/nn.hpp"

using namespace clpf;
using namespace clpf::ad;

namespace {

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

std::vector<double> flatten(const std::vector<Matrix>& g) {
  std::vector<double> out;
  for (const auto& m : g) {
    for (double v : m.values()) out.push_back(v);
  }
  return out;
}

// Tape gradient of `loss` w.r.t. every store parameter vs central differences.
double param_grad_check(ParamStore& s, const std::function<Tensor(const ParamView&)>& loss) {
  Tape tape;
  ParamView p(s, &tape);
  auto analytic = flatten(parameter_gradients(s, tape, tape.backward(loss(p))));
  const auto base = flatten(s);
  auto numeric = finite_diff_grad(
      [&](std::span<const double> x) {
        unflatten(s, x);
        return loss(ParamView(s, nullptr)).item();
      },
      base, 1e-4);
  unflatten(s, base);
  return max_relative_error(analytic, numeric, 1e-6);
}

}  // namespace

TEST(Mlp, ZeroWeightsGiveZeroOutput) {
  std::mt19937_64 rng(1);
  ParamStore s;
  Mlp mlp({.widths = {3, 4, 2}}, s, "m", rng);
  for (std::size_t i = 0; i < s.size(); ++i) s.set(i, Matrix(s.value(i).rows(), s.value(i).cols()));
  Tensor y = mlp.apply(ParamView(s, nullptr), Tensor(Matrix(2, 3, 0.7)));
  EXPECT_EQ(y.value(), Matrix(2, 2));
}

TEST(Mlp, SingleLinearLayer) {
  std::mt19937_64 rng(1);
  ParamStore s;
  Mlp mlp({.widths = {1, 1}}, s, "lin", rng);
  s.set(s.index("lin.w0"), Matrix::scalar(2.0));
  s.set(s.index("lin.b0"), Matrix::scalar(1.0));
  EXPECT_DOUBLE_EQ(mlp.apply(ParamView(s, nullptr), Tensor::scalar(3.0)).item(), 7.0);
}

TEST(Mlp, WidthMismatchThrows) {
  std::mt19937_64 rng(1);
  ParamStore s;
  Mlp mlp({.widths = {2, 3}}, s, "m", rng);
  EXPECT_THROW(mlp.apply(ParamView(s, nullptr), Tensor(Matrix(1, 3))), ShapeError);
  EXPECT_THROW(Mlp({.widths = {2}}, s, "bad", rng), std::invalid_argument);
  EXPECT_THROW(Mlp({.widths = {2, 0, 1}}, s, "bad2", rng), std::invalid_argument);
}

TEST(Mlp, InitializationBoundsAndZeroLast) {
  std::mt19937_64 rng(5);
  ParamStore s;
  Mlp mlp({.widths = {16, 8, 3}, .zero_last = true}, s, "d", rng);
  for (double v : s.value(mlp.weight_index(0)).values()) EXPECT_LE(std::abs(v), 0.25);
  EXPECT_EQ(s.value(mlp.weight_index(1)), Matrix(8, 3));
  EXPECT_EQ(s.value(mlp.bias_index(1)), Matrix(1, 3));
}

TEST(Mlp, RandomMlpGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(21);
  ParamStore s;
  Mlp mlp({.widths = {1, 8, 8, 1}}, s, "m", rng);
  const Matrix x(3, 1, {-0.5, 0.2, 1.3});
  auto loss = [&](const ParamView& p) { return sum(square(mlp.apply(p, Tensor(x)))); };
  EXPECT_TRUE(std::isfinite(loss(ParamView(s, nullptr)).item()));
  EXPECT_LE(param_grad_check(s, loss), 1e-5);
}

TEST(Mlp, TwoLayerGradientWithinTightTolerance) {
  std::mt19937_64 rng(22);
  ParamStore s;
  Mlp mlp({.widths = {3, 6, 1}, .output = Activation::kSoftplus}, s, "m", rng);
  const Matrix x(2, 3, {0.1, -0.4, 0.9, 1.1, 0.3, -0.2});
  EXPECT_LE(param_grad_check(s, [&](const ParamView& p) { return sum(mlp.apply(p, Tensor(x))); }),
            1e-5);
}

TEST(Mlp, TangentsMatchFiniteDifferenceJacobian) {
  std::mt19937_64 rng(23);
  ParamStore s;
  Mlp mlp({.widths = {3, 5, 5, 2}}, s, "m", rng);
  ParamView p(s, nullptr);
  const Matrix x0(1, 3, {0.2, -0.7, 0.4});
  std::vector<Tensor> dirs;
  for (std::size_t k = 0; k < 3; ++k) {
    Matrix e(1, 3);
    e[k] = 1.0;
    dirs.emplace_back(e);
  }
  auto res = mlp.apply_with_tangents(p, Tensor(x0), dirs);
  EXPECT_EQ(res.out.value(), mlp.apply(p, Tensor(x0)).value());
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t o = 0; o < 2; ++o) {
      const double h = 1e-5;
      Matrix xp = x0, xm = x0;
      xp[k] += h;
      xm[k] -= h;
      const double fd =
          (mlp.apply(p, Tensor(xp)).value()[o] - mlp.apply(p, Tensor(xm)).value()[o]) / (2 * h);
      EXPECT_NEAR(res.jvp[k].value()[o], fd, 1e-8);
    }
  }
}

TEST(Mlp, TangentTraceGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(24);
  ParamStore s;
  Mlp mlp({.widths = {2, 4, 2}}, s, "m", rng);
  const Matrix x(2, 2, {0.3, -0.1, 0.5, 0.8});
  auto loss = [&](const ParamView& p) {
    auto r = mlp.apply_with_tangents(p, Tensor(x), {Tensor(Matrix(1, 2, {1.0, 0.0})),
                                                    Tensor(Matrix(1, 2, {0.0, 1.0}))});
    return sum(slice_cols(r.jvp[0], 0, 1) + slice_cols(r.jvp[1], 1, 2));
  };
  EXPECT_LE(param_grad_check(s, loss), 1e-5);
}

TEST(Gru, ZeroParametersKeepZeroState) {
  std::mt19937_64 rng(2);
  ParamStore s;
  Gru gru({.input = 3, .hidden = 4}, s, "g", rng);
  for (std::size_t i = 0; i < s.size(); ++i) s.set(i, Matrix(s.value(i).rows(), s.value(i).cols()));
  Tensor h = gru.step(ParamView(s, nullptr), Tensor(Matrix(1, 3, {1.0, -2.0, 5.0})),
                      Tensor(Matrix(1, 4)));
  EXPECT_EQ(h.value(), Matrix(1, 4));
}

TEST(Gru, SaturatedUpdateGateKeepsState) {
  std::mt19937_64 rng(3);
  ParamStore s;
  Gru gru({.input = 2, .hidden = 3}, s, "g", rng);
  Matrix b = s.value(gru.b_ih());
  for (std::size_t j = 3; j < 6; ++j) b[j] = 60.0;
  s.set(gru.b_ih(), b);
  const Matrix h0(1, 3, {0.3, -0.8, 0.1});
  Tensor h = gru.step(ParamView(s, nullptr), Tensor(Matrix(1, 2)), Tensor(h0));
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(h.value()[j], h0[j], 1e-15);
}

TEST(Gru, HandComputedSingleUnit) {
  std::mt19937_64 rng(4);
  ParamStore s;
  Gru gru({.input = 1, .hidden = 1}, s, "g", rng);
  // gates r, z, n
  s.set(gru.w_ih(), Matrix(1, 3, {0.5, -0.3, 0.8}));
  s.set(gru.w_hh(), Matrix(1, 3, {0.2, 0.4, -0.6}));
  s.set(gru.b_ih(), Matrix(1, 3, {0.1, 0.0, -0.1}));
  s.set(gru.b_hh(), Matrix(1, 3, {0.0, 0.2, 0.3}));
  const double x = 1.5, h = -0.4;
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  const double r = sig(0.5 * x + 0.1 + 0.2 * h);
  const double z = sig(-0.3 * x + 0.4 * h + 0.2);
  const double n = std::tanh(0.8 * x - 0.1 + r * (-0.6 * h + 0.3));
  const double expect = (1 - z) * n + z * h;
  EXPECT_NEAR(gru.step(ParamView(s, nullptr), Tensor::scalar(x), Tensor::scalar(h)).item(), expect,
              1e-15);
}

TEST(Gru, ThreeStepGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  ParamStore s;
  Gru gru({.input = 2, .hidden = 3}, s, "g", rng);
  const Matrix xs[3] = {Matrix(1, 2, {0.5, -1.0}), Matrix(1, 2, {0.1, 0.7}),
                        Matrix(1, 2, {-0.3, 0.2})};
  auto loss = [&](const ParamView& p) {
    Tensor h = Tensor(Matrix(1, 3));
    for (const auto& x : xs) h = gru.step(p, Tensor(x), h);
    return sum(square(h));
  };
  EXPECT_LE(param_grad_check(s, loss), 1e-4);
}

TEST(Gru, WidthMismatchThrows) {
  std::mt19937_64 rng(6);
  ParamStore s;
  Gru gru({.input = 2, .hidden = 3}, s, "g", rng);
  EXPECT_THROW(gru.step(ParamView(s, nullptr), Tensor(Matrix(1, 3)), Tensor(Matrix(1, 3))),
               ShapeError);
}
