// Acceptance checks. `clpf_acceptance <n>...` runs the listed criteria (default: all)
// and prints one PASS/FAIL line per criterion. Exit code 0 iff every one passed.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "clpf/flows/flow.hpp"
#include "clpf/model/latent_sde.hpp"
#include "clpf/model/model.hpp"
#include "clpf/processes/datasets.hpp"
#include "clpf/processes/sde.hpp"
#include "clpf/train/train.hpp"

#ifndef CLPF_CLI_PATH
#define CLPF_CLI_PATH "clpf"
#endif
#ifndef CLPF_ACCEPTANCE_DIR
#define CLPF_ACCEPTANCE_DIR "acceptance_work"
#endif

namespace fs = std::filesystem;
using namespace clpf;
using ad::Tensor;

namespace {

// ------------------------------------------------------------------ tolerances

constexpr double kGradRelTol = 1e-3;
constexpr double kGradFdStep = 1e-5;
// Relative errors are taken against max(|fd|, floor) so exactly-zero gradients compare absolutely.
constexpr double kGradFloor = 1e-6;
constexpr double kExactTol = 1e-10;
constexpr double kSigmaMultiple = 3.0;
constexpr std::size_t kGirsanovPaths = 10000;
constexpr double kGirsanovStep = 0.01;
constexpr double kAnodeRoundTrip = 1e-4;
constexpr double kAffineRoundTrip = 1e-6;
constexpr double kLogdetRelTol = 1e-3;
constexpr double kQuadLo = 0.99;
constexpr double kQuadHi = 1.01;
constexpr double kLambdaGapLo = 1.05;
constexpr double kLambdaGapHi = 1.28;
constexpr double kOracleGap = 0.5;
constexpr double kMinImprovement = 1.0;
constexpr double kAblationGap = 0.5;
constexpr double kIwaeSeMultiple = 2.0;

const double kLn2Pi = std::log(2.0 * std::numbers::pi);

// ------------------------------------------------------------------ helpers

struct Outcome {
  bool pass = false;
  std::string detail;
  /// Numeric outputs compared bit-for-bit by the determinism criterion.
  std::vector<double> fingerprint;
};

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Moments {
  double mean = 0.0;
  double se = 0.0;
};

Moments moments(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += x;
  const double m = s / n;
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / (n - 1.0) / n)};
}

fs::path work_dir(const std::string& name) {
  const fs::path p = fs::path(CLPF_ACCEPTANCE_DIR) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

double gaussian_logpdf(double x, double mean, double var) {
  return -0.5 * (x - mean) * (x - mean) / var - 0.5 * std::log(var) - 0.5 * kLn2Pi;
}

// log|det| by Gaussian elimination with partial pivoting.
double log_abs_det(std::vector<double> a, std::size_t n) {
  double acc = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r) {
      if (std::abs(a[r * n + c]) > std::abs(a[piv * n + c])) piv = r;
    }
    if (piv != c) {
      for (std::size_t k = 0; k < n; ++k) std::swap(a[c * n + k], a[piv * n + k]);
    }
    const double p = a[c * n + c];
    acc += std::log(std::abs(p));
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a[r * n + c] / p;
      for (std::size_t k = c; k < n; ++k) a[r * n + k] -= f * a[c * n + k];
    }
  }
  return acc;
}

model::ModelConfig compact_config(const std::string& flow) {
  model::ModelConfig c;
  c.variant = model::Variant::kClpf;
  c.data_dim = 1;
  c.latent_dim = 2;
  c.context_dim = 4;
  c.encoder_hidden = 6;
  c.drift_hidden = {8, 8};
  c.diffusion_hidden = {8, 8};
  c.decoder_hidden = {8};
  c.em_step = 0.05;
  c.time_scale = 0.5;
  c.flow.type = flow;
  c.flow.blocks = 2;
  c.flow.hidden = {8, 8};
  c.flow.core_hidden = {8};
  c.flow.rk4_steps = 8;
  c.flow.time_scale = 0.5;
  c.flow.zero_init = false;
  return c;
}

double bound(const model::ClpfModel& m, const TimeSeries& s, std::size_t k, std::uint64_t seed,
             bool iwae) {
  const ad::ParamView p(m.params(), nullptr);
  const model::ModelPass pass(m, p);
  Rng rng(seed);
  return (iwae ? pass.iwae(s, k, rng) : pass.elbo(s, k, rng)).total.item();
}

// ------------------------------------------------------------------ 1. gradients

Outcome criterion1() {
  model::ClpfModel m(compact_config("anode"), 101);
  const TimeSeries s(TimeGrid({0.3, 0.8, 1.6}, 1.6), Matrix(3, 1, {0.4, -0.1, 0.7}));
  const std::size_t k = 2;
  const std::uint64_t seed = 102;

  ad::Tape tape;
  const ad::ParamView view(m.params(), &tape);
  const model::ModelPass pass(m, view);
  Rng rng(seed);
  const auto est = pass.elbo(s, k, rng);
  const auto grads = ad::parameter_gradients(m.params(), tape, tape.backward(est.total));

  double worst = 0.0;
  std::string worst_name;
  std::size_t checked = 0;
  Outcome out;
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    const Matrix base = m.params().value(i);
    for (std::size_t e = 0; e < base.size(); ++e) {
      Matrix plus = base, minus = base;
      plus.values()[e] += kGradFdStep;
      minus.values()[e] -= kGradFdStep;
      m.params().set(i, plus);
      const double fp = bound(m, s, k, seed, false);
      m.params().set(i, minus);
      const double fm = bound(m, s, k, seed, false);
      m.params().set(i, base);
      const double fd = (fp - fm) / (2.0 * kGradFdStep);
      const double g = grads[i].values()[e];
      const double rel = std::abs(g - fd) / std::max(std::abs(fd), kGradFloor);
      if (rel > worst) {
        worst = rel;
        worst_name = m.params().name(i);
      }
      out.fingerprint.push_back(g);
      ++checked;
    }
  }
  out.fingerprint.push_back(est.total.item());
  out.pass = worst <= kGradRelTol;
  out.detail = std::to_string(checked) + " parameters, worst rel err " + fmt("%.3e", worst) + " (" +
               worst_name + "), tol " + fmt("%.0e", kGradRelTol);
  return out;
}

// ------------------------------------------------------------------ 2. exact model

double analytic_ou_loglik(const TimeSeries& s) {
  double ll = 0.0;
  for (std::size_t j = 0; j < s.dim(); ++j) {
    ll += gaussian_logpdf(s.values(0, j), 0.0, 1.0);
    for (std::size_t i = 1; i < s.size(); ++i) {
      const double dt = s.time(i) - s.time(i - 1);
      ll += gaussian_logpdf(s.values(i, j), s.values(i - 1, j) * std::exp(-dt), 1.0 - std::exp(-2.0 * dt));
    }
  }
  return ll;
}

Outcome criterion2() {
  Outcome out;
  double worst = 0.0;
  std::size_t checks = 0;
  std::mt19937_64 gen(201);
  std::normal_distribution<double> normal(0.0, 1.5);
  for (std::size_t d : {1u, 2u, 3u}) {
    model::ModelConfig c = compact_config("identity");
    c.data_dim = d;
    c.tie_posterior = true;
    const model::ClpfModel m(c, 202 + d);
    for (std::size_t rep = 0; rep < 3; ++rep) {
      Rng grid_rng(300 + 10 * d + rep);
      const TimeGrid grid = sample_poisson_grid(2.0, 2.0 + 2.0 * static_cast<double>(rep), grid_rng);
      Matrix x(grid.size(), d);
      for (double& v : x.values()) v = normal(gen);
      const TimeSeries s(grid, std::move(x));
      const double exact = analytic_ou_loglik(s);
      std::vector<double> values{bound(m, s, 1, 7, false), bound(m, s, 4, 8, false)};
      for (std::size_t k : {1u, 2u, 5u, 25u, 125u}) values.push_back(bound(m, s, k, 9 + k, true));
      for (double v : values) {
        worst = std::max(worst, std::abs(v - exact));
        out.fingerprint.push_back(v);
        ++checks;
      }
    }
  }
  out.pass = worst <= kExactTol;
  out.detail = std::to_string(checks) + " bounds vs analytic OU log-likelihood, max |diff| " +
               fmt("%.3e", worst) + ", tol " + fmt("%.0e", kExactTol);
  return out;
}

// ------------------------------------------------------------------ 3. Girsanov

Outcome criterion3() {
  // Prior dz = −z dt + √2 dW; posterior drift shifted to 1 − z.
  const model::LatentField prior = [](const Tensor& z, double) { return -z; };
  const model::LatentField post = [](const Tensor& z, double) { return 1.0 - z; };
  const model::LatentField sigma = [](const Tensor&, double) { return Tensor::scalar(std::sqrt(2.0)); };
  model::SolveOptions opts;
  opts.h = kGirsanovStep;
  const Tensor z0 = Tensor::zeros(kGirsanovPaths, 1);
  Rng rq(301), rp(302);
  const auto q = model::solve_posterior_interval(post, prior, sigma, z0, 0.0, 1.0, rq, opts);
  const auto p = model::solve_prior_interval(prior, sigma, z0, 0.0, 1.0, rp, opts);

  Outcome out;
  std::vector<double> w;
  for (double lm : q.log_weight.value().values()) w.push_back(std::exp(lm));
  const Moments mw = moments(w);
  bool ok = std::abs(mw.mean - 1.0) <= kSigmaMultiple * mw.se;
  std::ostringstream detail;
  detail << "E[M] = " << fmt("%.4f", mw.mean) << " +- " << fmt("%.4f", mw.se);
  out.fingerprint = {mw.mean, mw.se};
  for (int power : {1, 2}) {
    std::vector<double> a, b;
    for (std::size_t r = 0; r < kGirsanovPaths; ++r) {
      a.push_back(std::pow(p.endpoint(r, 0), power));
      b.push_back(std::pow(q.endpoint(r, 0), power) * w[r]);
    }
    const Moments ma = moments(a), mb = moments(b);
    const double tol = kSigmaMultiple * std::hypot(ma.se, mb.se);
    ok = ok && std::abs(ma.mean - mb.mean) <= tol;
    detail << "; f=z^" << power << ": prior " << fmt("%.4f", ma.mean) << " vs weighted "
           << fmt("%.4f", mb.mean) << " (3SE " << fmt("%.4f", tol) << ")";
    out.fingerprint.push_back(ma.mean);
    out.fingerprint.push_back(mb.mean);
  }
  out.pass = ok;
  out.detail = detail.str();
  return out;
}

// ------------------------------------------------------------------ 4. flows

struct FlowUnderTest {
  ad::ParamStore store;
  std::unique_ptr<flows::IndexedFlow> flow;
  std::unique_ptr<flows::BoundFlow> bound;
  FlowUnderTest(const std::string& type, std::size_t d, std::uint64_t seed) {
    flows::FlowConfig c;
    c.type = type;
    c.dim = d;
    c.context_dim = 2;
    c.blocks = type == "anode" ? 2 : 3;
    c.hidden = {16, 16};
    c.core_hidden = {8, 8};
    c.rk4_steps = 16;
    c.time_scale = 0.1;
    c.zero_init = false;
    std::mt19937_64 rng(seed);
    flow = flows::make_flow(c, store, "flow", rng);
    bound = flow->bind(ad::ParamView(store, nullptr));
  }
};

Outcome criterion4() {
  Outcome out;
  std::ostringstream detail;
  bool ok = true;
  std::mt19937_64 gen(401);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> time(0.0, 30.0);
  for (const std::string type : {"anode", "affine"}) {
    const double rt_tol = type == "anode" ? kAnodeRoundTrip : kAffineRoundTrip;
    double worst_rt = 0.0, worst_ld = 0.0;
    for (std::size_t d : {1u, 2u, 3u}) {
      FlowUnderTest f(type, d, 410 + d);
      for (std::size_t i = 0; i < 100; ++i) {
        Matrix o(1, d), z(1, 2);
        for (double& v : o.values()) v = normal(gen);
        for (double& v : z.values()) v = normal(gen);
        const Tensor t = Tensor::scalar(time(gen));
        const auto fwd = f.bound->forward(Tensor(o), Tensor(z), t);
        const auto back = f.bound->inverse(fwd.value, Tensor(z), t);
        for (std::size_t j = 0; j < d; ++j) {
          worst_rt = std::max(worst_rt, std::abs(back.value(0, j) - o[j]));
        }
        if (i % 10 == 0) {
          std::vector<double> jac(d * d);
          const double h = 1e-5;
          for (std::size_t j = 0; j < d; ++j) {
            Matrix op = o, om = o;
            op[j] += h;
            om[j] -= h;
            const Matrix xp = f.bound->forward(Tensor(op), Tensor(z), t).value.value();
            const Matrix xm = f.bound->forward(Tensor(om), Tensor(z), t).value.value();
            for (std::size_t r = 0; r < d; ++r) jac[r * d + j] = (xp[r] - xm[r]) / (2.0 * h);
          }
          const double fd = log_abs_det(jac, d);
          const double ld = fwd.logdet.item();
          worst_ld = std::max(worst_ld, std::abs(ld - fd) / std::max(std::abs(fd), 1e-3));
          out.fingerprint.push_back(ld);
        }
        out.fingerprint.push_back(fwd.value(0, 0));
      }
    }
    // Density of x = F(o; z, t) with o ~ N(0, 1), integrated over x.
    double worst_quad = 0.0;
    FlowUnderTest f1(type, 1, 430);
    for (std::size_t rep = 0; rep < 3; ++rep) {
      Matrix z(1, 2);
      for (double& v : z.values()) v = normal(gen);
      const Tensor t = Tensor::scalar(time(gen));
      const double lo = f1.bound->forward(Tensor::scalar(-9.0), Tensor(z), t).value.item();
      const double hi = f1.bound->forward(Tensor::scalar(9.0), Tensor(z), t).value.item();
      const std::size_t n = 4000;
      const double a = std::min(lo, hi), width = (std::max(lo, hi) - a) / static_cast<double>(n);
      Matrix xs(n, 1);
      for (std::size_t i = 0; i < n; ++i) xs(i, 0) = a + (static_cast<double>(i) + 0.5) * width;
      const auto inv = f1.bound->inverse(Tensor(xs), Tensor(z), t);
      double mass = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        mass += std::exp(gaussian_logpdf(inv.value(i, 0), 0.0, 1.0) + inv.logdet(i, 0)) * width;
      }
      worst_quad = std::max(worst_quad, std::abs(mass - 1.0));
      ok = ok && mass >= kQuadLo && mass <= kQuadHi;
      out.fingerprint.push_back(mass);
    }
    ok = ok && worst_rt <= rt_tol && worst_ld <= kLogdetRelTol;
    detail << type << ": round trip " << fmt("%.2e", worst_rt) << " (tol " << fmt("%.0e", rt_tol)
           << "), logdet rel " << fmt("%.2e", worst_ld) << ", |mass-1| " << fmt("%.2e", worst_quad)
           << "; ";
  }
  out.pass = ok;
  out.detail = detail.str();
  return out;
}

// ------------------------------------------------------------------ 5. GBM oracle

Outcome criterion5() {
  auto oracle = [](double lambda) {
    DatasetSpec spec;
    spec.process = "gbm";
    spec.n_sequences = 2000;
    spec.lambda = lambda;
    spec.horizon = 30.0;
    spec.seed = lambda == 2.0 ? 501 : 502;
    return train::gbm_oracle_nll(generate_dataset(spec));
  };
  const double a = oracle(2.0), b = oracle(20.0);
  Outcome out;
  out.fingerprint = {a, b};
  out.pass = a - b >= kLambdaGapLo && a - b <= kLambdaGapHi;
  out.detail = "oracle NLL lambda=2 " + fmt("%.4f", a) + ", lambda=20 " + fmt("%.4f", b) +
               ", difference " + fmt("%.4f", a - b) + " in [" + fmt("%.2f", kLambdaGapLo) + ", " +
               fmt("%.2f", kLambdaGapHi) + "] (1/2 ln 10 = " + fmt("%.3f", 0.5 * std::log(10.0)) + ")";
  return out;
}

// ------------------------------------------------------------------ 6. GBM desk training

// Desk-scale settings shared by the training criteria.
train::TrainConfig desk_config(const fs::path& dir) {
  train::TrainConfig c;
  c.variant = "CLPF";
  c.latent_dim = 2;
  c.k_train = 3;
  c.k_val = 5;
  c.k_test = 125;
  c.em_step = 0.05;
  c.flow = "affine";
  c.lr = 5e-3;
  c.lr_schedule = "cosine";
  c.lr_min = 1e-4;
  c.batch_size = 25;
  c.checkpoint = (dir / "model.ckpt").string();
  return c;
}

constexpr std::size_t kGbmTrain = 1000;
constexpr std::size_t kGbmVal = 100;
constexpr std::size_t kGbmTest = 150;
constexpr std::size_t kGbmEpochs = 24;

Outcome criterion6() {
  const fs::path dir = work_dir("c6");
  auto make = [&](std::size_t n, std::uint64_t seed, const std::string& name) {
    DatasetSpec spec;
    spec.process = "gbm";
    spec.n_sequences = n;
    spec.seed = seed;
    const fs::path p = dir / name;
    save_dataset(p, generate_dataset(spec));
    return p.string();
  };
  train::TrainConfig cfg = desk_config(dir);
  cfg.dataset = make(kGbmTrain, 601, "train.jsonl");
  cfg.val_dataset = make(kGbmVal, 602, "val.jsonl");
  cfg.test_dataset = make(kGbmTest, 603, "test.jsonl");
  cfg.epochs = kGbmEpochs;
  const DatasetFile test = load_dataset(cfg.test_dataset);
  const std::uint64_t eval_seed = 604;

  std::ofstream log(dir / "train.log");
  double init_nll = 0.0;
  {
    const model::ClpfModel init(train::make_model_config(cfg, load_dataset(cfg.dataset)), cfg.seed);
    init_nll = train::evaluate_nll(init, test.series, cfg.k_test, eval_seed).nll;
  }
  const train::TrainResult r = train::train(cfg, &log);
  const model::ClpfModel best = model::load_model(cfg.checkpoint);
  const train::EvalResult ev = train::evaluate_nll(best, test.series, cfg.k_test, eval_seed);
  const double oracle = train::gbm_oracle_nll(test);

  Outcome out;
  out.pass = ev.nll - oracle <= kOracleGap && init_nll - ev.nll >= kMinImprovement;
  out.detail = "test IWAE-125 NLL " + fmt("%.4f", ev.nll) + " +- " + fmt("%.4f", ev.se) +
               ", oracle " + fmt("%.4f", oracle) + " (gap " + fmt("%.4f", ev.nll - oracle) +
               ", tol " + fmt("%.1f", kOracleGap) + "), init " + fmt("%.4f", init_nll) +
               " (improvement " + fmt("%.4f", init_nll - ev.nll) + ", need " +
               fmt("%.1f", kMinImprovement) + "), best epoch " + std::to_string(r.best_epoch) +
               "/" + std::to_string(cfg.epochs);
  return out;
}

// ------------------------------------------------------------------ 7. CAR ablation

constexpr std::size_t kCarTrain = 300;
constexpr std::size_t kCarVal = 50;
constexpr std::size_t kCarTest = 100;
constexpr std::size_t kCarEpochs = 10;

Outcome criterion7() {
  const fs::path dir = work_dir("c7");
  auto make = [&](std::size_t n, std::uint64_t seed, const std::string& name) {
    DatasetSpec spec;
    spec.process = "car";
    spec.n_sequences = n;
    spec.seed = seed;
    const fs::path p = dir / name;
    save_dataset(p, generate_dataset(spec));
    return p.string();
  };
  train::AblationSpec spec;
  spec.datasets = {{"car", make(kCarTrain, 701, "train.jsonl"), make(kCarVal, 702, "val.jsonl"),
                    make(kCarTest, 703, "test.jsonl")}};
  spec.variants = {"CLPF", "CLPF-Independent"};
  spec.seeds = {0, 1, 2};
  spec.base = desk_config(dir);
  spec.base.dataset = spec.datasets[0].train;
  spec.base.epochs = kCarEpochs;
  spec.out_dir = (dir / "ckpt").string();
  std::ofstream log(dir / "ablation.log");
  const train::MetricsTable table = train::run_ablation(spec, &log);
  table.write_csv(dir / "ablation.csv");
  const double clpf = table.mean_nll("car", "CLPF");
  const double indep = table.mean_nll("car", "CLPF-Independent");
  Outcome out;
  out.pass = indep - clpf >= kAblationGap;
  out.detail = "mean test NLL over 3 seeds: CLPF " + fmt("%.4f", clpf) + ", CLPF-Independent " +
               fmt("%.4f", indep) + " (gap " + fmt("%.4f", indep - clpf) + ", need " +
               fmt("%.1f", kAblationGap) + ")";
  return out;
}

// ------------------------------------------------------------------ 8. IWAE monotonicity

Outcome criterion8() {
  const fs::path dir = work_dir("c8");
  DatasetSpec spec;
  spec.process = "gbm";
  spec.n_sequences = 60;
  spec.horizon = 10.0;
  spec.seed = 801;
  DatasetFile data = generate_dataset(spec);
  save_dataset(dir / "train.jsonl", data);
  train::TrainConfig cfg = desk_config(dir);
  cfg.dataset = (dir / "train.jsonl").string();
  cfg.context_dim = 8;
  cfg.encoder_hidden = 8;
  cfg.drift_hidden = {16, 16};
  cfg.flow_hidden = {16, 16};
  cfg.epochs = 4;
  cfg.batch_size = 10;
  train::train(cfg);
  const model::ClpfModel m = model::load_model(cfg.checkpoint);

  const std::vector<TimeSeries> eval(data.series.begin(), data.series.begin() + 4);
  const std::vector<std::size_t> ks = {1, 5, 25};
  std::vector<Moments> mom;
  Outcome out;
  for (std::size_t k : ks) {
    std::vector<double> v;
    for (std::uint64_t seed = 0; seed < 60; ++seed) {
      double total = 0.0;
      for (std::size_t i = 0; i < eval.size(); ++i) {
        total += bound(m, eval[i], k, 10000 * k + 100 * seed + i, true);
      }
      v.push_back(total);
    }
    mom.push_back(moments(v));
    out.fingerprint.push_back(mom.back().mean);
  }
  bool ok = true;
  std::ostringstream detail;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    detail << "K=" << ks[i] << " " << fmt("%.4f", mom[i].mean) << " +- " << fmt("%.4f", mom[i].se)
           << (i + 1 < ks.size() ? ", " : "");
    if (i > 0) {
      ok = ok && mom[i - 1].mean <= mom[i].mean + kIwaeSeMultiple * std::hypot(mom[i - 1].se, mom[i].se);
    }
  }
  detail << " over 60 seeds";
  out.pass = ok;
  out.detail = detail.str();
  return out;
}

// ------------------------------------------------------------------ 9. CLI pipeline

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string first_line(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  return line;
}

struct PipelineRun {
  bool ok = true;
  std::string failure;
  std::vector<double> fingerprint;
};

PipelineRun run_pipeline(const fs::path& dir) {
  PipelineRun run;
  const std::vector<std::pair<std::string, std::string>> steps = {
      {"generate-train", "generate --process gbm --n 50 --seed 7 --out train.jsonl"},
      {"generate-val", "generate --process gbm --n 10 --seed 8 --out val.jsonl"},
      {"train", "train --dataset train.jsonl --val val.jsonl --epochs 1 --seed 3 --checkpoint model.ckpt --set k_val=5"},
      {"evaluate", "evaluate --checkpoint model.ckpt --dataset val.jsonl --k 25 --seed 4 --csv eval.csv"},
      {"sample", "sample --checkpoint model.ckpt --dense-step 0.01 --horizon 30 --n 2 --seed 5 --out sample.jsonl"},
      {"predict", "predict --checkpoint model.ckpt --dataset val.jsonl --samples 25 --max-sequences 3 --seed 6 --out predict.csv"},
  };
  for (const auto& [name, args] : steps) {
    const std::string cmd = "cd '" + dir.string() + "' && '" + fs::absolute(CLPF_CLI_PATH).string() +
                            "' " + args + " > " + name + ".log 2>&1";
    const int rc = std::system(cmd.c_str());
    if (rc != 0) {
      run.ok = false;
      run.failure = name + " exited with status " + std::to_string(rc);
      return run;
    }
  }
  try {
    const DatasetFile tr = load_dataset(dir / "train.jsonl");
    const DatasetFile sm = load_dataset(dir / "sample.jsonl");
    model::load_model(dir / "model.ckpt");
    auto require = [&](bool cond, const std::string& what) {
      if (!cond && run.ok) {
        run.ok = false;
        run.failure = what;
      }
    };
    require(tr.series.size() == 50, "train.jsonl does not hold 50 sequences");
    require(sm.series.size() == 2 && sm.series[0].size() == 3000, "dense samples are not 3000 points");
    require(first_line(dir / "sample_0.csv") == "t,x1", "plot CSV header");
    require(first_line(dir / "eval.csv") == train::MetricsTable::kCsvHeader, "metrics CSV header");
    require(first_line(dir / "predict.csv") == "sequence,index,t,l2,pred1,true1", "prediction CSV header");
    require(first_line(dir / "model.ckpt.curve.csv") == "epoch,train_loss,val_nll,seconds", "curve CSV header");
    for (const auto& s : sm.series) {
      for (double v : s.values.values()) run.fingerprint.push_back(v);
    }
    for (const char* f : {"train.jsonl", "val.jsonl", "model.ckpt", "sample.jsonl", "sample_0.csv",
                          "sample_1.csv", "predict.csv"}) {
      const std::string bytes = read_file(dir / f);
      run.fingerprint.push_back(static_cast<double>(std::hash<std::string>{}(bytes) >> 12));
    }
    std::ifstream csv(dir / "eval.csv");
    std::string header, row;
    std::getline(csv, header);
    std::getline(csv, row);
    // nll and se; the wall-clock column is excluded.
    std::stringstream cells(row);
    std::string cell;
    for (int c = 0; std::getline(cells, cell, ','); ++c) {
      if (c == 3 || c == 4) run.fingerprint.push_back(std::stod(cell));
    }
  } catch (const std::exception& e) {
    run.ok = false;
    run.failure = std::string("output validation: ") + e.what();
  }
  return run;
}

Outcome criterion9() {
  const auto start = Clock::now();
  const PipelineRun run = run_pipeline(work_dir("c9"));
  const double secs = elapsed(start);
  Outcome out;
  out.pass = run.ok && secs < 300.0;
  out.fingerprint = run.fingerprint;
  out.detail = run.ok ? "generate, train, evaluate, sample, predict succeeded; outputs valid; " +
                            fmt("%.1f", secs) + " s (limit 300 s)"
                      : run.failure;
  return out;
}

// ------------------------------------------------------------------ 10. determinism

Outcome criterion10() {
  const std::vector<std::pair<int, std::function<Outcome()>>> runs = {
      {1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4}, {5, criterion5}};
  Outcome out;
  out.pass = true;
  std::ostringstream detail;
  for (const auto& [id, fn] : runs) {
    const Outcome a = fn();
    const Outcome b = fn();
    const bool same = !a.fingerprint.empty() && a.fingerprint == b.fingerprint;
    out.pass = out.pass && same;
    detail << id << ":" << (same ? "identical" : "DIFFERENT") << "(" << a.fingerprint.size() << ") ";
  }
  // The pipeline is repeated with a different worker count.
  const PipelineRun first = run_pipeline(work_dir("c10a"));
  setenv("CLPF_THREADS", "3", 1);
  const PipelineRun second = run_pipeline(work_dir("c10b"));
  unsetenv("CLPF_THREADS");
  const bool same = first.ok && second.ok && first.fingerprint == second.fingerprint;
  out.pass = out.pass && same;
  detail << "9:" << (same ? "identical" : "DIFFERENT") << "(" << first.fingerprint.size()
         << ", threads 1 vs 3)";
  out.detail = detail.str();
  return out;
}

struct Criterion {
  int id;
  const char* name;
  double limit_s;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "gradient correctness", 60.0, criterion1},
      {2, "exact-model identity", 1.0, criterion2},
      {3, "Girsanov suite", 120.0, criterion3},
      {4, "flow suite", 300.0, criterion4},
      {5, "GBM oracle lambda difference", 120.0, criterion5},
      {6, "desk-scale GBM training", 3600.0, criterion6},
      {7, "CAR ablation trend", 10800.0, criterion7},
      {8, "IWAE monotonicity", 600.0, criterion8},
      {9, "CLI pipeline", 300.0, criterion9},
      {10, "determinism", 0.0, criterion10},
  };
  std::vector<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.push_back(std::atoi(argv[i]));
  if (wanted.empty()) {
    for (const auto& c : all) wanted.push_back(c.id);
  }
  bool all_pass = true;
  for (int id : wanted) {
    const auto it = std::find_if(all.begin(), all.end(), [&](const Criterion& c) { return c.id == id; });
    if (it == all.end()) {
      std::cerr << "unknown criterion " << id << "\n";
      return 2;
    }
    const auto start = Clock::now();
    Outcome o;
    try {
      o = it->run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = elapsed(start);
    const bool in_time = it->limit_s <= 0.0 || secs <= it->limit_s;
    const bool pass = o.pass && in_time;
    all_pass = all_pass && pass;
    std::printf("%s criterion %d (%s): %s [%.1f s%s]\n", pass ? "PASS" : "FAIL", id, it->name,
                o.detail.c_str(), secs,
                in_time ? "" : (", over limit " + fmt("%.0f", it->limit_s) + " s").c_str());
    std::fflush(stdout);
  }
  return all_pass ? 0 : 1;
}
