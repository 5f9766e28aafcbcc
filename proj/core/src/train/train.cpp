#include "clpf/train/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>
#include <thread>

#include "clpf/flows/flow.hpp"
#include "clpf/processes/sde.hpp"

namespace clpf::train {

using model::ClpfModel;
using model::ModelPass;
using ad::Tensor;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::size_t resolve_threads(std::size_t threads) { return threads == 0 ? thread_count() : threads; }

std::vector<TimeSeries> load_series(const std::string& path, std::size_t max_sequences) {
  if (path.empty()) return {};
  DatasetFile f = load_dataset(path);
  if (max_sequences > 0 && f.series.size() > max_sequences) f.series.resize(max_sequences);
  return std::move(f.series);
}

Tensor expand_rows(const Tensor& x, std::size_t rows) {
  return x.rows() == rows ? x : ad::broadcast(x, rows, x.cols());
}

Tensor row_of(const Matrix& values, std::size_t i) { return Tensor(Matrix::row(values.row_span(i))); }

void save_atomically(const std::filesystem::path& path, const ClpfModel& model,
                     const nlohmann::ordered_json& extra) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  model::save_model(tmp, model, extra);
  std::filesystem::rename(tmp, path);
}

constexpr std::uint64_t kValidationStream = 0x76616cULL;
constexpr std::uint64_t kTrainStream = 0x747261ULL;
constexpr std::uint64_t kShuffleStream = 0x736875ULL;
constexpr std::uint64_t kNoiseStream = 0x6e6f69ULL;

}  // namespace

std::size_t thread_count() {
  if (const char* env = std::getenv("CLPF_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::min(std::max<std::size_t>(threads, 1), n);
  std::vector<std::exception_ptr> errors(n);
  auto work = [&](std::size_t w) {
    for (std::size_t i = w; i < n; i += threads) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (threads <= 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// ---------------------------------------------------------------------------

EvalResult evaluate_nll(const ClpfModel& model, const std::vector<TimeSeries>& data, std::size_t k,
                        std::uint64_t seed, std::size_t threads) {
  if (data.empty()) throw std::invalid_argument("evaluate_nll: no sequences");
  const auto start = Clock::now();
  EvalResult r;
  r.per_sequence.assign(data.size(), 0.0);
  std::vector<std::size_t> clips(data.size(), 0), entries(data.size(), 0);
  const Rng base(seed);
  parallel_for(data.size(), resolve_threads(threads), [&](std::size_t i) {
    const ad::ParamView p(model.params(), nullptr);
    const ModelPass pass(model, p);
    Rng rng = base.split(i);
    const auto est = pass.iwae(data[i], k, rng);
    r.per_sequence[i] = -est.total.item() / static_cast<double>(data[i].size());
    clips[i] = est.clip_events;
    entries[i] = est.u_entries;
  });
  const double n = static_cast<double>(data.size());
  r.nll = std::accumulate(r.per_sequence.begin(), r.per_sequence.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : r.per_sequence) ss += (v - r.nll) * (v - r.nll);
  r.se = data.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
  const double total_entries = static_cast<double>(std::accumulate(entries.begin(), entries.end(), std::size_t{0}));
  const double total_clips = static_cast<double>(std::accumulate(clips.begin(), clips.end(), std::size_t{0}));
  r.clip_rate = total_entries > 0 ? total_clips / total_entries : 0.0;
  r.wall_clock_s = seconds_since(start);
  return r;
}

std::vector<double> gbm_oracle_per_sequence(const DatasetFile& data) {
  const auto& h = data.header;
  if (!h.contains("process") || h["process"].get<std::string>() != "gbm") {
    throw std::invalid_argument("gbm_oracle_nll: dataset was not generated by the GBM process");
  }
  Json params = default_process_params(ProcessKind::kGbm);
  if (h.contains("params")) {
    for (const auto& [key, value] : h["params"].items()) params[key] = value;
  }
  const double mu = params["mu"].get<double>();
  const double sigma = params["sigma"].get<double>();
  const double x0 = params["x0"].get<double>();
  std::vector<double> out;
  out.reserve(data.series.size());
  for (const auto& s : data.series) {
    if (s.dim() != 1) throw std::invalid_argument("gbm_oracle_nll: GBM series must be 1-dimensional");
    double ll = gbm_exact_logpdf(x0, s.values(0, 0), s.time(0), mu, sigma);
    for (std::size_t i = 1; i < s.size(); ++i) {
      ll += gbm_exact_logpdf(s.values(i - 1, 0), s.values(i, 0), s.time(i) - s.time(i - 1), mu,
                             sigma);
    }
    out.push_back(-ll / static_cast<double>(s.size()));
  }
  return out;
}

double gbm_oracle_nll(const DatasetFile& data) {
  const auto v = gbm_oracle_per_sequence(data);
  if (v.empty()) throw std::invalid_argument("gbm_oracle_nll: empty dataset");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// ---------------------------------------------------------------------------

TrainResult train_model(ClpfModel& model, const TrainConfig& cfg,
                        const std::vector<TimeSeries>& train_data,
                        const std::vector<TimeSeries>& val_data, std::ostream* log) {
  if (train_data.empty()) throw std::invalid_argument("train: no training sequences");
  const std::size_t threads = thread_count();
  const std::uint64_t val_seed = Rng::splitmix64(cfg.seed ^ kValidationStream);

  std::vector<TimeSeries> data = train_data;
  if (cfg.obs_noise > 0.0) {
    Rng noise = Rng(cfg.seed).split(kNoiseStream);
    for (auto& s : data) {
      for (double& v : s.values.values()) v += cfg.obs_noise * noise.normal();
    }
  }

  auto meta = [&](std::size_t epoch, double val) {
    nlohmann::ordered_json j;
    j["epoch"] = epoch;
    j["val_nll"] = std::isfinite(val) ? nlohmann::ordered_json(val) : nlohmann::ordered_json();
    j["seed"] = cfg.seed;
    j["train_config"] = cfg.to_text();
    return j;
  };

  TrainResult result;
  result.checkpoint = cfg.checkpoint;
  const bool has_val = !val_data.empty();
  result.initial_val_nll = has_val ? evaluate_nll(model, val_data, cfg.k_val, val_seed, threads).nll
                                   : std::numeric_limits<double>::quiet_NaN();
  result.best_val_nll = result.initial_val_nll;
  save_atomically(cfg.checkpoint, model, meta(0, result.initial_val_nll));
  if (log && has_val) *log << "epoch 0 val_nll " << result.initial_val_nll << "\n" << std::flush;

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle = Rng(cfg.seed).split(kShuffleStream);
  const Rng step_base = Rng(cfg.seed).split(kTrainStream);
  ad::AdamOptions adam;
  adam.lr = cfg.lr;
  const bool cosine = cfg.lr_schedule == "cosine";
  const std::size_t steps_per_epoch = (data.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = std::max<std::size_t>(1, steps_per_epoch * cfg.epochs);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = Clock::now();
    std::shuffle(order.begin(), order.end(), shuffle.engine());
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), b + cfg.batch_size);
      const std::size_t nb = end - b;
      std::vector<std::vector<Matrix>> grads(nb);
      std::vector<double> losses(nb, 0.0);
      const Rng step_rng = step_base.split(result.steps);
      parallel_for(nb, threads, [&](std::size_t j) {
        const std::size_t idx = order[b + j];
        const TimeSeries& s = data[idx];
        try {
          ad::Tape tape;
          const ad::ParamView p(model.params(), &tape);
          const ModelPass pass(model, p);
          Rng rng = step_rng.split(idx);
          const auto est = pass.iwae(s, cfg.k_train, rng);
          const Tensor loss = est.total * (-1.0 / static_cast<double>(s.size()));
          losses[j] = loss.item();
          if (!std::isfinite(losses[j])) throw ad::NumericError("non-finite loss");
          grads[j] = ad::parameter_gradients(model.params(), tape, tape.backward(loss));
          for (const auto& g : grads[j]) {
            if (!ad::all_finite(g)) throw ad::NumericError("non-finite gradient");
          }
        } catch (const std::exception& e) {
          throw TrainingError("training step " + std::to_string(result.steps) + ", sequence " +
                              std::to_string(idx) + ": " + e.what());
        }
      });
      std::vector<Matrix> total = model.params().zero_gradients();
      double batch_loss = 0.0;
      for (std::size_t j = 0; j < nb; ++j) {
        batch_loss += losses[j];
        for (std::size_t q = 0; q < total.size(); ++q) {
          auto dst = total[q].values();
          const auto src = grads[j][q].values();
          for (std::size_t e = 0; e < dst.size(); ++e) dst[e] += src[e];
        }
      }
      const double inv = 1.0 / static_cast<double>(nb);
      for (auto& g : total) {
        for (double& v : g.values()) v *= inv;
      }
      ad::clip_global_norm(total, cfg.clip_norm);
      if (cosine) {
        const double progress = static_cast<double>(result.steps) / static_cast<double>(total_steps);
        adam.lr = cfg.lr_min + 0.5 * (cfg.lr - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
      }
      ad::adam_step(model.params(), total, adam);
      loss_sum += batch_loss;
      ++result.steps;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(data.size());
    rec.val_nll = has_val ? evaluate_nll(model, val_data, cfg.k_val, val_seed, threads).nll
                          : std::numeric_limits<double>::quiet_NaN();
    rec.seconds = seconds_since(start);
    result.curve.push_back(rec);
    if (log) {
      *log << "epoch " << epoch << " train_loss " << rec.train_loss;
      if (has_val) *log << " val_nll " << rec.val_nll;
      *log << " (" << rec.seconds << " s)\n" << std::flush;
    }
    if (!has_val || rec.val_nll < result.best_val_nll) {
      result.best_val_nll = rec.val_nll;
      result.best_epoch = epoch;
      save_atomically(cfg.checkpoint, model, meta(epoch, rec.val_nll));
    }
  }
  return result;
}

TrainResult train(const TrainConfig& cfg, std::ostream* log) {
  cfg.validate();
  DatasetFile train_file = load_dataset(cfg.dataset);
  if (cfg.max_train_sequences > 0 && train_file.series.size() > cfg.max_train_sequences) {
    train_file.series.resize(cfg.max_train_sequences);
  }
  const std::vector<TimeSeries> val = load_series(cfg.val_dataset, cfg.max_val_sequences);
  ClpfModel model(make_model_config(cfg, train_file), cfg.seed);
  if (log) {
    *log << "model " << model.config().to_json().dump() << "\n"
         << "parameters " << model.params().scalar_count() << ", threads " << thread_count()
         << "\n";
  }
  return train_model(model, cfg, train_file.series, val, log);
}

// ---------------------------------------------------------------------------

namespace {

// Posterior particles after conditioning on a prefix of the series.
struct Filter {
  Tensor state;
  Tensor z;
  Tensor o;
  double t = 0.0;
};

class Predictor {
 public:
  Predictor(const ModelPass& pass, std::size_t samples) : pass_(pass), s_(samples) {
    const auto& cfg = pass.model().config();
    prior_ = [this](const Tensor& z, double t) { return pass_.prior_drift(z, t); };
    diff_ = [this](const Tensor& z, double t) { return pass_.diffusion(z, t); };
    encode_ = cfg.has_latent() && !cfg.tie_posterior;
  }

  Filter start() const {
    const auto& cfg = pass_.model().config();
    Filter f;
    f.z = cfg.has_latent() ? pass_.z0(s_) : Tensor::zeros(s_, cfg.latent_dim);
    if (encode_) f.state = pass_.initial_state(s_);
    return f;
  }

  Tensor global_context(const TimeSeries& s, std::size_t count) const {
    Tensor state = pass_.initial_state(1);
    Tensor ctx;
    double t_prev = 0.0;
    const Tensor z_none = Tensor::zeros(1, pass_.model().config().latent_dim);
    for (std::size_t i = 0; i < count; ++i) {
      const auto e = pass_.encode_step(state, row_of(s.values, i), z_none, s.time(i), t_prev);
      state = e.state;
      ctx = e.context;
      t_prev = s.time(i);
    }
    return ctx;
  }

  void observe(Filter& f, const Tensor& x, double t, const Tensor& phi_global, Rng& rng) const {
    const auto& cfg = pass_.model().config();
    const Tensor xm = pass_.to_model(x);
    if (cfg.has_latent()) {
      model::LatentField post;
      if (encode_) {
        Tensor phi = phi_global;
        if (!cfg.global_context()) {
          const auto e = pass_.encode_step(f.state, x, f.z, t, f.t);
          f.state = e.state;
          phi = e.context;
        }
        post = [this, phi, xm, t](const Tensor& z, double s) {
          return pass_.posterior_drift(z, s, phi, xm, t);
        };
      }
      f.z = model::solve_posterior_interval(post, prior_, diff_, f.z, f.t, t, rng,
                                            pass_.solve_options())
                .endpoint;
    }
    if (pass_.flow() != nullptr) {
      f.o = pass_.flow()->inverse(expand_rows(xm, s_), f.z, Tensor::scalar(t)).value;
    }
    f.t = t;
  }

  Matrix predict(const Filter& f, double t, Rng& rng) const {
    const auto& cfg = pass_.model().config();
    const std::size_t d = cfg.data_dim;
    Tensor z = f.z;
    if (cfg.has_latent()) {
      z = model::solve_prior_interval(prior_, diff_, f.z, f.t, t, rng, pass_.solve_options())
              .endpoint;
    }
    Matrix x;
    if (pass_.flow() != nullptr) {
      const double dt = std::max(t - f.t, kMinTransitionDt);
      const bool wiener = cfg.wiener_base();
      const double a = wiener ? 1.0 : std::exp(-dt);
      const double sd = wiener ? std::sqrt(dt) : std::sqrt(-std::expm1(-2.0 * dt));
      Matrix o = f.o.value();
      for (double& v : o.values()) v = a * v + sd * rng.normal();
      x = pass_.from_model(pass_.flow()->forward(Tensor(std::move(o)), z, Tensor::scalar(t)).value)
              .value();
    } else {
      const Tensor out = pass_.model().decoder_net().apply(pass_.view(), z);
      x = pass_.from_model(ad::slice_cols(out, 0, d)).value();
    }
    Matrix mean(1, d);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      for (std::size_t k = 0; k < d; ++k) mean[k] += x(r, k);
    }
    for (double& v : mean.values()) v /= static_cast<double>(x.rows());
    return mean;
  }

 private:
  const ModelPass& pass_;
  std::size_t s_;
  model::LatentField prior_;
  model::LatentField diff_;
  bool encode_ = false;
};

}  // namespace

Prediction sequential_predict(const ClpfModel& model, const TimeSeries& series,
                              std::size_t samples, Rng& rng) {
  if (series.size() < 2) throw std::invalid_argument("sequential_predict: need at least 2 observations");
  if (samples == 0) throw std::invalid_argument("sequential_predict: need at least 1 sample");
  const ad::ParamView p(model.params(), nullptr);
  const ModelPass pass(model, p);
  const Predictor pred(pass, samples);
  const auto& cfg = model.config();
  const bool global = cfg.has_latent() && !cfg.tie_posterior && cfg.global_context();
  const std::size_t n = series.size();
  const std::size_t d = series.dim();

  Prediction out;
  out.mean = Matrix(n - 1, d);
  auto record = [&](std::size_t i, const Matrix& m) {
    double ss = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      out.mean(i - 1, k) = m[k];
      const double r = m[k] - series.values(i, k);
      ss += r * r;
    }
    out.l2.push_back(std::sqrt(ss));
  };

  if (global) {
    // The context may only see the observed prefix, so each target refilters from scratch.
    for (std::size_t i = 1; i < n; ++i) {
      const Tensor phi = pred.global_context(series, i);
      Filter f = pred.start();
      for (std::size_t j = 0; j < i; ++j) pred.observe(f, row_of(series.values, j), series.time(j), phi, rng);
      record(i, pred.predict(f, series.time(i), rng));
    }
    return out;
  }
  Filter f = pred.start();
  for (std::size_t i = 1; i < n; ++i) {
    pred.observe(f, row_of(series.values, i - 1), series.time(i - 1), Tensor(), rng);
    record(i, pred.predict(f, series.time(i), rng));
  }
  return out;
}

PredictionSummary summarize_l2(const std::vector<double>& l2) {
  PredictionSummary s;
  s.count = l2.size();
  if (l2.empty()) return s;
  std::vector<double> v = l2;
  std::sort(v.begin(), v.end());
  s.mean_l2 = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  s.p25 = quantile(0.25);
  s.p75 = quantile(0.75);
  return s;
}

// ---------------------------------------------------------------------------

MetricsTable run_ablation(const AblationSpec& spec, std::ostream* log) {
  if (spec.datasets.empty() || spec.variants.empty() || spec.seeds.empty()) {
    throw std::invalid_argument("run_ablation: need datasets, variants and seeds");
  }
  for (const auto& v : spec.variants) model::parse_variant(v);
  std::filesystem::create_directories(spec.out_dir);
  MetricsTable table;
  for (const auto& split : spec.datasets) {
    DatasetFile train_file = load_dataset(split.train);
    if (spec.base.max_train_sequences > 0 && train_file.series.size() > spec.base.max_train_sequences) {
      train_file.series.resize(spec.base.max_train_sequences);
    }
    const auto val = load_series(split.val, spec.base.max_val_sequences);
    const auto test = load_series(split.test.empty() ? split.val : split.test, 0);
    if (test.empty()) throw std::invalid_argument("run_ablation: " + split.name + " has no test split");
    for (const auto& variant : spec.variants) {
      for (std::uint64_t seed : spec.seeds) {
        const auto start = Clock::now();
        TrainConfig cfg = spec.base;
        cfg.dataset = split.train;
        cfg.val_dataset = split.val;
        cfg.test_dataset = split.test;
        cfg.set("variant", variant);
        cfg.seed = seed;
        cfg.checkpoint = (std::filesystem::path(spec.out_dir) /
                          (split.name + "_" + cfg.variant + "_" + std::to_string(seed) + ".ckpt"))
                             .string();
        if (log) *log << "== " << split.name << " " << cfg.variant << " seed " << seed << "\n";
        {
          ClpfModel m(make_model_config(cfg, train_file), cfg.seed);
          train_model(m, cfg, train_file.series, val, log);
        }
        const ClpfModel best = model::load_model(cfg.checkpoint);
        const EvalResult ev = evaluate_nll(best, test, cfg.k_test, Rng::splitmix64(seed));
        MetricsRow row{split.name, cfg.variant, seed, ev.nll, ev.se, seconds_since(start), ev.clip_rate};
        if (log) *log << "   test nll " << ev.nll << " +- " << ev.se << "\n" << std::flush;
        table.add(std::move(row));
      }
    }
  }
  return table;
}

}  // namespace clpf::train
