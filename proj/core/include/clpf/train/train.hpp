#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "clpf/model/model.hpp"
#include "clpf/processes/datasets.hpp"
#include "clpf/train/config.hpp"
#include "clpf/train/metrics.hpp"

namespace clpf::train {

/// Non-finite loss or gradient during training; the message names the step and sequence.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Worker count from CLPF_THREADS (default: hardware concurrency, at least 1).
std::size_t thread_count();

/// Runs fn(i) for i in [0, n) on up to `threads` threads. Exceptions are
/// rethrown on the caller, the one with the lowest index first.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

struct EvalResult {
  /// Mean over sequences of −bound / n_obs.
  double nll = 0.0;
  double se = 0.0;
  std::vector<double> per_sequence;
  double clip_rate = 0.0;
  double wall_clock_s = 0.0;
};

/// IWAE(K) evaluation. Sequence i uses Rng(seed).split(i), so the result is a
/// pure function of (model, data, K, seed) for any thread count.
EvalResult evaluate_nll(const model::ClpfModel& model, const std::vector<TimeSeries>& data,
                        std::size_t k, std::uint64_t seed, std::size_t threads = 0);

/// Exact per-observation NLL of a GBM dataset under its generating parameters.
double gbm_oracle_nll(const DatasetFile& data);
/// Per-sequence values of the same quantity.
std::vector<double> gbm_oracle_per_sequence(const DatasetFile& data);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_nll = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  double initial_val_nll = 0.0;
  double best_val_nll = 0.0;
  std::size_t best_epoch = 0;
  std::size_t steps = 0;
  std::vector<EpochRecord> curve;
  std::string checkpoint;
};

/// Minimises −IWAE(k_train)/n_obs with Adam over shuffled minibatches and keeps
/// the checkpoint with the best validation IWAE(k_val). Without a validation
/// set the last epoch is kept. Progress lines go to `log` when non-null.
TrainResult train(const TrainConfig& cfg, std::ostream* log = nullptr);

/// Same loop on in-memory data and an initialised model (used by `train`).
TrainResult train_model(model::ClpfModel& model, const TrainConfig& cfg,
                        const std::vector<TimeSeries>& train_data,
                        const std::vector<TimeSeries>& val_data, std::ostream* log = nullptr);

struct Prediction {
  /// One row per predicted observation i ≥ 2.
  Matrix mean;
  std::vector<double> l2;
};

/// For each i ≥ 2: filter x_{t_1..t_{i−1}} with S posterior particles, continue
/// each under the prior over [t_{i−1}, t_i], decode and average.
Prediction sequential_predict(const model::ClpfModel& model, const TimeSeries& series,
                              std::size_t samples, Rng& rng);

struct PredictionSummary {
  double mean_l2 = 0.0;
  double p25 = 0.0;
  double p75 = 0.0;
  std::size_t count = 0;
};

PredictionSummary summarize_l2(const std::vector<double>& l2);

struct DatasetSplit {
  std::string name;
  std::string train;
  std::string val;
  std::string test;
};

struct AblationSpec {
  std::vector<DatasetSplit> datasets;
  std::vector<std::string> variants;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  TrainConfig base;
  /// Checkpoints are written here as <dataset>_<variant>_<seed>.ckpt.
  std::string out_dir = ".";
};

/// Trains and evaluates every (dataset, variant, seed) cell on the test split with k_test.
MetricsTable run_ablation(const AblationSpec& spec, std::ostream* log = nullptr);

}  // namespace clpf::train
