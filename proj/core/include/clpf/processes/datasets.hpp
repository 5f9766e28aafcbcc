#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "clpf/processes/sde.hpp"

namespace clpf {

using Json = nlohmann::ordered_json;

enum class ProcessKind { kGbm, kLsde, kCar, kSlc };

ProcessKind parse_process(const std::string& name);
const char* process_name(ProcessKind kind);
/// Parameters used when the caller supplies none (missing keys are filled from these too).
Json default_process_params(ProcessKind kind);
/// Observation dimension of a process.
std::size_t process_dim(ProcessKind kind);
/// Default horizon: 2 for SLC, 30 otherwise.
double default_horizon(ProcessKind kind);

struct DatasetSpec {
  std::string process = "gbm";
  std::size_t n_sequences = 0;
  double lambda = 2.0;
  double horizon = 30.0;
  std::uint64_t seed = 0;
  /// Euler–Maruyama step for processes without exact transitions.
  double fine_step = 1e-4;
  /// Overrides merged over the process defaults.
  Json params = Json::object();
};

/// Ordered collection of series plus the metadata that regenerates it.
struct DatasetFile {
  Json header;
  std::vector<TimeSeries> series;

  std::size_t dim() const;
  std::size_t total_observations() const;
};

/// Sequence i is drawn from an Rng seeded with seed + i, so generation is
/// deterministic and independent of thread count.
DatasetFile generate_dataset(const DatasetSpec& spec);
/// Single sequence of a dataset: the same draw `generate_dataset` makes for index i.
TimeSeries generate_sequence(const DatasetSpec& spec, std::size_t index);

/// Advances `z` from t0 to t1 with Euler–Maruyama steps of size ≤ h.
void em_advance(const SdeSpec& sde, std::span<double> z, double t0, double t1, double h, Rng& rng);

/// Drift and diffusion of the simulated processes (GBM included, for reference).
SdeSpec process_sde(ProcessKind kind, const Json& params);

/// JSONL: header line, then {"t": [...], "x": [[...], ...]} per sequence.
void save_dataset(const std::filesystem::path& path, const DatasetFile& data);
DatasetFile load_dataset(const std::filesystem::path& path);

/// Header with the standard field order.
Json make_header(const std::string& process, const Json& params, double lambda, double horizon,
                 std::uint64_t seed, std::size_t dim, std::size_t n_sequences);

}  // namespace clpf
