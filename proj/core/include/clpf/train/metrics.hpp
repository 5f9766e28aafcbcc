#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace clpf::train {

struct MetricsRow {
  std::string dataset;
  std::string variant;
  std::uint64_t seed = 0;
  /// Negative bound per observation, averaged over sequences.
  double nll = 0.0;
  /// Standard error over sequences.
  double se = 0.0;
  double wall_clock_s = 0.0;
  /// Fraction of u entries that hit the clip.
  double clip_rate = 0.0;
};

class MetricsTable {
 public:
  static constexpr const char* kCsvHeader = "dataset,variant,seed,nll,se,wall_clock_s,clip_rate";

  void add(MetricsRow row) { rows_.push_back(std::move(row)); }
  const std::vector<MetricsRow>& rows() const { return rows_; }

  /// Mean NLL over seeds of one cell; throws std::out_of_range if the cell is empty.
  double mean_nll(const std::string& dataset, const std::string& variant) const;

  void write_csv(std::ostream& out) const;
  void write_csv(const std::filesystem::path& path) const;
  /// Aligned table, one line per row plus a mean line per cell with several seeds.
  void print(std::ostream& out) const;

 private:
  std::vector<MetricsRow> rows_;
};

}  // namespace clpf::train
