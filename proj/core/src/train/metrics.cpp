#include "clpf/train/metrics.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <stdexcept>

namespace clpf::train {

double MetricsTable::mean_nll(const std::string& dataset, const std::string& variant) const {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& r : rows_) {
    if (r.dataset == dataset && r.variant == variant) {
      s += r.nll;
      ++n;
    }
  }
  if (n == 0) throw std::out_of_range("no metrics for " + dataset + " / " + variant);
  return s / static_cast<double>(n);
}

void MetricsTable::write_csv(std::ostream& out) const {
  out << kCsvHeader << "\n";
  char buf[256];
  for (const auto& r : rows_) {
    std::snprintf(buf, sizeof buf, "%llu,%.10g,%.10g,%.6g,%.6g",
                  static_cast<unsigned long long>(r.seed), r.nll, r.se, r.wall_clock_s,
                  r.clip_rate);
    out << r.dataset << "," << r.variant << "," << buf << "\n";
  }
}

void MetricsTable::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_csv(out);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void MetricsTable::print(std::ostream& out) const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-14s %-18s %6s %10s %9s %10s %9s\n", "dataset", "variant",
                "seed", "nll", "se", "wall_s", "clip");
  out << buf;
  std::map<std::pair<std::string, std::string>, std::pair<double, std::size_t>> cells;
  std::vector<std::pair<std::string, std::string>> order;
  for (const auto& r : rows_) {
    std::snprintf(buf, sizeof buf, "%-14s %-18s %6llu %10.4f %9.4f %10.1f %9.2e\n",
                  r.dataset.c_str(), r.variant.c_str(), static_cast<unsigned long long>(r.seed),
                  r.nll, r.se, r.wall_clock_s, r.clip_rate);
    out << buf;
    const auto key = std::make_pair(r.dataset, r.variant);
    if (!cells.count(key)) order.push_back(key);
    cells[key].first += r.nll;
    cells[key].second += 1;
  }
  for (const auto& key : order) {
    const auto& [sum, n] = cells[key];
    if (n < 2) continue;
    std::snprintf(buf, sizeof buf, "%-14s %-18s %6s %10.4f\n", key.first.c_str(),
                  key.second.c_str(), "mean", sum / static_cast<double>(n));
    out << buf;
  }
}

}  // namespace clpf::train
