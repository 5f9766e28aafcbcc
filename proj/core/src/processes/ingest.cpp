#include "clpf/processes/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace clpf {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

IndexedTable read_indexed_csv(const std::filesystem::path& path, std::size_t id_column,
                              bool has_header) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  IndexedTable table;
  std::vector<std::vector<double>> rows;
  std::set<std::string> finished;
  std::size_t width = 0;
  std::string line;
  std::size_t lineno = 0;
  auto flush = [&]() {
    if (rows.empty()) return;
    Matrix m(rows.size(), rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      std::copy(rows[r].begin(), rows[r].end(), m.row_span(r).begin());
    }
    table.sequences.push_back(std::move(m));
    finished.insert(table.ids.back());
    rows.clear();
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (has_header && lineno == 1) continue;
    const auto cells = split_csv_line(line);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (width == 0) {
      width = cells.size();
      if (id_column >= width) throw std::runtime_error(where + ": id column out of range");
      if (width < 2) throw std::runtime_error(where + ": no value columns");
    }
    if (cells.size() != width) {
      throw std::runtime_error(where + ": ragged row (" + std::to_string(cells.size()) +
                               " columns, expected " + std::to_string(width) + ")");
    }
    const std::string& id = cells[id_column];
    if (table.ids.empty() || table.ids.back() != id) {
      flush();
      if (finished.count(id)) {
        throw std::runtime_error(where + ": rows of sequence '" + id + "' are not contiguous");
      }
      table.ids.push_back(id);
    }
    std::vector<double> values;
    for (std::size_t c = 0; c < width; ++c) {
      if (c == id_column) continue;
      std::size_t pos = 0;
      double v = 0.0;
      try {
        v = std::stod(cells[c], &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos == 0 || pos != cells[c].size() || !std::isfinite(v)) {
        throw std::runtime_error(where + ": column " + std::to_string(c + 1) +
                                 " is not a finite number: '" + cells[c] + "'");
      }
      values.push_back(v);
    }
    rows.push_back(std::move(values));
  }
  flush();
  if (table.sequences.empty()) throw std::runtime_error(path.string() + ": no data rows");
  return table;
}

std::size_t nearest_index(double t, std::size_t n, double length) {
  if (n == 0) throw std::invalid_argument("nearest_index: empty sequence");
  const double pos = t * static_cast<double>(n) / length;
  if (pos <= 0.0) return 0;
  const double lo = std::floor(pos);
  // Equidistant stamps resolve to the earlier index.
  auto j = static_cast<std::size_t>(pos - lo > 0.5 ? lo + 1.0 : lo);
  return std::min(j, n - 1);
}

DatasetFile ingest_table(const IndexedTable& table, const IngestOptions& opts) {
  if (!(opts.length > 0.0) || !(opts.lambda > 0.0) || opts.shift < 0.0) {
    throw std::invalid_argument("ingest: length and lambda must be positive, shift non-negative");
  }
  std::size_t pad = opts.pad_length;
  for (const auto& s : table.sequences) {
    if (s.rows() == 0) throw std::invalid_argument("ingest: empty sequence");
    if (opts.pad_length == 0) pad = std::max(pad, s.rows());
  }
  const std::size_t d = table.sequences.front().cols();
  DatasetFile out;
  Json params;
  params["length"] = opts.length;
  params["shift"] = opts.shift;
  params["pad_length"] = pad;
  out.header = make_header("ingest", params, opts.lambda, opts.length + opts.shift, opts.seed, d,
                           table.sequences.size());
  for (std::size_t i = 0; i < table.sequences.size(); ++i) {
    const Matrix& s = table.sequences[i];
    if (s.rows() > pad) {
      throw std::invalid_argument("ingest: sequence '" + table.ids[i] + "' is longer than pad length");
    }
    Rng rng(opts.seed + i);
    const TimeGrid grid = sample_poisson_grid(opts.lambda, opts.length, rng);
    std::vector<double> times;
    std::vector<double> values;
    std::set<std::size_t> used;
    for (double t : grid.times()) {
      const std::size_t j = nearest_index(t, pad, opts.length);
      if (!used.insert(j).second) continue;
      // Indices past the end of a short sequence hold its last row.
      const std::size_t src = std::min(j, s.rows() - 1);
      times.push_back(t + opts.shift);
      values.insert(values.end(), s.row_span(src).begin(), s.row_span(src).end());
    }
    const std::size_t rows = times.size();
    out.series.emplace_back(TimeGrid(std::move(times), opts.length + opts.shift),
                            Matrix(rows, d, std::move(values)));
  }
  return out;
}

}  // namespace clpf
