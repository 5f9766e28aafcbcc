#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "clpf/processes/datasets.hpp"

namespace clpf {

/// Regularly indexed sequences read from a CSV table.
struct IndexedTable {
  std::vector<std::string> ids;
  /// One matrix per sequence, rows in file order.
  std::vector<Matrix> sequences;
};

/// Rows are synchronous observations; column `id_column` names the sequence a
/// row belongs to and every other column is a value. Rows of one sequence must
/// be contiguous. Throws on ragged rows, non-numeric values or an empty table.
IndexedTable read_indexed_csv(const std::filesystem::path& path, std::size_t id_column = 0,
                              bool has_header = true);

struct IngestOptions {
  /// Indices are rescaled onto [0, length].
  double length = 30.0;
  double lambda = 2.0;
  std::uint64_t seed = 0;
  double shift = 0.2;
  /// Sequences are padded with their last row to this many indices (0: longest sequence).
  std::size_t pad_length = 0;
};

/// Index whose rescaled time j·length/n is nearest to t; ties go to the earlier index.
std::size_t nearest_index(double t, std::size_t n, double length);

/// Resamples each sequence on a Poisson(λ) grid over (0, length]: every stamp
/// takes the value of the nearest rescaled index, stamps mapping to an index
/// already used keep only the first, and all stamps are shifted by `shift`.
/// Sequence i draws its grid from Rng(seed + i).
DatasetFile ingest_table(const IndexedTable& table, const IngestOptions& opts);

}  // namespace clpf
