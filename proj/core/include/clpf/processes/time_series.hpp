#pragma once

#include <cstddef>
#include <vector>

#include "clpf/autodiff/matrix.hpp"

namespace clpf {

/// Strictly increasing timestamps in (0, T].
class TimeGrid {
 public:
  TimeGrid() = default;
  TimeGrid(std::vector<double> times, double horizon);

  const std::vector<double>& times() const { return times_; }
  double horizon() const { return horizon_; }
  std::size_t size() const { return times_.size(); }
  double operator[](std::size_t i) const { return times_[i]; }

 private:
  std::vector<double> times_;
  double horizon_ = 0.0;
};

/// Observations x_{t_1..n}: one row of `values` per grid point.
struct TimeSeries {
  TimeSeries() = default;
  TimeSeries(TimeGrid grid, Matrix values);

  TimeGrid grid;
  Matrix values;

  std::size_t size() const { return grid.size(); }
  std::size_t dim() const { return values.cols(); }
  double time(std::size_t i) const { return grid[i]; }
};

}  // namespace clpf
