#include "clpf/processes/time_series.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace clpf {

TimeGrid::TimeGrid(std::vector<double> times, double horizon)
    : times_(std::move(times)), horizon_(horizon) {
  if (times_.empty()) throw std::invalid_argument("TimeGrid: at least one timestamp required");
  if (!(horizon_ > 0.0) || !std::isfinite(horizon_)) {
    throw std::invalid_argument("TimeGrid: horizon must be positive and finite");
  }
  for (std::size_t i = 0; i < times_.size(); ++i) {
    const double t = times_[i];
    if (!(t > 0.0) || t > horizon_) {
      throw std::invalid_argument("TimeGrid: timestamp " + std::to_string(t) + " outside (0, " +
                                  std::to_string(horizon_) + "]");
    }
    if (i > 0 && !(t > times_[i - 1])) {
      throw std::invalid_argument("TimeGrid: timestamps must be strictly increasing (index " +
                                  std::to_string(i) + ")");
    }
  }
}

TimeSeries::TimeSeries(TimeGrid g, Matrix v) : grid(std::move(g)), values(std::move(v)) {
  if (values.rows() != grid.size()) {
    throw std::invalid_argument("TimeSeries: " + std::to_string(values.rows()) + " rows for " +
                                std::to_string(grid.size()) + " timestamps");
  }
  if (values.cols() == 0) throw std::invalid_argument("TimeSeries: zero-dimensional values");
  for (double x : values.values()) {
    if (!std::isfinite(x)) throw std::invalid_argument("TimeSeries: non-finite value");
  }
}

}  // namespace clpf
