#pragma once

#include <functional>
#include <span>
#include <vector>

namespace clpf::ad {

using ScalarFn = std::function<double(std::span<const double>)>;

/// Central differences (f(p + h e_i) − f(p − h e_i)) / 2h for every coordinate.
/// Throws NumericError if any evaluation is not finite.
std::vector<double> finite_diff_grad(const ScalarFn& f, std::span<const double> point, double h);

/// max_i |a_i − b_i| / max(|b_i|, floor)
double max_relative_error(std::span<const double> a, std::span<const double> b,
                          double floor = 1e-8);

}  // namespace clpf::ad
