#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "flood/tensor.hpp"

namespace flood {

// Scalar-valued function of tensors it captures; evaluated once on a
// recording graph for the analytic gradient and repeatedly on non-recording
// graphs for central differences.
template <typename T>
using ScalarFn = std::function<Tensor<T>(Graph<T>&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_tensor = 0;
  Index worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  Index coordinates_checked = 0;
};

// Relative discrepancy |a - n| / max(|a|, |n|, scale_floor). The floor keeps
// coordinates whose true gradient is ~0 from dividing by noise.
double relative_error(double analytic, double numeric, double scale_floor);

// Compares backward() against (f(x+h e) - f(x-h e)) / 2h for every coordinate
// of every input (or a seeded sample of at most `max_coords` per tensor when
// max_coords > 0). Inputs are marked requires_grad; their grads are reset.
template <typename T>
GradCheckResult gradient_check(const ScalarFn<T>& f, std::vector<Tensor<T>> inputs, double h,
                               Index max_coords = 0, double scale_floor = 1e-3, std::uint64_t seed = 0);

// Single-input convenience form; returns the max relative error.
template <typename T>
double finite_diff_check(const ScalarFn<T>& f, Tensor<T>& x, double h, double scale_floor = 1e-3) {
  return gradient_check<T>(f, {x}, h, 0, scale_floor).max_rel_error;
}

}  // namespace flood
