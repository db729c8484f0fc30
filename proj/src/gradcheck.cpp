#include "flood/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "flood/random.hpp"

namespace flood {

double relative_error(double analytic, double numeric, double scale_floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), scale_floor});
  return std::abs(analytic - numeric) / denom;
}

template <typename T>
GradCheckResult gradient_check(const ScalarFn<T>& f, std::vector<Tensor<T>> inputs, double h, Index max_coords,
                               double scale_floor, std::uint64_t seed) {
  if (!(h > 0.0)) throw InvalidArgument("gradient_check: h must be positive");
  for (auto& x : inputs) {
    x.set_requires_grad(true);
    x.zero_grad();
  }
  std::vector<std::vector<T>> analytic;
  {
    Graph<T> g(true);
    Tensor<T> loss = f(g);
    g.backward(loss);
    for (auto& x : inputs) analytic.push_back(x.grad());
  }
  auto eval = [&] {
    Graph<T> g(false);
    return static_cast<double>(f(g).item());
  };

  GradCheckResult result;
  Rng rng(seed);
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto values = inputs[t].data();
    const auto n = static_cast<Index>(values.size());
    std::vector<Index> coords(static_cast<std::size_t>(n));
    std::iota(coords.begin(), coords.end(), Index{0});
    if (max_coords > 0 && n > max_coords) {
      for (Index i = 0; i < max_coords; ++i) {
        const auto j = i + static_cast<Index>(rng.below(static_cast<std::uint64_t>(n - i)));
        std::swap(coords[static_cast<std::size_t>(i)], coords[static_cast<std::size_t>(j)]);
      }
      coords.resize(static_cast<std::size_t>(max_coords));
    }
    for (Index c : coords) {
      const T orig = values[static_cast<std::size_t>(c)];
      values[static_cast<std::size_t>(c)] = static_cast<T>(orig + h);
      const double fp = eval();
      values[static_cast<std::size_t>(c)] = static_cast<T>(orig - h);
      const double fm = eval();
      values[static_cast<std::size_t>(c)] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = static_cast<double>(analytic[t][static_cast<std::size_t>(c)]);
      const double err = relative_error(a, numeric, scale_floor);
      ++result.coordinates_checked;
      if (err > result.max_rel_error || result.coordinates_checked == 1) {
        result.max_rel_error = std::max(result.max_rel_error, err);
        if (err >= result.max_rel_error) {
          result.worst_tensor = t;
          result.worst_index = c;
          result.analytic = a;
          result.numeric = numeric;
        }
      }
    }
  }
  for (auto& x : inputs) x.zero_grad();
  return result;
}

template GradCheckResult gradient_check<float>(const ScalarFn<float>&, std::vector<Tensor<float>>, double, Index,
                                               double, std::uint64_t);
template GradCheckResult gradient_check<double>(const ScalarFn<double>&, std::vector<Tensor<double>>, double, Index,
                                                double, std::uint64_t);

}  // namespace flood
