#pragma once

#include <cmath>
#include <vector>

#include "flowkan/gradcheck.hpp"
#include "flowkan/ops.hpp"
#include "flowkan/random.hpp"
#include "flowkan/tensor.hpp"

namespace fk = flowkan;

using TD = fk::Tensor<double>;

inline TD randn(fk::Shape shape, fk::Rng& rng, double stddev = 1.0, bool grad = true) {
  return fk::normal_tensor<double>(std::move(shape), stddev, rng, grad);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_rel_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), 1e-300});
    m = std::max(m, std::abs(a[i] - b[i]) / scale);
  }
  return m;
}

template <class F>
double gradcheck(F&& f, const fk::ParamList<double>& params, std::size_t max_entries = 0) {
  fk::GradCheckOptions opt;
  opt.max_entries_per_tensor = max_entries;
  return fk::gradient_check(std::forward<F>(f), params, opt).max_rel_error;
}
