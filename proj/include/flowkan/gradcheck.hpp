#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "flowkan/tensor.hpp"

namespace flowkan {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // parameter with the largest error
  std::size_t entries_checked = 0;
};

struct GradCheckOptions {
  double step = 1e-4;
  /// 0 checks every entry; otherwise a seeded random subset per tensor.
  std::size_t max_entries_per_tensor = 0;
  std::uint64_t seed = 0;
  /// Floor of the norm used to scale the error, so vanishing gradients compare absolutely.
  double floor = 1e-8;
};

/// Compares tape gradients of `loss_fn` against central differences. The
/// error per tensor is ||g_tape - g_fd|| / max(||g_tape||, ||g_fd||, floor)
/// over the checked entries.
GradCheckResult gradient_check(const std::function<Tensor<double>()>& loss_fn, const ParamList<double>& params,
                               const GradCheckOptions& opt = {});

}  // namespace flowkan
