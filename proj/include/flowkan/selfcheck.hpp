#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowkan/backbone.hpp"

namespace flowkan::check {

struct CheckRow {
  std::string suite;
  double max_error = 0;
  double tolerance = 0;
  double seconds = 0;
  bool pass = false;
  std::string detail;
};

/// Tiny velocity network used by the gradient suites (T=4, D=2, widths 8/16/32).
backbone::BackboneConfig tiny_backbone();

/// WKV scan against the O(T^2) sum, 200 random cases, 64-bit.
CheckRow wkv_oracle(std::uint64_t seed = 0);
/// Batched spline evaluation against the Cox-de Boor recursion.
CheckRow spline_oracle(std::uint64_t seed = 0);
/// Central-difference gradients for each module; one row per module.
std::vector<CheckRow> gradient_suite(std::uint64_t seed = 0);
/// Straight-line field: zero consistency losses for K = 1, 2 and exact decode.
CheckRow flow_identities(std::uint64_t seed = 0);

std::vector<CheckRow> run_all(std::uint64_t seed = 0);
std::string format_table(const std::vector<CheckRow>& rows);

}  // namespace flowkan::check
