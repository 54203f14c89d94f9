#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "flowkan/tensor.hpp"

namespace flowkan {

/// Seeded generator shared by initialization, sampling and the environments.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }
  std::uint64_t next() { return engine_(); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

/// Independent stream for (seed, index) pairs, e.g. one per evaluation episode.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

template <class T>
Tensor<T> normal_tensor(Shape shape, double stddev, Rng& rng, bool requires_grad = true);
template <class T>
Tensor<T> uniform_tensor(Shape shape, double bound, Rng& rng, bool requires_grad = true);
/// Random orthogonal n x n matrix scaled by `gain` (Gram-Schmidt on a Gaussian draw).
template <class T>
Tensor<T> orthogonal_tensor(std::size_t n, double gain, Rng& rng, bool requires_grad = true);

}  // namespace flowkan
