#include "flowkan/random.hpp"

#include <cmath>

namespace flowkan {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 finalizer over the combined key
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + index + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

template <class T>
Tensor<T> normal_tensor(Shape shape, double stddev, Rng& rng, bool requires_grad) {
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = T(rng.normal() * stddev);
  return Tensor<T>(std::move(shape), std::move(v), requires_grad);
}

template <class T>
Tensor<T> uniform_tensor(Shape shape, double bound, Rng& rng, bool requires_grad) {
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = T(rng.uniform(-bound, bound));
  return Tensor<T>(std::move(shape), std::move(v), requires_grad);
}

template <class T>
Tensor<T> orthogonal_tensor(std::size_t n, double gain, Rng& rng, bool requires_grad) {
  std::vector<double> q(n * n);
  for (auto& x : q) x = rng.normal();
  // Modified Gram-Schmidt over rows.
  for (std::size_t i = 0; i < n; ++i) {
    double* ri = q.data() + i * n;
    for (std::size_t j = 0; j < i; ++j) {
      const double* rj = q.data() + j * n;
      double d = 0;
      for (std::size_t k = 0; k < n; ++k) d += ri[k] * rj[k];
      for (std::size_t k = 0; k < n; ++k) ri[k] -= d * rj[k];
    }
    double norm = 0;
    for (std::size_t k = 0; k < n; ++k) norm += ri[k] * ri[k];
    norm = std::sqrt(norm);
    for (std::size_t k = 0; k < n; ++k) ri[k] /= norm;
  }
  std::vector<T> v(n * n);
  for (std::size_t i = 0; i < n * n; ++i) v[i] = T(q[i] * gain);
  return Tensor<T>(Shape{n, n}, std::move(v), requires_grad);
}

#define FLOWKAN_RANDOM(T)                                                               \
  template Tensor<T> normal_tensor<T>(Shape, double, Rng&, bool);                       \
  template Tensor<T> uniform_tensor<T>(Shape, double, Rng&, bool);                      \
  template Tensor<T> orthogonal_tensor<T>(std::size_t, double, Rng&, bool);

FLOWKAN_RANDOM(float)
FLOWKAN_RANDOM(double)

}  // namespace flowkan
