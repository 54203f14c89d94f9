#pragma once

#include <cmath>
#include <string>

#include "flowkan/ops.hpp"
#include "flowkan/random.hpp"
#include "flowkan/tensor.hpp"

namespace flowkan {

/// Affine map x * W + b with W [in x out].
template <class T>
struct Linear {
  Tensor<T> W;
  Tensor<T> b;  // empty when bias-free

  /// W, b ~ U(-1/sqrt(in), 1/sqrt(in)).
  static Linear init(std::size_t in, std::size_t out, Rng& rng, bool bias = true) {
    const double bound = 1.0 / std::sqrt(double(in));
    Linear l;
    l.W = uniform_tensor<T>({in, out}, bound, rng);
    if (bias) l.b = uniform_tensor<T>({out}, bound, rng);
    return l;
  }
  static Linear zeros(std::size_t in, std::size_t out, bool bias = true) {
    Linear l;
    l.W = Tensor<T>::zeros({in, out}, true);
    if (bias) l.b = Tensor<T>::zeros({out}, true);
    return l;
  }

  std::size_t in_dim() const { return W.dim(0); }
  std::size_t out_dim() const { return W.dim(1); }
  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, W, b); }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + "W", W});
    if (b.numel() > 0) out.push_back({prefix + "b", b});
  }
};

inline std::size_t linear_param_count(std::size_t in, std::size_t out, bool bias = true) {
  return in * out + (bias ? out : 0);
}

}  // namespace flowkan
