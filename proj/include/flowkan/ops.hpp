#pragma once

#include <cstddef>
#include <vector>

#include "flowkan/tensor.hpp"

namespace flowkan {

enum class UnaryKind { Neg, Exp, Log, Sigmoid, Silu, Relu, ReluSquared, Softplus, Square, Sqrt };
enum class BinaryKind { Add, Sub, Mul, Div };

// Binary ops broadcast when one shape is a trailing suffix of the other
// (e.g. [B x T x C] with [C] or [T x C]). Nothing else broadcasts.
template <class T>
Tensor<T> elementwise(UnaryKind kind, const Tensor<T>& a);
template <class T>
Tensor<T> elementwise(BinaryKind kind, const Tensor<T>& a, const Tensor<T>& b);

template <class T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryKind::Add, a, b); }
template <class T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryKind::Sub, a, b); }
template <class T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryKind::Mul, a, b); }
template <class T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryKind::Div, a, b); }
template <class T> Tensor<T> neg(const Tensor<T>& a) { return elementwise(UnaryKind::Neg, a); }
template <class T> Tensor<T> exp(const Tensor<T>& a) { return elementwise(UnaryKind::Exp, a); }
template <class T> Tensor<T> log(const Tensor<T>& a) { return elementwise(UnaryKind::Log, a); }
template <class T> Tensor<T> sigmoid(const Tensor<T>& a) { return elementwise(UnaryKind::Sigmoid, a); }
template <class T> Tensor<T> silu(const Tensor<T>& a) { return elementwise(UnaryKind::Silu, a); }
template <class T> Tensor<T> relu(const Tensor<T>& a) { return elementwise(UnaryKind::Relu, a); }
template <class T> Tensor<T> relu_squared(const Tensor<T>& a) { return elementwise(UnaryKind::ReluSquared, a); }
template <class T> Tensor<T> softplus(const Tensor<T>& a) { return elementwise(UnaryKind::Softplus, a); }
template <class T> Tensor<T> square(const Tensor<T>& a) { return elementwise(UnaryKind::Square, a); }

template <class T>
Tensor<T> scale(const Tensor<T>& a, T factor);
template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T offset);
/// Gradient passes inside [lo, hi] and is zero outside.
template <class T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi);

/// a[... x K] * b[K x N] -> [... x N]; leading axes of `a` are flattened.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// x * W (+ bias). `bias` may be an empty tensor.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     double eps = 1e-5);

template <class T>
Tensor<T> sum(const Tensor<T>& a);
template <class T>
Tensor<T> mean(const Tensor<T>& a);
/// [B x ...] -> [B], summing everything but the first axis.
template <class T>
Tensor<T> sum_per_row(const Tensor<T>& a);
/// Scalar sum_i w_i * a_i with constant weights.
template <class T>
Tensor<T> weighted_sum(const Tensor<T>& a, const std::vector<T>& weights);

/// [B x T x C] -> [B x C]
template <class T>
Tensor<T> mean_axis1(const Tensor<T>& a);
/// [B x N x C] -> [B x C]; gradient routed to the first maximal entry.
template <class T>
Tensor<T> max_axis1(const Tensor<T>& a);
/// [B x C] -> [B x n x C]
template <class T>
Tensor<T> expand_axis1(const Tensor<T>& a, std::size_t n);

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <class T>
Tensor<T> concat_last(const std::vector<Tensor<T>>& parts);
template <class T>
Tensor<T> slice_last(const Tensor<T>& a, std::size_t start, std::size_t length);
/// Gathers positions `index` along axis 1 of [B x T x ...].
template <class T>
Tensor<T> select_axis1(const Tensor<T>& a, const std::vector<std::size_t>& index);

/// out[:, t] = a[:, t-1], out[:, 0] = 0 on [B x T x C].
template <class T>
Tensor<T> shift_time(const Tensor<T>& a);
/// Reverses axis 1 of [B x T x C].
template <class T>
Tensor<T> reverse_time(const Tensor<T>& a);
/// Mean over consecutive groups of `factor` steps: [B x T x C] -> [B x T/f x C].
template <class T>
Tensor<T> pool_time(const Tensor<T>& a, std::size_t factor);
/// Nearest repeat: [B x T x C] -> [B x T*f x C].
template <class T>
Tensor<T> repeat_time(const Tensor<T>& a, std::size_t factor);

/// Multiplies every entry of row b of [B x ...] by s[b].
template <class T>
Tensor<T> scale_rows(const Tensor<T>& a, const Tensor<T>& s);

template <class T>
bool all_finite(const Tensor<T>& a);

}  // namespace flowkan
