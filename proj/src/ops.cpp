#include "flowkan/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

namespace flowkan {
namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

template <class T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <class T>
void add_into(std::span<T> dst, std::span<const T> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <class T>
Tensor<T> unary(const Tensor<T>& a, UnaryKind kind) {
  const auto x = a.data();
  std::vector<T> y(x.size());
  switch (kind) {
    case UnaryKind::Neg:
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = -x[i];
      break;
    case UnaryKind::Exp:
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::exp(x[i]);
      break;
    case UnaryKind::Log:
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::log(x[i]);
      break;
    case UnaryKind::Sigmoid:
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = stable_sigmoid(x[i]);
      break;
    case UnaryKind::Silu:
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * stable_sigmoid(x[i]);
      break;
    case UnaryKind::Relu:
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
      break;
    case UnaryKind::ReluSquared:
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] * x[i] : T(0);
      break;
    case UnaryKind::Softplus:
      for (std::size_t i = 0; i < x.size(); ++i)
        y[i] = std::max(x[i], T(0)) + std::log1p(std::exp(-std::abs(x[i])));
      break;
    case UnaryKind::Square:
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * x[i];
      break;
    case UnaryKind::Sqrt:
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::sqrt(x[i]);
      break;
  }
  // Keep the forward values for derivatives that are cheapest in terms of y.
  auto yc = std::make_shared<std::vector<T>>(y);
  return make_result<T>(a.shape(), std::move(y), {a}, [a, yc, kind](std::span<const T> g) mutable {
    const auto x = a.data();
    const auto& y = *yc;
    auto ga = a.grad_accumulator();
    switch (kind) {
      case UnaryKind::Neg:
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] -= g[i];
        break;
      case UnaryKind::Exp:
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
        break;
      case UnaryKind::Log:
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i];
        break;
      case UnaryKind::Sigmoid:
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (T(1) - y[i]);
        break;
      case UnaryKind::Silu:
        for (std::size_t i = 0; i < g.size(); ++i) {
          const T s = stable_sigmoid(x[i]);
          ga[i] += g[i] * (s + x[i] * s * (T(1) - s));
        }
        break;
      case UnaryKind::Relu:
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += x[i] > T(0) ? g[i] : T(0);
        break;
      case UnaryKind::ReluSquared:
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += x[i] > T(0) ? T(2) * x[i] * g[i] : T(0);
        break;
      case UnaryKind::Softplus:
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * stable_sigmoid(x[i]);
        break;
      case UnaryKind::Square:
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += T(2) * x[i] * g[i];
        break;
      case UnaryKind::Sqrt:
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * T(0.5) / y[i];
        break;
    }
  });
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

}  // namespace

template <class T>
Tensor<T> elementwise(UnaryKind kind, const Tensor<T>& a) {
  return unary(a, kind);
}

template <class T>
Tensor<T> elementwise(BinaryKind kind, const Tensor<T>& a, const Tensor<T>& b) {
  // `na`/`nb` are the repeat periods of each operand inside the output.
  Shape out_shape;
  if (a.shape() == b.shape() || is_suffix(b.shape(), a.shape())) {
    out_shape = a.shape();
  } else if (is_suffix(a.shape(), b.shape())) {
    out_shape = b.shape();
  } else {
    throw ShapeError("elementwise: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t n = numel(out_shape);
  const std::size_t na = a.numel();
  const std::size_t nb = b.numel();
  const auto x = a.data();
  const auto z = b.data();
  std::vector<T> y(n);
  switch (kind) {
    case BinaryKind::Add:
      for (std::size_t i = 0; i < n; ++i) y[i] = x[i % na] + z[i % nb];
      break;
    case BinaryKind::Sub:
      for (std::size_t i = 0; i < n; ++i) y[i] = x[i % na] - z[i % nb];
      break;
    case BinaryKind::Mul:
      for (std::size_t i = 0; i < n; ++i) y[i] = x[i % na] * z[i % nb];
      break;
    case BinaryKind::Div:
      for (std::size_t i = 0; i < n; ++i) y[i] = x[i % na] / z[i % nb];
      break;
  }
  return make_result<T>(out_shape, std::move(y), {a, b}, [a, b, kind, n, na, nb](std::span<const T> g) mutable {
    const auto x = a.data();
    const auto z = b.data();
    if (a.requires_grad()) {
      auto ga = a.grad_accumulator();
      switch (kind) {
        case BinaryKind::Add:
          for (std::size_t i = 0; i < n; ++i) ga[i % na] += g[i];
          break;
        case BinaryKind::Sub:
          for (std::size_t i = 0; i < n; ++i) ga[i % na] += g[i];
          break;
        case BinaryKind::Mul:
          for (std::size_t i = 0; i < n; ++i) ga[i % na] += g[i] * z[i % nb];
          break;
        case BinaryKind::Div:
          for (std::size_t i = 0; i < n; ++i) ga[i % na] += g[i] / z[i % nb];
          break;
      }
    }
    if (b.requires_grad()) {
      auto gb = b.grad_accumulator();
      switch (kind) {
        case BinaryKind::Add:
          for (std::size_t i = 0; i < n; ++i) gb[i % nb] += g[i];
          break;
        case BinaryKind::Sub:
          for (std::size_t i = 0; i < n; ++i) gb[i % nb] -= g[i];
          break;
        case BinaryKind::Mul:
          for (std::size_t i = 0; i < n; ++i) gb[i % nb] += g[i] * x[i % na];
          break;
        case BinaryKind::Div:
          for (std::size_t i = 0; i < n; ++i) {
            const T d = z[i % nb];
            gb[i % nb] -= g[i] * x[i % na] / (d * d);
          }
          break;
      }
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  const auto x = a.data();
  std::vector<T> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * factor;
  return make_result<T>(a.shape(), std::move(y), {a}, [a, factor](std::span<const T> g) mutable {
    auto ga = a.grad_accumulator();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T offset) {
  const auto x = a.data();
  std::vector<T> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] + offset;
  return make_result<T>(a.shape(), std::move(y), {a}, [a](std::span<const T> g) mutable {
    add_into(a.grad_accumulator(), g);
  });
}

template <class T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  const auto x = a.data();
  std::vector<T> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::clamp(x[i], lo, hi);
  return make_result<T>(a.shape(), std::move(y), {a}, [a, lo, hi](std::span<const T> g) mutable {
    const auto x = a.data();
    auto ga = a.grad_accumulator();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] >= lo && x[i] <= hi) ga[i] += g[i];
    }
  });
}

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() != 2) {
    throw ShapeError("matmul: expected [..xK] * [KxN], got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t K = a.shape().back();
  if (K != b.dim(0)) {
    throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t M = a.numel() / K;
  const std::size_t N = b.dim(1);
  Shape out_shape = a.shape();
  out_shape.back() = N;
  std::vector<T> y(M * N);
  {
    ConstMapMat<T> A(a.data().data(), M, K);
    ConstMapMat<T> B(b.data().data(), K, N);
    MapMat<T> C(y.data(), M, N);
    C.noalias() = A * B;
  }
  return make_result<T>(std::move(out_shape), std::move(y), {a, b},
                        [a, b, M, K, N](std::span<const T> g) mutable {
                          ConstMapMat<T> G(g.data(), M, N);
                          if (a.requires_grad()) {
                            MapMat<T> GA(a.grad_accumulator().data(), M, K);
                            ConstMapMat<T> B(b.data().data(), K, N);
                            GA.noalias() += G * B.transpose();
                          }
                          if (b.requires_grad()) {
                            MapMat<T> GB(b.grad_accumulator().data(), K, N);
                            ConstMapMat<T> A(a.data().data(), M, K);
                            GB.noalias() += A.transpose() * G;
                          }
                        });
}

template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  auto y = matmul(x, weight);
  if (bias.numel() == 0) return y;
  return add(y, bias);
}

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, double eps) {
  if (x.rank() == 0) throw ShapeError("layer_norm: rank-0 input");
  const std::size_t C = x.shape().back();
  if (gain.numel() != C || bias.numel() != C) {
    throw ShapeError("layer_norm: channel extent " + std::to_string(C) + " vs gain " +
                     shape_str(gain.shape()) + " / bias " + shape_str(bias.shape()));
  }
  const std::size_t rows = x.numel() / C;
  const auto xv = x.data();
  const auto gv = gain.data();
  const auto bv = bias.data();
  std::vector<T> y(x.numel());
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * C;
    T mu = 0;
    for (std::size_t c = 0; c < C; ++c) mu += row[c];
    mu /= T(C);
    T var = 0;
    for (std::size_t c = 0; c < C; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= T(C);
    const T is = T(1) / std::sqrt(var + T(eps));
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < C; ++c) {
      const T h = (row[c] - mu) * is;
      (*xhat)[r * C + c] = h;
      y[r * C + c] = h * gv[c] + bv[c];
    }
  }
  return make_result<T>(
      x.shape(), std::move(y), {x, gain, bias},
      [x, gain, bias, xhat, inv_std, rows, C](std::span<const T> g) mutable {
        const auto gv = gain.data();
        const auto& h = *xhat;
        if (gain.requires_grad()) {
          auto gg = gain.grad_accumulator();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < C; ++c) gg[c] += g[r * C + c] * h[r * C + c];
        }
        if (bias.requires_grad()) {
          auto gb = bias.grad_accumulator();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < C; ++c) gb[c] += g[r * C + c];
        }
        if (x.requires_grad()) {
          auto gx = x.grad_accumulator();
          for (std::size_t r = 0; r < rows; ++r) {
            T m1 = 0;
            T m2 = 0;
            for (std::size_t c = 0; c < C; ++c) {
              const T dh = g[r * C + c] * gv[c];
              m1 += dh;
              m2 += dh * h[r * C + c];
            }
            m1 /= T(C);
            m2 /= T(C);
            for (std::size_t c = 0; c < C; ++c) {
              const T dh = g[r * C + c] * gv[c];
              gx[r * C + c] += (*inv_std)[r] * (dh - m1 - h[r * C + c] * m2);
            }
          }
        }
      });
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (auto v : a.data()) s += v;
  return make_result<T>(Shape{}, {s}, {a}, [a](std::span<const T> g) mutable {
    auto ga = a.grad_accumulator();
    for (auto& v : ga) v += g[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.numel() == 0) throw ShapeError("mean of empty tensor");
  T s = 0;
  for (auto v : a.data()) s += v;
  const T n = T(a.numel());
  return make_result<T>(Shape{}, {s / n}, {a}, [a, n](std::span<const T> g) mutable {
    auto ga = a.grad_accumulator();
    for (auto& v : ga) v += g[0] / n;
  });
}

template <class T>
Tensor<T> sum_per_row(const Tensor<T>& a) {
  if (a.rank() == 0) throw ShapeError("sum_per_row: rank-0 input");
  const std::size_t B = a.dim(0);
  const std::size_t inner = B == 0 ? 0 : a.numel() / B;
  std::vector<T> y(B, T(0));
  const auto x = a.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < inner; ++i) y[b] += x[b * inner + i];
  return make_result<T>(Shape{B}, std::move(y), {a}, [a, B, inner](std::span<const T> g) mutable {
    auto ga = a.grad_accumulator();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < inner; ++i) ga[b * inner + i] += g[b];
  });
}

template <class T>
Tensor<T> weighted_sum(const Tensor<T>& a, const std::vector<T>& weights) {
  if (weights.size() != a.numel()) {
    throw ShapeError("weighted_sum: " + std::to_string(weights.size()) + " weights for shape " +
                     shape_str(a.shape()));
  }
  T s = 0;
  const auto x = a.data();
  for (std::size_t i = 0; i < x.size(); ++i) s += weights[i] * x[i];
  return make_result<T>(Shape{}, {s}, {a}, [a, weights](std::span<const T> g) mutable {
    auto ga = a.grad_accumulator();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0] * weights[i];
  });
}

namespace {
void require_rank3(const Shape& s, const char* op) {
  if (s.size() != 3) throw ShapeError(std::string(op) + ": expected [B x T x C], got " + shape_str(s));
}
}  // namespace

template <class T>
Tensor<T> mean_axis1(const Tensor<T>& a) {
  require_rank3(a.shape(), "mean_axis1");
  const std::size_t B = a.dim(0), L = a.dim(1), C = a.dim(2);
  std::vector<T> y(B * C, T(0));
  const auto x = a.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < L; ++t)
      for (std::size_t c = 0; c < C; ++c) y[b * C + c] += x[(b * L + t) * C + c];
  for (auto& v : y) v /= T(L);
  return make_result<T>(Shape{B, C}, std::move(y), {a}, [a, B, L, C](std::span<const T> g) mutable {
    auto ga = a.grad_accumulator();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < L; ++t)
        for (std::size_t c = 0; c < C; ++c) ga[(b * L + t) * C + c] += g[b * C + c] / T(L);
  });
}

template <class T>
Tensor<T> max_axis1(const Tensor<T>& a) {
  require_rank3(a.shape(), "max_axis1");
  const std::size_t B = a.dim(0), L = a.dim(1), C = a.dim(2);
  if (L == 0) throw ShapeError("max_axis1: empty axis");
  std::vector<T> y(B * C);
  auto arg = std::make_shared<std::vector<std::size_t>>(B * C, 0);
  const auto x = a.data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      T best = x[b * L * C + c];
      std::size_t bi = 0;
      for (std::size_t t = 1; t < L; ++t) {
        const T v = x[(b * L + t) * C + c];
        if (v > best) {
          best = v;
          bi = t;
        }
      }
      y[b * C + c] = best;
      (*arg)[b * C + c] = bi;
    }
  }
  return make_result<T>(Shape{B, C}, std::move(y), {a}, [a, arg, B, L, C](std::span<const T> g) mutable {
    auto ga = a.grad_accumulator();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c) ga[(b * L + (*arg)[b * C + c]) * C + c] += g[b * C + c];
  });
}

template <class T>
Tensor<T> expand_axis1(const Tensor<T>& a, std::size_t n) {
  if (a.rank() != 2) throw ShapeError("expand_axis1: expected [B x C], got " + shape_str(a.shape()));
  const std::size_t B = a.dim(0), C = a.dim(1);
  std::vector<T> y(B * n * C);
  const auto x = a.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < n; ++t)
      std::copy_n(x.data() + b * C, C, y.data() + (b * n + t) * C);
  return make_result<T>(Shape{B, n, C}, std::move(y), {a}, [a, B, n, C](std::span<const T> g) mutable {
    auto ga = a.grad_accumulator();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < n; ++t)
        for (std::size_t c = 0; c < C; ++c) ga[b * C + c] += g[(b * n + t) * C + c];
  });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw ShapeError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  std::vector<T> y(a.data().begin(), a.data().end());
  return make_result<T>(std::move(shape), std::move(y), {a}, [a](std::span<const T> g) mutable {
    add_into(a.grad_accumulator(), g);
  });
}

template <class T>
Tensor<T> concat_last(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_last: no inputs");
  Shape lead = parts[0].shape();
  if (lead.empty()) throw ShapeError("concat_last: rank-0 input");
  lead.pop_back();
  const std::size_t rows = numel(lead);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.empty()) throw ShapeError("concat_last: rank-0 input");
    const std::size_t w = s.back();
    s.pop_back();
    if (s != lead) {
      throw ShapeError("concat_last: leading shapes differ, " + shape_str(parts[0].shape()) +
                       " and " + shape_str(p.shape()));
    }
    widths.push_back(w);
    total += w;
  }
  std::vector<T> y(rows * total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto x = parts[k].data();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(x.data() + r * widths[k], widths[k], y.data() + r * total + off);
    off += widths[k];
  }
  Shape out = lead;
  out.push_back(total);
  return make_result<T>(std::move(out), std::move(y), parts,
                        [parts, widths, rows, total](std::span<const T> g) mutable {
                          std::size_t off = 0;
                          for (std::size_t k = 0; k < parts.size(); ++k) {
                            if (parts[k].requires_grad()) {
                              auto gp = parts[k].grad_accumulator();
                              for (std::size_t r = 0; r < rows; ++r)
                                for (std::size_t c = 0; c < widths[k]; ++c)
                                  gp[r * widths[k] + c] += g[r * total + off + c];
                            }
                            off += widths[k];
                          }
                        });
}

template <class T>
Tensor<T> slice_last(const Tensor<T>& a, std::size_t start, std::size_t length) {
  if (a.rank() == 0 || start + length > a.shape().back()) {
    throw ShapeError("slice_last: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of range for " + shape_str(a.shape()));
  }
  const std::size_t W = a.shape().back();
  const std::size_t rows = a.numel() / W;
  std::vector<T> y(rows * length);
  const auto x = a.data();
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(x.data() + r * W + start, length, y.data() + r * length);
  Shape out = a.shape();
  out.back() = length;
  return make_result<T>(std::move(out), std::move(y), {a},
                        [a, rows, W, start, length](std::span<const T> g) mutable {
                          auto ga = a.grad_accumulator();
                          for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t c = 0; c < length; ++c) ga[r * W + start + c] += g[r * length + c];
                        });
}

template <class T>
Tensor<T> select_axis1(const Tensor<T>& a, const std::vector<std::size_t>& index) {
  if (a.rank() < 2) throw ShapeError("select_axis1: rank < 2 input " + shape_str(a.shape()));
  const std::size_t B = a.dim(0), L = a.dim(1);
  const std::size_t inner = a.numel() / (B * L == 0 ? 1 : B * L);
  for (auto i : index) {
    if (i >= L) {
      throw ShapeError("select_axis1: index " + std::to_string(i) + " out of range for " +
                       shape_str(a.shape()));
    }
  }
  const std::size_t n = index.size();
  std::vector<T> y(B * n * inner);
  const auto x = a.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t j = 0; j < n; ++j)
      std::copy_n(x.data() + (b * L + index[j]) * inner, inner, y.data() + (b * n + j) * inner);
  Shape out = a.shape();
  out[1] = n;
  return make_result<T>(std::move(out), std::move(y), {a},
                        [a, index, B, L, n, inner](std::span<const T> g) mutable {
                          auto ga = a.grad_accumulator();
                          for (std::size_t b = 0; b < B; ++b)
                            for (std::size_t j = 0; j < n; ++j)
                              for (std::size_t c = 0; c < inner; ++c)
                                ga[(b * L + index[j]) * inner + c] += g[(b * n + j) * inner + c];
                        });
}

template <class T>
Tensor<T> shift_time(const Tensor<T>& a) {
  require_rank3(a.shape(), "shift_time");
  const std::size_t B = a.dim(0), L = a.dim(1), C = a.dim(2);
  std::vector<T> y(a.numel(), T(0));
  const auto x = a.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 1; t < L; ++t)
      std::copy_n(x.data() + (b * L + t - 1) * C, C, y.data() + (b * L + t) * C);
  return make_result<T>(a.shape(), std::move(y), {a}, [a, B, L, C](std::span<const T> g) mutable {
    auto ga = a.grad_accumulator();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 1; t < L; ++t)
        for (std::size_t c = 0; c < C; ++c) ga[(b * L + t - 1) * C + c] += g[(b * L + t) * C + c];
  });
}

template <class T>
Tensor<T> reverse_time(const Tensor<T>& a) {
  require_rank3(a.shape(), "reverse_time");
  const std::size_t B = a.dim(0), L = a.dim(1), C = a.dim(2);
  std::vector<T> y(a.numel());
  const auto x = a.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < L; ++t)
      std::copy_n(x.data() + (b * L + (L - 1 - t)) * C, C, y.data() + (b * L + t) * C);
  return make_result<T>(a.shape(), std::move(y), {a}, [a, B, L, C](std::span<const T> g) mutable {
    auto ga = a.grad_accumulator();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < L; ++t)
        for (std::size_t c = 0; c < C; ++c) ga[(b * L + (L - 1 - t)) * C + c] += g[(b * L + t) * C + c];
  });
}

template <class T>
Tensor<T> pool_time(const Tensor<T>& a, std::size_t factor) {
  require_rank3(a.shape(), "pool_time");
  const std::size_t B = a.dim(0), L = a.dim(1), C = a.dim(2);
  if (factor == 0 || L % factor != 0) {
    throw ShapeError("pool_time: length " + std::to_string(L) + " not divisible by " + std::to_string(factor));
  }
  const std::size_t Lo = L / factor;
  std::vector<T> y(B * Lo * C, T(0));
  const auto x = a.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < L; ++t)
      for (std::size_t c = 0; c < C; ++c) y[(b * Lo + t / factor) * C + c] += x[(b * L + t) * C + c] / T(factor);
  return make_result<T>(Shape{B, Lo, C}, std::move(y), {a},
                        [a, B, L, C, Lo, factor](std::span<const T> g) mutable {
                          auto ga = a.grad_accumulator();
                          for (std::size_t b = 0; b < B; ++b)
                            for (std::size_t t = 0; t < L; ++t)
                              for (std::size_t c = 0; c < C; ++c)
                                ga[(b * L + t) * C + c] += g[(b * Lo + t / factor) * C + c] / T(factor);
                        });
}

template <class T>
Tensor<T> repeat_time(const Tensor<T>& a, std::size_t factor) {
  require_rank3(a.shape(), "repeat_time");
  const std::size_t B = a.dim(0), L = a.dim(1), C = a.dim(2);
  const std::size_t Lo = L * factor;
  std::vector<T> y(B * Lo * C);
  const auto x = a.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < Lo; ++t)
      std::copy_n(x.data() + (b * L + t / factor) * C, C, y.data() + (b * Lo + t) * C);
  return make_result<T>(Shape{B, Lo, C}, std::move(y), {a},
                        [a, B, C, L, Lo, factor](std::span<const T> g) mutable {
                          auto ga = a.grad_accumulator();
                          for (std::size_t b = 0; b < B; ++b)
                            for (std::size_t t = 0; t < Lo; ++t)
                              for (std::size_t c = 0; c < C; ++c)
                                ga[(b * L + t / factor) * C + c] += g[(b * Lo + t) * C + c];
                        });
}

template <class T>
Tensor<T> scale_rows(const Tensor<T>& a, const Tensor<T>& s) {
  if (a.rank() == 0 || s.numel() != a.dim(0)) {
    throw ShapeError("scale_rows: " + shape_str(s.shape()) + " scales for " + shape_str(a.shape()));
  }
  const std::size_t B = a.dim(0);
  const std::size_t inner = B == 0 ? 0 : a.numel() / B;
  std::vector<T> y(a.numel());
  const auto x = a.data();
  const auto sv = s.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < inner; ++i) y[b * inner + i] = x[b * inner + i] * sv[b];
  return make_result<T>(a.shape(), std::move(y), {a, s}, [a, s, B, inner](std::span<const T> g) mutable {
    const auto x = a.data();
    const auto sv = s.data();
    if (a.requires_grad()) {
      auto ga = a.grad_accumulator();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < inner; ++i) ga[b * inner + i] += g[b * inner + i] * sv[b];
    }
    if (s.requires_grad()) {
      auto gs = s.grad_accumulator();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < inner; ++i) gs[b] += g[b * inner + i] * x[b * inner + i];
    }
  });
}

template <class T>
bool all_finite(const Tensor<T>& a) {
  for (auto v : a.data())
    if (!std::isfinite(v)) return false;
  return true;
}

#define FLOWKAN_OPS(T)                                                                                \
  template Tensor<T> elementwise<T>(UnaryKind, const Tensor<T>&);                                     \
  template Tensor<T> elementwise<T>(BinaryKind, const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                                   \
  template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                              \
  template Tensor<T> clamp<T>(const Tensor<T>&, T, T);                                                \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                 \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);     \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                        \
  template Tensor<T> mean<T>(const Tensor<T>&);                                                       \
  template Tensor<T> sum_per_row<T>(const Tensor<T>&);                                                \
  template Tensor<T> weighted_sum<T>(const Tensor<T>&, const std::vector<T>&);                        \
  template Tensor<T> mean_axis1<T>(const Tensor<T>&);                                                 \
  template Tensor<T> max_axis1<T>(const Tensor<T>&);                                                  \
  template Tensor<T> expand_axis1<T>(const Tensor<T>&, std::size_t);                                  \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                             \
  template Tensor<T> concat_last<T>(const std::vector<Tensor<T>>&);                                   \
  template Tensor<T> slice_last<T>(const Tensor<T>&, std::size_t, std::size_t);                       \
  template Tensor<T> select_axis1<T>(const Tensor<T>&, const std::vector<std::size_t>&);              \
  template Tensor<T> shift_time<T>(const Tensor<T>&);                                                 \
  template Tensor<T> reverse_time<T>(const Tensor<T>&);                                               \
  template Tensor<T> pool_time<T>(const Tensor<T>&, std::size_t);                                     \
  template Tensor<T> repeat_time<T>(const Tensor<T>&, std::size_t);                                   \
  template Tensor<T> scale_rows<T>(const Tensor<T>&, const Tensor<T>&);                               \
  template bool all_finite<T>(const Tensor<T>&);

FLOWKAN_OPS(float)
FLOWKAN_OPS(double)

}  // namespace flowkan
