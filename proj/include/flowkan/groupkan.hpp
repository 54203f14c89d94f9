#pragma once

#include <array>
#include <string>
#include <vector>

#include "flowkan/random.hpp"
#include "flowkan/tensor.hpp"

namespace flowkan::kan {

inline constexpr std::size_t kMaxSplineOrder = 6;

/// Uniform B-spline grid on [-extent, extent] with `intervals` cells, extended
/// by `order` knots on each side.
struct SplineGrid {
  std::size_t intervals = 5;
  std::size_t order = 3;
  double extent = 1.1;

  std::size_t num_basis() const { return intervals + order; }
  double spacing() const { return 2.0 * extent / double(intervals); }
  std::vector<double> knots() const;

  bool operator==(const SplineGrid&) const = default;
};

/// Nonzero basis functions at one point: indices first..first+order.
/// Outside the grid the basis is extended linearly from the nearest boundary.
struct BasisEval {
  std::size_t first = 0;
  std::array<double, kMaxSplineOrder + 1> value{};
  std::array<double, kMaxSplineOrder + 1> deriv{};
};

BasisEval evaluate_basis(const SplineGrid& grid, double x);
/// Dense basis vector of length num_basis().
std::vector<double> bspline_basis(const SplineGrid& grid, double x);
/// Throws if the knot vector is not strictly increasing or the order is unsupported.
void validate_grid(const SplineGrid& grid);

/// Least-squares spline coefficients for samples (xs, ys); base branch not included.
std::vector<double> fit_spline_coefficients(const SplineGrid& grid, const std::vector<double>& xs,
                                            const std::vector<double>& ys);

/// phi(x) = base_scale * SiLU(x) + spline_scale * sum_j c_j B_j(x).
template <class T>
struct SplineFunction {
  SplineGrid grid;
  Tensor<T> coeffs;        // [num_basis]
  Tensor<T> base_scale;    // scalar
  Tensor<T> spline_scale;  // scalar
};

template <class T>
Tensor<T> spline_eval(const SplineFunction<T>& f, const Tensor<T>& x);

/// Matrix of univariate functions phi_{q,p}: R^in -> R^out. Edge (p, q) owns
/// base_w[p, q], coeffs[p, :, q] and spline_scale[p, q].
template <class T>
struct KanLayer {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  SplineGrid grid;
  Tensor<T> base_w;        // [in x out]
  Tensor<T> coeffs;        // [in x num_basis x out]
  Tensor<T> spline_scale;  // [in x out]

  static KanLayer init(std::size_t in_dim, std::size_t out_dim, const SplineGrid& grid, Rng& rng);
  static KanLayer zeros(std::size_t in_dim, std::size_t out_dim, const SplineGrid& grid);
  void collect(ParamList<T>& out, const std::string& prefix) const;
  std::size_t param_count() const { return in_dim * out_dim * (grid.num_basis() + 2); }
  std::size_t spline_coefficient_count() const { return in_dim * out_dim * grid.num_basis(); }
};

/// out_q = sum_p phi_{q,p}(x_p) over the last axis of x.
template <class T>
Tensor<T> kan_layer_apply(const KanLayer<T>& layer, const Tensor<T>& x);

template <class T>
Tensor<T> kan_stack(const Tensor<T>& x, const std::vector<KanLayer<T>>& layers);

/// a = sigmoid(W2 SiLU(W1 mean_t(x))), broadcast back over T.
template <class T>
Tensor<T> cam_gate(const Tensor<T>& x, const Tensor<T>& W1, const Tensor<T>& W2);

template <class T>
struct GroupKanBlockParams {
  std::size_t channels = 0;
  std::size_t groups = 4;
  std::size_t reduction = 4;
  double drop_path_rate = 0.0;
  /// kan[g] is the layer stack for group g, each layer (C/G -> C/G).
  std::vector<std::vector<KanLayer<T>>> kan;
  Tensor<T> W1;  // [C x C/r]
  Tensor<T> W2;  // [C/r x C]
  Tensor<T> ln_gain, ln_bias;

  static GroupKanBlockParams init(std::size_t channels, std::size_t groups, const SplineGrid& grid,
                                  std::size_t depth, std::size_t reduction, double drop_path_rate, Rng& rng);

  /// Names follow kan.{layer}.{group}.* and cam.{layer}.*.
  void collect(ParamList<T>& out, const std::string& layer) const;
  std::size_t param_count() const;
  std::size_t spline_coefficient_count() const;
};

/// Mode flags for stochastic regularizers.
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;
};

/// Identity at rate 0 or outside training; otherwise drops whole samples.
template <class T>
Tensor<T> drop_path(const Tensor<T>& x, double rate, const ForwardContext& ctx);

/// X + DropPath(LN(A * concat_g KAN_g(X_g))).
template <class T>
Tensor<T> groupkan_block(const Tensor<T>& x, const GroupKanBlockParams<T>& p, const ForwardContext& ctx = {});

/// Channel-grouped KAN output before gating: concat_g KAN_g(X_g).
template <class T>
Tensor<T> grouped_kan(const Tensor<T>& x, const GroupKanBlockParams<T>& p);

}  // namespace flowkan::kan
