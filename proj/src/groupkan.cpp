#include "flowkan/groupkan.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

#include "flowkan/ops.hpp"

namespace flowkan::kan {

std::vector<double> SplineGrid::knots() const {
  std::vector<double> t(intervals + 2 * order + 1);
  const double h = spacing();
  for (std::size_t j = 0; j < t.size(); ++j) t[j] = -extent + (double(j) - double(order)) * h;
  return t;
}

void validate_grid(const SplineGrid& grid) {
  if (grid.order == 0 || grid.order > kMaxSplineOrder) {
    throw std::invalid_argument("spline order must lie in [1, " + std::to_string(kMaxSplineOrder) + "]");
  }
  if (grid.intervals == 0) throw std::invalid_argument("spline grid needs at least one interval");
  const auto t = grid.knots();
  for (std::size_t j = 1; j < t.size(); ++j) {
    if (!(t[j] > t[j - 1])) throw std::invalid_argument("spline knot vector is not strictly increasing");
  }
}

namespace {

// Nonzero bases of degree `order` on span s (knots t_s <= x < t_{s+1}), plus
// the degree-1-lower values needed for derivatives.
void basis_on_span(const SplineGrid& g, std::size_t s, double x, double* N, double* D) {
  const std::size_t p = g.order;
  const double h = g.spacing();
  auto knot = [&](std::size_t j) { return -g.extent + (double(j) - double(p)) * h; };
  double left[kMaxSplineOrder + 1];
  double right[kMaxSplineOrder + 1];
  double lower[kMaxSplineOrder + 1];
  N[0] = 1.0;
  for (std::size_t j = 1; j <= p; ++j) {
    if (j == p) {
      for (std::size_t r = 0; r < p; ++r) lower[r] = N[r];
    }
    left[j] = x - knot(s + 1 - j);
    right[j] = knot(s + j) - x;
    double saved = 0.0;
    for (std::size_t r = 0; r < j; ++r) {
      const double tmp = N[r] / (right[r + 1] + left[j - r]);
      N[r] = saved + right[r + 1] * tmp;
      saved = left[j - r] * tmp;
    }
    N[j] = saved;
  }
  // B'_{i,p} = p/(t_{i+p}-t_i) B_{i,p-1} - p/(t_{i+p+1}-t_{i+1}) B_{i+1,p-1}, i = s-p+r
  for (std::size_t r = 0; r <= p; ++r) {
    const std::size_t i = s - p + r;
    double d = 0.0;
    if (r >= 1) d += double(p) / (knot(i + p) - knot(i)) * lower[r - 1];
    if (r < p) d -= double(p) / (knot(i + p + 1) - knot(i + 1)) * lower[r];
    D[r] = d;
  }
}

}  // namespace

BasisEval evaluate_basis(const SplineGrid& g, double x) {
  BasisEval out;
  const std::size_t p = g.order;
  const double lo = -g.extent, hi = g.extent;
  const double xb = std::clamp(x, lo, hi);
  std::size_t cell = std::size_t(std::floor((xb - lo) / g.spacing()));
  if (cell >= g.intervals) cell = g.intervals - 1;
  const std::size_t s = cell + p;
  double N[kMaxSplineOrder + 1];
  double D[kMaxSplineOrder + 1];
  basis_on_span(g, s, xb, N, D);
  out.first = s - p;
  const double dx = x - xb;
  for (std::size_t r = 0; r <= p; ++r) {
    out.value[r] = N[r] + D[r] * dx;
    out.deriv[r] = D[r];
  }
  return out;
}

std::vector<double> bspline_basis(const SplineGrid& grid, double x) {
  std::vector<double> out(grid.num_basis(), 0.0);
  const auto e = evaluate_basis(grid, x);
  for (std::size_t r = 0; r <= grid.order; ++r) out[e.first + r] = e.value[r];
  return out;
}

std::vector<double> fit_spline_coefficients(const SplineGrid& grid, const std::vector<double>& xs,
                                            const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.empty()) throw std::invalid_argument("spline fit needs matching, nonempty samples");
  const std::size_t nb = grid.num_basis();
  Eigen::MatrixXd A(xs.size(), nb);
  Eigen::VectorXd y(ys.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto row = bspline_basis(grid, xs[i]);
    for (std::size_t j = 0; j < nb; ++j) A(Eigen::Index(i), Eigen::Index(j)) = row[j];
    y(Eigen::Index(i)) = ys[i];
  }
  Eigen::VectorXd c = A.colPivHouseholderQr().solve(y);
  return std::vector<double>(c.data(), c.data() + c.size());
}

namespace {

template <class T>
T sigmoid_of(T x) {
  return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

// Fused evaluation of a KAN layer over the last axis of x.
template <class T>
Tensor<T> kan_linear(const Tensor<T>& x, const Tensor<T>& base_w, const Tensor<T>& coeffs,
                     const Tensor<T>& spline_scale, const SplineGrid& grid) {
  const std::size_t in = base_w.dim(0), out = base_w.dim(1), nb = grid.num_basis(), K = grid.order + 1;
  if (x.rank() == 0 || x.shape().back() != in) {
    throw ShapeError("kan layer: input " + shape_str(x.shape()) + " vs in_dim " + std::to_string(in));
  }
  if (coeffs.shape() != Shape{in, nb, out} || spline_scale.shape() != Shape{in, out}) {
    throw ShapeError("kan layer: coefficient shape " + shape_str(coeffs.shape()) + " / scale " +
                     shape_str(spline_scale.shape()) + " inconsistent with " + std::to_string(in) + "x" +
                     std::to_string(out) + " edges and " + std::to_string(nb) + " bases");
  }
  const std::size_t rows = x.numel() / in;
  const auto xv = x.data();
  const auto bw = base_w.data();
  const auto cv = coeffs.data();
  const auto sv = spline_scale.data();

  auto weff = std::make_shared<std::vector<T>>(in * nb * out);
  for (std::size_t p = 0; p < in; ++p)
    for (std::size_t j = 0; j < nb; ++j)
      for (std::size_t q = 0; q < out; ++q) (*weff)[(p * nb + j) * out + q] = sv[p * out + q] * cv[(p * nb + j) * out + q];

  struct Cache {
    std::vector<std::uint32_t> first;
    std::vector<T> value, deriv, act, act_deriv;
  };
  auto cache = std::make_shared<Cache>();
  cache->first.resize(rows * in);
  cache->value.resize(rows * in * K);
  cache->deriv.resize(rows * in * K);
  cache->act.resize(rows * in);
  cache->act_deriv.resize(rows * in);

  std::vector<T> y(rows * out, T(0));
  for (std::size_t n = 0; n < rows; ++n) {
    T* yr = y.data() + n * out;
    for (std::size_t p = 0; p < in; ++p) {
      const std::size_t np = n * in + p;
      const T xi = xv[np];
      const auto be = evaluate_basis(grid, double(xi));
      cache->first[np] = std::uint32_t(be.first);
      const T s = sigmoid_of(xi);
      const T act = xi * s;
      cache->act[np] = act;
      cache->act_deriv[np] = s + xi * s * (T(1) - s);
      const T* bwr = bw.data() + p * out;
      for (std::size_t q = 0; q < out; ++q) yr[q] += bwr[q] * act;
      for (std::size_t r = 0; r < K; ++r) {
        const T val = T(be.value[r]);
        cache->value[np * K + r] = val;
        cache->deriv[np * K + r] = T(be.deriv[r]);
        const T* wr = weff->data() + (p * nb + be.first + r) * out;
        for (std::size_t q = 0; q < out; ++q) yr[q] += val * wr[q];
      }
    }
  }
  Shape out_shape = x.shape();
  out_shape.back() = out;
  return make_result<T>(std::move(out_shape), std::move(y), {x, base_w, coeffs, spline_scale},
                        [x, base_w, coeffs, spline_scale, weff, cache, rows, in, out, nb, K](std::span<const T> g) mutable {
                          const auto bw = base_w.data();
                          std::vector<T> gweff(in * nb * out, T(0));
                          std::vector<T> gbase(in * out, T(0));
                          std::vector<T> gx(rows * in, T(0));
                          for (std::size_t n = 0; n < rows; ++n) {
                            const T* gr = g.data() + n * out;
                            for (std::size_t p = 0; p < in; ++p) {
                              const std::size_t np = n * in + p;
                              const T act = cache->act[np];
                              const T* bwr = bw.data() + p * out;
                              T* gbr = gbase.data() + p * out;
                              T acc_base = 0;
                              for (std::size_t q = 0; q < out; ++q) {
                                gbr[q] += act * gr[q];
                                acc_base += gr[q] * bwr[q];
                              }
                              T acc = acc_base * cache->act_deriv[np];
                              const std::size_t f = cache->first[np];
                              for (std::size_t r = 0; r < K; ++r) {
                                const T val = cache->value[np * K + r];
                                const T der = cache->deriv[np * K + r];
                                const T* wr = weff->data() + (p * nb + f + r) * out;
                                T* gw = gweff.data() + (p * nb + f + r) * out;
                                T dot = 0;
                                for (std::size_t q = 0; q < out; ++q) {
                                  gw[q] += val * gr[q];
                                  dot += gr[q] * wr[q];
                                }
                                acc += der * dot;
                              }
                              gx[np] = acc;
                            }
                          }
                          if (x.requires_grad()) {
                            auto d = x.grad_accumulator();
                            for (std::size_t i = 0; i < d.size(); ++i) d[i] += gx[i];
                          }
                          if (base_w.requires_grad()) {
                            auto d = base_w.grad_accumulator();
                            for (std::size_t i = 0; i < d.size(); ++i) d[i] += gbase[i];
                          }
                          const auto cv = coeffs.data();
                          const auto sv = spline_scale.data();
                          if (coeffs.requires_grad()) {
                            auto d = coeffs.grad_accumulator();
                            for (std::size_t p = 0; p < in; ++p)
                              for (std::size_t j = 0; j < nb; ++j)
                                for (std::size_t q = 0; q < out; ++q)
                                  d[(p * nb + j) * out + q] += gweff[(p * nb + j) * out + q] * sv[p * out + q];
                          }
                          if (spline_scale.requires_grad()) {
                            auto d = spline_scale.grad_accumulator();
                            for (std::size_t p = 0; p < in; ++p)
                              for (std::size_t j = 0; j < nb; ++j)
                                for (std::size_t q = 0; q < out; ++q)
                                  d[p * out + q] += gweff[(p * nb + j) * out + q] * cv[(p * nb + j) * out + q];
                          }
                        });
}

}  // namespace

template <class T>
Tensor<T> spline_eval(const SplineFunction<T>& f, const Tensor<T>& x) {
  const std::size_t nb = f.grid.num_basis();
  if (f.coeffs.numel() != nb) {
    throw ShapeError("spline_eval: " + std::to_string(f.coeffs.numel()) + " coefficients for " +
                     std::to_string(nb) + " bases");
  }
  auto flat = reshape(x, Shape{x.numel(), 1});
  auto y = kan_linear(flat, reshape(f.base_scale, Shape{1, 1}), reshape(f.coeffs, Shape{1, nb, 1}),
                      reshape(f.spline_scale, Shape{1, 1}), f.grid);
  return reshape(y, x.shape());
}

template <class T>
KanLayer<T> KanLayer<T>::init(std::size_t in_dim, std::size_t out_dim, const SplineGrid& grid, Rng& rng) {
  validate_grid(grid);
  KanLayer L;
  L.in_dim = in_dim;
  L.out_dim = out_dim;
  L.grid = grid;
  const double bound = 1.0 / std::sqrt(double(in_dim));
  L.base_w = uniform_tensor<T>({in_dim, out_dim}, bound, rng);
  L.coeffs = normal_tensor<T>({in_dim, grid.num_basis(), out_dim}, 0.1 * bound, rng);
  L.spline_scale = Tensor<T>::full({in_dim, out_dim}, T(1), true);
  return L;
}

template <class T>
KanLayer<T> KanLayer<T>::zeros(std::size_t in_dim, std::size_t out_dim, const SplineGrid& grid) {
  validate_grid(grid);
  KanLayer L;
  L.in_dim = in_dim;
  L.out_dim = out_dim;
  L.grid = grid;
  L.base_w = Tensor<T>::zeros({in_dim, out_dim}, true);
  L.coeffs = Tensor<T>::zeros({in_dim, grid.num_basis(), out_dim}, true);
  L.spline_scale = Tensor<T>::full({in_dim, out_dim}, T(1), true);
  return L;
}

template <class T>
void KanLayer<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  out.push_back({prefix + "base_w", base_w});
  out.push_back({prefix + "coeffs", coeffs});
  out.push_back({prefix + "spline_scale", spline_scale});
}

template <class T>
Tensor<T> kan_layer_apply(const KanLayer<T>& layer, const Tensor<T>& x) {
  return kan_linear(x, layer.base_w, layer.coeffs, layer.spline_scale, layer.grid);
}

template <class T>
Tensor<T> kan_stack(const Tensor<T>& x, const std::vector<KanLayer<T>>& layers) {
  Tensor<T> h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (i > 0 && layers[i].in_dim != layers[i - 1].out_dim) {
      throw ShapeError("kan_stack: layer " + std::to_string(i) + " expects " + std::to_string(layers[i].in_dim) +
                       " inputs after a layer with " + std::to_string(layers[i - 1].out_dim) + " outputs");
    }
    h = kan_layer_apply(layers[i], h);
  }
  return h;
}

template <class T>
Tensor<T> cam_gate(const Tensor<T>& x, const Tensor<T>& W1, const Tensor<T>& W2) {
  if (x.rank() != 3) throw ShapeError("cam_gate: expected [B x T x C], got " + shape_str(x.shape()));
  auto pooled = mean_axis1(x);
  auto a = sigmoid(matmul(silu(matmul(pooled, W1)), W2));
  return expand_axis1(a, x.dim(1));
}

template <class T>
GroupKanBlockParams<T> GroupKanBlockParams<T>::init(std::size_t channels, std::size_t groups, const SplineGrid& grid,
                                                    std::size_t depth, std::size_t reduction, double drop_path_rate,
                                                    Rng& rng) {
  if (groups == 0 || channels % groups != 0) {
    throw std::invalid_argument("GroupKAN: " + std::to_string(channels) + " channels not divisible into " +
                                std::to_string(groups) + " groups");
  }
  if (reduction == 0 || channels % reduction != 0) {
    throw std::invalid_argument("GroupKAN: CAM reduction " + std::to_string(reduction) + " does not divide " +
                                std::to_string(channels));
  }
  GroupKanBlockParams p;
  p.channels = channels;
  p.groups = groups;
  p.reduction = reduction;
  p.drop_path_rate = drop_path_rate;
  const std::size_t cg = channels / groups;
  for (std::size_t g = 0; g < groups; ++g) {
    std::vector<KanLayer<T>> stack;
    for (std::size_t d = 0; d < depth; ++d) stack.push_back(KanLayer<T>::init(cg, cg, grid, rng));
    p.kan.push_back(std::move(stack));
  }
  const std::size_t hidden = channels / reduction;
  p.W1 = uniform_tensor<T>({channels, hidden}, 1.0 / std::sqrt(double(channels)), rng);
  p.W2 = uniform_tensor<T>({hidden, channels}, 1.0 / std::sqrt(double(hidden)), rng);
  p.ln_gain = Tensor<T>::full({channels}, T(1), true);
  p.ln_bias = Tensor<T>::zeros({channels}, true);
  return p;
}

template <class T>
void GroupKanBlockParams<T>::collect(ParamList<T>& out, const std::string& layer) const {
  for (std::size_t g = 0; g < kan.size(); ++g) {
    for (std::size_t d = 0; d < kan[g].size(); ++d) {
      std::string prefix = "kan." + layer + "." + std::to_string(g) + ".";
      if (kan[g].size() > 1) prefix += "d" + std::to_string(d) + ".";
      kan[g][d].collect(out, prefix);
    }
  }
  out.push_back({"cam." + layer + ".W1", W1});
  out.push_back({"cam." + layer + ".W2", W2});
  out.push_back({"kan." + layer + ".ln.gain", ln_gain});
  out.push_back({"kan." + layer + ".ln.bias", ln_bias});
}

template <class T>
std::size_t GroupKanBlockParams<T>::param_count() const {
  std::size_t n = W1.numel() + W2.numel() + ln_gain.numel() + ln_bias.numel();
  for (const auto& stack : kan)
    for (const auto& L : stack) n += L.param_count();
  return n;
}

template <class T>
std::size_t GroupKanBlockParams<T>::spline_coefficient_count() const {
  std::size_t n = 0;
  for (const auto& stack : kan)
    for (const auto& L : stack) n += L.spline_coefficient_count();
  return n;
}

template <class T>
Tensor<T> drop_path(const Tensor<T>& x, double rate, const ForwardContext& ctx) {
  if (!ctx.training || rate <= 0.0) return x;
  if (ctx.rng == nullptr) throw std::invalid_argument("drop_path: training mode needs an rng");
  if (rate >= 1.0) throw std::invalid_argument("drop_path: rate must be < 1");
  const std::size_t B = x.dim(0);
  std::vector<T> keep(B);
  for (auto& k : keep) k = ctx.rng->uniform() < rate ? T(0) : T(1.0 / (1.0 - rate));
  return scale_rows(x, Tensor<T>(Shape{B}, std::move(keep)));
}

template <class T>
Tensor<T> grouped_kan(const Tensor<T>& x, const GroupKanBlockParams<T>& p) {
  if (x.rank() != 3 || x.dim(2) != p.channels) {
    throw ShapeError("groupkan: input " + shape_str(x.shape()) + " vs " + std::to_string(p.channels) + " channels");
  }
  const std::size_t cg = p.channels / p.groups;
  if (p.groups == 1) return kan_stack(x, p.kan[0]);
  std::vector<Tensor<T>> parts;
  parts.reserve(p.groups);
  for (std::size_t g = 0; g < p.groups; ++g) parts.push_back(kan_stack(slice_last(x, g * cg, cg), p.kan[g]));
  return concat_last(parts);
}

template <class T>
Tensor<T> groupkan_block(const Tensor<T>& x, const GroupKanBlockParams<T>& p, const ForwardContext& ctx) {
  auto y = grouped_kan(x, p);
  auto gated = mul(cam_gate(x, p.W1, p.W2), y);
  auto normed = layer_norm(gated, p.ln_gain, p.ln_bias);
  return add(x, drop_path(normed, p.drop_path_rate, ctx));
}

#define FLOWKAN_KAN(T)                                                                                  \
  template struct KanLayer<T>;                                                                          \
  template struct GroupKanBlockParams<T>;                                                               \
  template Tensor<T> spline_eval<T>(const SplineFunction<T>&, const Tensor<T>&);                        \
  template Tensor<T> kan_layer_apply<T>(const KanLayer<T>&, const Tensor<T>&);                          \
  template Tensor<T> kan_stack<T>(const Tensor<T>&, const std::vector<KanLayer<T>>&);                   \
  template Tensor<T> cam_gate<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                 \
  template Tensor<T> drop_path<T>(const Tensor<T>&, double, const ForwardContext&);                     \
  template Tensor<T> grouped_kan<T>(const Tensor<T>&, const GroupKanBlockParams<T>&);                   \
  template Tensor<T> groupkan_block<T>(const Tensor<T>&, const GroupKanBlockParams<T>&, const ForwardContext&);

FLOWKAN_KAN(float)
FLOWKAN_KAN(double)

}  // namespace flowkan::kan
