#include "flowkan/flowmatch.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace flowkan::flow {

namespace {

constexpr double kTimeTol = 1e-12;

template <class T>
Tensor<T> row_scales(const std::vector<double>& s) {
  std::vector<T> v(s.begin(), s.end());
  const std::size_t n = v.size();
  return Tensor<T>({n}, std::move(v));
}

template <class T>
void check_batch(const Tensor<T>& a, std::size_t n, const char* what) {
  if (a.rank() == 0 || a.dim(0) != n) {
    throw ShapeError(std::string(what) + ": " + std::to_string(n) + " times for a batch " + shape_str(a.shape()));
  }
}

}  // namespace

void validate(const FlowConfig& cfg) {
  if (cfg.segments_k == 0) throw std::invalid_argument("flow: segments_k must be >= 1");
  if (!(cfg.dt > 0.0) || cfg.dt >= 1.0 / double(cfg.segments_k)) {
    throw std::invalid_argument("flow: dt must lie in (0, 1/K)");
  }
  if (!(cfg.alpha >= 0.0)) throw std::invalid_argument("flow: alpha must be >= 0");
  if (!(cfg.lambda_acr >= 0.0)) throw std::invalid_argument("flow: lambda_acr must be >= 0");
  if (!cfg.lambdas.empty() && cfg.lambdas.size() != cfg.segments_k) {
    throw std::invalid_argument("flow: " + std::to_string(cfg.lambdas.size()) + " segment weights for K = " +
                                std::to_string(cfg.segments_k));
  }
}

ControlWindow ControlWindow::make(std::size_t n_obs, std::size_t H, std::size_t horizon) {
  if (n_obs == 0 || H == 0) throw std::invalid_argument("control window: n_obs and H must be positive");
  ControlWindow w{n_obs - 1, H};
  if (w.u0 + H > horizon) {
    throw std::invalid_argument("control window {" + std::to_string(w.u0) + ".." + std::to_string(w.u0 + H - 1) +
                                "} exceeds horizon " + std::to_string(horizon));
  }
  return w;
}

std::vector<std::size_t> ControlWindow::indices() const {
  std::vector<std::size_t> idx(H);
  for (std::size_t i = 0; i < H; ++i) idx[i] = u0 + i;
  return idx;
}

template <class T>
Tensor<T> interpolate(const Tensor<T>& a_src, const Tensor<T>& a_tar, const std::vector<double>& t) {
  if (a_src.shape() != a_tar.shape()) {
    throw ShapeError("interpolate: " + shape_str(a_src.shape()) + " vs " + shape_str(a_tar.shape()));
  }
  check_batch(a_src, t.size(), "interpolate");
  std::vector<double> one_minus(t.size());
  for (std::size_t b = 0; b < t.size(); ++b) {
    if (!(t[b] >= 0.0 && t[b] <= 1.0)) throw std::invalid_argument("interpolate: t = " + std::to_string(t[b]) + " outside [0, 1]");
    one_minus[b] = 1.0 - t[b];
  }
  return add(scale_rows(a_src, row_scales<T>(one_minus)), scale_rows(a_tar, row_scales<T>(t)));
}

template <class T>
Tensor<T> euler_decode(const Tensor<T>& a_t, const std::vector<double>& t, const Tensor<T>& v) {
  check_batch(a_t, t.size(), "euler_decode");
  std::vector<double> rest(t.size());
  for (std::size_t b = 0; b < t.size(); ++b) rest[b] = 1.0 - t[b];
  return add(a_t, scale_rows(v, row_scales<T>(rest)));
}

template <class T>
Tensor<T> segment_decode(const Tensor<T>& a_t, const std::vector<double>& t, const std::vector<std::size_t>& segment,
                         std::size_t K, const Tensor<T>& v) {
  check_batch(a_t, t.size(), "segment_decode");
  if (segment.size() != t.size()) throw ShapeError("segment_decode: one segment index per sample required");
  std::vector<double> rest(t.size());
  for (std::size_t b = 0; b < t.size(); ++b) {
    const std::size_t i = segment[b];
    const double lo = double(i) / double(K), hi = double(i + 1) / double(K);
    if (i >= K || t[b] < lo - kTimeTol || t[b] > hi + kTimeTol) {
      throw std::invalid_argument("segment_decode: t = " + std::to_string(t[b]) + " outside segment " +
                                  std::to_string(i) + " of " + std::to_string(K));
    }
    rest[b] = hi - t[b];
  }
  return add(a_t, scale_rows(v, row_scales<T>(rest)));
}

template <class T>
FlowSample<T> sample_flow(const Tensor<T>& a_tar, std::size_t K, double dt, Rng& rng) {
  if (!(dt > 0.0) || dt >= 1.0 / double(K)) throw std::invalid_argument("sample_flow: dt must lie in (0, 1/K)");
  FlowSample<T> s;
  const std::size_t B = a_tar.dim(0);
  s.a_tar = a_tar;
  s.a_src = normal_tensor<T>(a_tar.shape(), 1.0, rng, false);
  s.dt = dt;
  s.t.resize(B);
  s.segment.resize(B);
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t i = rng.index(K);
    const double lo = double(i) / double(K), hi = double(i + 1) / double(K) - dt;
    s.segment[b] = i;
    s.t[b] = rng.uniform(lo, hi);
  }
  return s;
}

template <class T>
ConsistencyTerms<T> consistency_terms(const VelocityFn<T>& student, const VelocityFn<T>& teacher,
                                      const FlowSample<T>& s, std::size_t K) {
  const std::size_t B = s.t.size();
  if (s.segment.size() != B) throw ShapeError("consistency: one segment index per sample required");
  std::vector<double> t_next(B);
  for (std::size_t b = 0; b < B; ++b) {
    const double hi = double(s.segment[b] + 1) / double(K);
    if (s.t[b] + s.dt > hi + kTimeTol) {
      throw std::invalid_argument("consistency: t + dt = " + std::to_string(s.t[b] + s.dt) + " exceeds segment bound " +
                                  std::to_string(hi));
    }
    t_next[b] = std::min(s.t[b] + s.dt, hi);
  }
  ConsistencyTerms<T> out;
  out.a_t = interpolate(s.a_src, s.a_tar, s.t);
  out.v_student = student(out.a_t, s.t, s.segment);
  auto f_student = segment_decode(out.a_t, s.t, s.segment, K, out.v_student);
  Tensor<T> v_teacher, f_teacher;
  {
    NoGradGuard guard;
    auto a_next = interpolate(s.a_src, s.a_tar, t_next);
    v_teacher = teacher(a_next, t_next, s.segment).detach();
    f_teacher = segment_decode(a_next, t_next, s.segment, K, v_teacher).detach();
  }
  out.end = sum_per_row(square(sub(f_student, f_teacher)));
  out.vel = sum_per_row(square(sub(out.v_student, v_teacher)));
  return out;
}

template <class T>
Tensor<T> masked_mean(const Tensor<T>& per_sample, const std::vector<bool>& mask) {
  if (per_sample.numel() != mask.size()) throw ShapeError("masked_mean: mask length differs from batch");
  std::size_t n = 0;
  for (bool m : mask) n += m;
  if (n == 0) return Tensor<T>::scalar(T(0));
  std::vector<T> w(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) w[i] = mask[i] ? T(1) / T(n) : T(0);
  return weighted_sum(per_sample, w);
}

template <class T>
CfmLosses<T> cfm_losses(const ConsistencyTerms<T>& terms) {
  const std::vector<bool> all(terms.end.numel(), true);
  return {masked_mean(terms.end, all), masked_mean(terms.vel, all)};
}

template <class T>
MultiSegmentLoss<T> multisegment_loss(const ConsistencyTerms<T>& terms, const std::vector<std::size_t>& segment,
                                      const FlowConfig& cfg) {
  if (segment.size() != terms.end.numel()) throw ShapeError("multisegment_loss: one segment index per sample required");
  MultiSegmentLoss<T> out;
  for (std::size_t i = 0; i < cfg.segments_k; ++i) {
    std::vector<bool> mask(segment.size());
    for (std::size_t b = 0; b < segment.size(); ++b) mask[b] = segment[b] == i;
    auto seg = add(masked_mean(terms.end, mask), scale(masked_mean(terms.vel, mask), T(cfg.alpha)));
    out.per_segment.push_back(seg);
    auto weighted = scale(seg, T(cfg.lambda(i)));
    out.total = i == 0 ? weighted : add(out.total, weighted);
  }
  return out;
}

template <class T>
Tensor<T> acr_loss(const Tensor<T>& decoded, const Tensor<T>& expert, const ControlWindow& window) {
  if (decoded.shape() != expert.shape() || decoded.rank() != 3) {
    throw ShapeError("acr_loss: decoded " + shape_str(decoded.shape()) + " vs expert " + shape_str(expert.shape()));
  }
  if (window.u0 + window.H > decoded.dim(1)) {
    throw std::invalid_argument("acr_loss: window exceeds horizon " + std::to_string(decoded.dim(1)));
  }
  auto sel = select_axis1(sub(decoded, expert), window.indices());
  return scale(sum(square(sel)), T(1) / T(decoded.dim(0) * window.H));
}

template <class T>
Tensor<T> total_loss(const Tensor<T>& l_mfm, const Tensor<T>& l_acr, double lambda_acr) {
  if (!(lambda_acr >= 0.0)) throw std::invalid_argument("total_loss: lambda_acr must be >= 0");
  return add(l_mfm, scale(l_acr, T(lambda_acr)));
}

template <class T>
LossBreakdown<T> compute_losses(const VelocityFn<T>& student, const VelocityFn<T>& teacher, const FlowSample<T>& s,
                                const FlowConfig& cfg, const ControlWindow& window) {
  auto terms = consistency_terms(student, teacher, s, cfg.segments_k);
  auto cfm = cfm_losses(terms);
  auto ms = multisegment_loss(terms, s.segment, cfg);
  LossBreakdown<T> out;
  out.l_end = cfm.l_end;
  out.l_vel = cfm.l_vel;
  out.l_mfm = ms.total;
  out.l_mfm_segments = ms.per_segment;
  out.l_acr = acr_loss(euler_decode(terms.a_t, s.t, terms.v_student), s.a_tar, window);
  out.total = total_loss(out.l_mfm, out.l_acr, cfg.lambda_acr);
  return out;
}

template <class T>
Tensor<T> draw_source(std::size_t B, std::size_t horizon, std::size_t action_dim, Rng& rng) {
  return normal_tensor<T>({B, horizon, action_dim}, 1.0, rng, false);
}

namespace {

template <class T>
Decoded<T> finish(Tensor<T> a, const perception::Normalizer& norm, const ControlWindow& window, std::size_t nfe) {
  Decoded<T> out;
  out.normalized = clamp(a, T(-1), T(1));
  out.nfe = nfe;
  const std::size_t B = a.dim(0), L = a.dim(1), D = a.dim(2);
  const auto x = out.normalized.data();
  out.actions.assign(B, std::vector<std::vector<double>>(L, std::vector<double>(D)));
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < L; ++t)
      for (std::size_t d = 0; d < D; ++d) out.actions[b][t][d] = norm.denormalize(d, double(x[(b * L + t) * D + d]));
  out.window.resize(B);
  for (std::size_t b = 0; b < B; ++b)
    for (auto u : window.indices()) out.window[b].push_back(out.actions[b][u]);
  return out;
}

template <class T>
void check_decode_inputs(const perception::Normalizer* norm, const Tensor<T>& a_src, const ControlWindow& window) {
  if (norm == nullptr || norm->empty()) throw std::invalid_argument("inference: missing action normalizer");
  if (a_src.rank() != 3 || norm->dim() != a_src.dim(2)) {
    throw ShapeError("inference: normalizer has " + std::to_string(norm->dim()) + " dims for actions " +
                     shape_str(a_src.shape()));
  }
  if (window.u0 + window.H > a_src.dim(1)) throw std::invalid_argument("inference: control window exceeds horizon");
}

}  // namespace

template <class T>
Decoded<T> infer_one_step(const VelocityFn<T>& v, const perception::Normalizer* action_norm, const Tensor<T>& a_src,
                          std::size_t K, const ControlWindow& window, double t_start) {
  check_decode_inputs(action_norm, a_src, window);
  if (K == 0) throw std::invalid_argument("inference: K must be >= 1");
  if (!(t_start >= 0.0 && t_start < 1.0)) throw std::invalid_argument("inference: t_start must lie in [0, 1)");
  NoGradGuard guard;
  const std::size_t B = a_src.dim(0);
  Tensor<T> a = a_src;
  double t = t_start;
  std::size_t nfe = 0;
  for (std::size_t i = std::min(std::size_t(t_start * double(K)), K - 1); i < K; ++i) {
    const std::vector<double> tv(B, t);
    const std::vector<std::size_t> sv(B, i);
    auto vel = v(a, tv, sv);
    ++nfe;
    a = segment_decode(a, tv, sv, K, vel);
    t = double(i + 1) / double(K);
  }
  return finish(a, *action_norm, window, nfe);
}

template <class T>
Decoded<T> infer_multi_step(const VelocityFn<T>& v, const perception::Normalizer* action_norm, const Tensor<T>& a_src,
                            std::size_t n_steps, std::size_t K, const ControlWindow& window) {
  check_decode_inputs(action_norm, a_src, window);
  if (n_steps == 0) throw std::invalid_argument("inference: n_steps must be >= 1");
  NoGradGuard guard;
  const std::size_t B = a_src.dim(0);
  Tensor<T> a = a_src;
  for (std::size_t j = 0; j < n_steps; ++j) {
    const double t = double(j) / double(n_steps);
    const std::vector<double> tv(B, t);
    const std::vector<std::size_t> sv(B, std::min(std::size_t(t * double(K)), K - 1));
    auto vel = v(a, tv, sv);
    a = add(a, scale(vel, T(1.0 / double(n_steps))));
  }
  return finish(a, *action_norm, window, n_steps);
}

#define FLOWKAN_FLOW(T)                                                                                             \
  template Tensor<T> interpolate<T>(const Tensor<T>&, const Tensor<T>&, const std::vector<double>&);                \
  template Tensor<T> euler_decode<T>(const Tensor<T>&, const std::vector<double>&, const Tensor<T>&);               \
  template Tensor<T> segment_decode<T>(const Tensor<T>&, const std::vector<double>&,                                \
                                       const std::vector<std::size_t>&, std::size_t, const Tensor<T>&);             \
  template FlowSample<T> sample_flow<T>(const Tensor<T>&, std::size_t, double, Rng&);                               \
  template ConsistencyTerms<T> consistency_terms<T>(const VelocityFn<T>&, const VelocityFn<T>&, const FlowSample<T>&, \
                                                    std::size_t);                                                   \
  template Tensor<T> masked_mean<T>(const Tensor<T>&, const std::vector<bool>&);                                    \
  template CfmLosses<T> cfm_losses<T>(const ConsistencyTerms<T>&);                                                  \
  template MultiSegmentLoss<T> multisegment_loss<T>(const ConsistencyTerms<T>&, const std::vector<std::size_t>&,    \
                                                    const FlowConfig&);                                             \
  template Tensor<T> acr_loss<T>(const Tensor<T>&, const Tensor<T>&, const ControlWindow&);                         \
  template Tensor<T> total_loss<T>(const Tensor<T>&, const Tensor<T>&, double);                                     \
  template LossBreakdown<T> compute_losses<T>(const VelocityFn<T>&, const VelocityFn<T>&, const FlowSample<T>&,     \
                                              const FlowConfig&, const ControlWindow&);                             \
  template Tensor<T> draw_source<T>(std::size_t, std::size_t, std::size_t, Rng&);                                   \
  template Decoded<T> infer_one_step<T>(const VelocityFn<T>&, const perception::Normalizer*, const Tensor<T>&,      \
                                        std::size_t, const ControlWindow&, double);                                 \
  template Decoded<T> infer_multi_step<T>(const VelocityFn<T>&, const perception::Normalizer*, const Tensor<T>&,    \
                                          std::size_t, std::size_t, const ControlWindow&);

FLOWKAN_FLOW(float)
FLOWKAN_FLOW(double)

}  // namespace flowkan::flow
