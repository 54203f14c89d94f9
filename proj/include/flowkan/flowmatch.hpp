#pragma once

#include <functional>
#include <vector>

#include "flowkan/ops.hpp"
#include "flowkan/perception.hpp"
#include "flowkan/random.hpp"

namespace flowkan::flow {

/// Velocity field v(a_t, t, segment) evaluated on a batch. Condition inputs
/// are bound by the caller.
template <class T>
using VelocityFn =
    std::function<Tensor<T>(const Tensor<T>& a_t, const std::vector<double>& t, const std::vector<std::size_t>& segment)>;

struct FlowConfig {
  std::size_t segments_k = 2;
  double dt = 0.01;
  double alpha = 1.0;
  /// Per-segment weights; empty means 1 for every segment.
  std::vector<double> lambdas;
  double lambda_acr = 1.0;

  double lambda(std::size_t i) const { return lambdas.empty() ? 1.0 : lambdas.at(i); }
  bool operator==(const FlowConfig&) const = default;
};

void validate(const FlowConfig& cfg);

/// Executed action indices {u0, ..., u0 + H - 1} with u0 = n_obs - 1.
struct ControlWindow {
  std::size_t u0 = 1;
  std::size_t H = 3;

  /// Throws when the window does not fit inside the predicted horizon.
  static ControlWindow make(std::size_t n_obs, std::size_t H, std::size_t horizon);
  std::vector<std::size_t> indices() const;
};

/// a_t = (1 - t) a_src + t a_tar with one t per batch row.
template <class T>
Tensor<T> interpolate(const Tensor<T>& a_src, const Tensor<T>& a_tar, const std::vector<double>& t);

/// f = a_t + (1 - t) v
template <class T>
Tensor<T> euler_decode(const Tensor<T>& a_t, const std::vector<double>& t, const Tensor<T>& v);

/// f = a_t + ((i + 1) / K - t) v for t in [i/K, (i+1)/K].
template <class T>
Tensor<T> segment_decode(const Tensor<T>& a_t, const std::vector<double>& t, const std::vector<std::size_t>& segment,
                         std::size_t K, const Tensor<T>& v);

template <class T>
struct FlowSample {
  Tensor<T> a_src, a_tar;
  std::vector<double> t;
  std::vector<std::size_t> segment;
  double dt = 0.01;
};

/// Uniform segment, then t ~ U[i/K, (i+1)/K - dt], a_src ~ N(0, I).
template <class T>
FlowSample<T> sample_flow(const Tensor<T>& a_tar, std::size_t K, double dt, Rng& rng);

/// Per-sample consistency residuals between the student at (a_t, t) and the
/// gradient-blocked teacher at (a_{t+dt}, t+dt), both decoded to the segment end.
template <class T>
struct ConsistencyTerms {
  Tensor<T> a_t;        // [B x T x D]
  Tensor<T> v_student;  // [B x T x D]
  Tensor<T> end;        // [B] ||f_student - f_teacher||^2
  Tensor<T> vel;        // [B] ||v_student - v_teacher||^2
};

template <class T>
ConsistencyTerms<T> consistency_terms(const VelocityFn<T>& student, const VelocityFn<T>& teacher,
                                      const FlowSample<T>& s, std::size_t K);

/// sum_b w_b x_b / n with w a 0/1 mask and n its count; 0 when the mask is empty.
template <class T>
Tensor<T> masked_mean(const Tensor<T>& per_sample, const std::vector<bool>& mask);

template <class T>
struct CfmLosses {
  Tensor<T> l_end, l_vel;
};

/// Batch means of the endpoint and velocity residuals.
template <class T>
CfmLosses<T> cfm_losses(const ConsistencyTerms<T>& terms);

template <class T>
struct MultiSegmentLoss {
  Tensor<T> total;
  std::vector<Tensor<T>> per_segment;  // E[a_i] + alpha E[b_i] before lambda_i
};

/// sum_i lambda_i (E_i[end] + alpha E_i[vel]); an empty segment contributes 0.
template <class T>
MultiSegmentLoss<T> multisegment_loss(const ConsistencyTerms<T>& terms, const std::vector<std::size_t>& segment,
                                      const FlowConfig& cfg);

/// Mean over the batch and the window of ||decoded_u - expert_u||^2.
template <class T>
Tensor<T> acr_loss(const Tensor<T>& decoded, const Tensor<T>& expert, const ControlWindow& window);

template <class T>
struct LossBreakdown {
  Tensor<T> l_end, l_vel, l_mfm, l_acr, total;
  std::vector<Tensor<T>> l_mfm_segments;
};

/// total = l_mfm + lambda_acr * l_acr
template <class T>
Tensor<T> total_loss(const Tensor<T>& l_mfm, const Tensor<T>& l_acr, double lambda_acr);

/// Full training objective on one sample batch: one student and one teacher
/// evaluation; ACR reuses the student velocity with the (1 - t) decode.
template <class T>
LossBreakdown<T> compute_losses(const VelocityFn<T>& student, const VelocityFn<T>& teacher, const FlowSample<T>& s,
                                const FlowConfig& cfg, const ControlWindow& window);

template <class T>
struct Decoded {
  Tensor<T> normalized;  // clamped to [-1, 1]
  std::vector<std::vector<std::vector<double>>> actions;  // denormalized [B][T][D]
  std::vector<std::vector<std::vector<double>>> window;   // actions restricted to the control window
  std::size_t nfe = 0;
};

/// Standard normal [B x T x D].
template <class T>
Tensor<T> draw_source(std::size_t B, std::size_t horizon, std::size_t action_dim, Rng& rng);

/// Chained segment decodes from t_start to 1 (one evaluation per remaining
/// segment), clamp, denormalize, slice the window.
template <class T>
Decoded<T> infer_one_step(const VelocityFn<T>& v, const perception::Normalizer* action_norm, const Tensor<T>& a_src,
                          std::size_t K, const ControlWindow& window, double t_start = 0.0);

/// Uniform Euler integration from 0 to 1 with n_steps evaluations.
template <class T>
Decoded<T> infer_multi_step(const VelocityFn<T>& v, const perception::Normalizer* action_norm, const Tensor<T>& a_src,
                            std::size_t n_steps, std::size_t K, const ControlWindow& window);

}  // namespace flowkan::flow
