#pragma once

#include <array>
#include <vector>

#include "flowkan/groupkan.hpp"
#include "flowkan/layers.hpp"
#include "flowkan/rwkv.hpp"

namespace flowkan::backbone {

struct BackboneConfig {
  std::array<std::size_t, 3> widths{32, 64, 128};
  std::size_t blocks_per_stage = 1;
  std::size_t action_dim = 2;
  std::size_t horizon = 4;
  /// Size of the external condition (vision + state embeddings).
  std::size_t cond_dim = 192;
  std::size_t segments_k = 2;
  /// Temporal pooling factor between stages; 1 keeps the length fixed.
  std::size_t downsample = 1;
  std::size_t group_g = 4;
  std::size_t kan_depth = 1;
  std::size_t cam_reduction = 4;
  kan::SplineGrid spline_grid{};
  double drop_path = 0.0;
  bool bidir_dedup = false;
  std::size_t time_dim = 64;
  std::size_t time_hidden = 128;
  /// One output head per segment instead of a shared head.
  bool separate_heads = false;

  bool operator==(const BackboneConfig&) const = default;
};

/// Throws std::invalid_argument describing the first inconsistency.
void validate(const BackboneConfig& cfg);

/// Sinusoidal features of t (scaled by 1000) followed by one-hot(segment).
std::vector<double> time_features(const BackboneConfig& cfg, double t, std::size_t segment);

template <class T>
struct TimeEmbedding {
  Linear<T> fc1, fc2;

  static TimeEmbedding init(const BackboneConfig& cfg, Rng& rng);
  void collect(ParamList<T>& out) const;
};

/// [B x time_dim] embedding for per-sample (t, segment).
template <class T>
Tensor<T> embed_time(const BackboneConfig& cfg, const TimeEmbedding<T>& p, const std::vector<double>& t,
                     const std::vector<std::size_t>& segment);

template <class T>
struct UnitParams {
  Linear<T> cond;  // (cond_dim + time_dim) -> width
  rwkv::RwkvBlockParams<T> rwkv;
  kan::GroupKanBlockParams<T> kan;
};

/// x' = GroupKAN(RWKV(x + proj(cond))) with cond [B x cond_in] broadcast over T.
template <class T>
Tensor<T> rwkv_kan_unit(const Tensor<T>& x, const Tensor<T>& cond, const UnitParams<T>& p, const rwkv::RwkvOptions& ropt,
                        const kan::ForwardContext& ctx = {});

template <class T>
struct BackboneParams {
  BackboneConfig cfg;
  TimeEmbedding<T> time;
  Linear<T> in_proj;
  /// enc0, enc1, bottleneck, dec1, dec0
  std::array<std::vector<UnitParams<T>>, 5> stages;
  std::array<Linear<T>, 2> down;  // w0->w1, w1->w2
  std::array<Linear<T>, 2> up;    // w1->w0, w2->w1
  std::array<Linear<T>, 2> skip;  // 2w0->w0, 2w1->w1
  std::vector<Linear<T>> out_proj;

  /// Output heads start at zero, so the initial velocity is exactly 0.
  static BackboneParams init(const BackboneConfig& cfg, Rng& rng);

  /// Everything except the time embedding (see count_params).
  void collect(ParamList<T>& out) const;
  void collect_time(ParamList<T>& out) const { time.collect(out); }
};

/// v_theta(a_t, t, segment, cond): [B x T x D] -> [B x T x D].
template <class T>
Tensor<T> velocity_forward(const BackboneParams<T>& p, const Tensor<T>& a_t, const std::vector<double>& t,
                           const std::vector<std::size_t>& segment, const Tensor<T>& cond,
                           const kan::ForwardContext& ctx = {});

/// Learnable scalars of the velocity network, excluding the time embedding.
std::size_t count_params(const BackboneConfig& cfg);
std::size_t count_time_embedding_params(const BackboneConfig& cfg);
/// Spline coefficients held by the GroupKAN layers of one stage (0..4).
std::size_t count_stage_spline_coefficients(const BackboneConfig& cfg, std::size_t stage);

}  // namespace flowkan::backbone
