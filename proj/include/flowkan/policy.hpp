#pragma once

#include "flowkan/backbone.hpp"
#include "flowkan/flowmatch.hpp"
#include "flowkan/perception.hpp"

namespace flowkan::policy {

struct ModelConfig {
  perception::PerceptionConfig perception;
  backbone::BackboneConfig backbone;
  bool operator==(const ModelConfig&) const = default;
};

/// Throws when the perception output width differs from the backbone's cond_dim.
void validate(const ModelConfig& cfg);

/// Point encoder, state encoder and velocity network trained jointly.
template <class T>
struct FlowPolicyModel {
  ModelConfig cfg;
  perception::PointEncoder<T> points;
  perception::StateEncoder<T> state;
  backbone::BackboneParams<T> net;

  static FlowPolicyModel init(const ModelConfig& cfg, Rng& rng);
  /// Every learnable tensor, in a fixed order (checkpoint and EMA rely on it).
  ParamList<T> parameters() const;
};

/// Overwrites dst values with src values; lists must match in names and shapes.
template <class T>
void copy_values(const ParamList<T>& dst, const ParamList<T>& src);

/// states [B x n_obs*state_dim] (normalized), clouds [B*n_obs x N x 3] -> [B x cond_dim]
template <class T>
Tensor<T> condition(const FlowPolicyModel<T>& m, const Tensor<T>& states, const Tensor<T>& clouds);

template <class T>
flow::VelocityFn<T> bind_velocity(const FlowPolicyModel<T>& m, Tensor<T> cond, kan::ForwardContext ctx = {});

}  // namespace flowkan::policy
