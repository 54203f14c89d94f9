#pragma once

#include <cstdint>
#include <vector>

#include "flowkan/tensor.hpp"

namespace flowkan {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-6;

  bool operator==(const AdamWConfig&) const = default;
};

/// AdamW with bias correction and decoupled weight decay. Moments are kept in
/// the parameter's own precision and are shape-matched to it.
template <class T>
class AdamW {
 public:
  AdamW(ParamList<T> params, AdamWConfig config);

  /// Applies one update from the gradients currently held by the parameters.
  /// Parameters without a gradient are treated as having a zero gradient.
  void step();

  std::int64_t step_count() const { return step_; }
  const AdamWConfig& config() const { return config_; }
  AdamWConfig& config() { return config_; }
  const ParamList<T>& params() const { return params_; }

  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }
  void set_step_count(std::int64_t step) { step_ = step; }

 private:
  ParamList<T> params_;
  AdamWConfig config_;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
  std::int64_t step_ = 0;
};

/// Element-wise AdamW update on plain buffers (exposed for direct testing).
template <class T>
void adamw_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v,
                  std::int64_t step, const AdamWConfig& config);

/// Shadow copy of a parameter list: shadow <- decay*shadow + (1-decay)*param.
template <class T>
class EmaState {
 public:
  /// Shadows start as copies of `params`.
  EmaState(const ParamList<T>& params, double decay);
  /// Adopts existing shadow tensors (e.g. the teacher network's parameters).
  EmaState(ParamList<T> shadows, double decay, bool adopt);

  void update(const ParamList<T>& params);

  double decay() const { return decay_; }
  const ParamList<T>& shadows() const { return shadows_; }
  ParamList<T>& shadows() { return shadows_; }

 private:
  ParamList<T> shadows_;
  double decay_;
};

}  // namespace flowkan
