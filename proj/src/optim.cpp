#include "flowkan/optim.hpp"

#include <cmath>
#include <string>

namespace flowkan {

template <class T>
void adamw_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v,
                  std::int64_t step, const AdamWConfig& c) {
  const double bc1 = 1.0 - std::pow(c.beta1, double(step));
  const double bc2 = 1.0 - std::pow(c.beta2, double(step));
  const T b1 = T(c.beta1), b2 = T(c.beta2);
  const T decay = T(1.0 - c.lr * c.weight_decay);
  const T step_size = T(c.lr / bc1);
  const T inv_sqrt_bc2 = T(1.0 / std::sqrt(bc2));
  const T eps = T(c.eps);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const T g = grad.empty() ? T(0) : grad[i];
    param[i] *= decay;
    m[i] = b1 * m[i] + (T(1) - b1) * g;
    v[i] = b2 * v[i] + (T(1) - b2) * g * g;
    param[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + eps);
  }
}

template <class T>
AdamW<T>::AdamW(ParamList<T> params, AdamWConfig config) : params_(std::move(params)), config_(config) {
  if (!(config_.lr > 0)) throw std::invalid_argument("AdamW: lr must be positive");
  for (const auto& p : params_) {
    m_.push_back(Tensor<T>::zeros(p.tensor.shape()));
    v_.push_back(Tensor<T>::zeros(p.tensor.shape()));
  }
}

template <class T>
void AdamW<T>::step() {
  for (const auto& p : params_) {
    for (auto g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericError("AdamW: non-finite gradient in parameter '" + p.name + "'");
    }
  }
  ++step_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i].tensor;
    adamw_update<T>(p.mutable_data(), p.grad(), m_[i].mutable_data(), v_[i].mutable_data(), step_, config_);
  }
}

template <class T>
EmaState<T>::EmaState(const ParamList<T>& params, double decay) : decay_(decay) {
  if (!(decay >= 0.0 && decay < 1.0)) throw std::invalid_argument("EMA decay must lie in [0, 1)");
  for (const auto& p : params) shadows_.push_back({p.name, p.tensor.detach()});
}

template <class T>
EmaState<T>::EmaState(ParamList<T> shadows, double decay, bool) : shadows_(std::move(shadows)), decay_(decay) {
  if (!(decay >= 0.0 && decay < 1.0)) throw std::invalid_argument("EMA decay must lie in [0, 1)");
}

template <class T>
void EmaState<T>::update(const ParamList<T>& params) {
  if (params.size() != shadows_.size()) {
    throw ShapeError("EMA: " + std::to_string(params.size()) + " parameters for " +
                     std::to_string(shadows_.size()) + " shadows");
  }
  const T d = T(decay_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i].tensor;
    auto& s = shadows_[i].tensor;
    if (p.shape() != s.shape()) {
      throw ShapeError("EMA: parameter '" + params[i].name + "' has shape " + shape_str(p.shape()) +
                       ", shadow has " + shape_str(s.shape()));
    }
    auto sv = s.mutable_data();
    const auto pv = p.data();
    for (std::size_t k = 0; k < sv.size(); ++k) sv[k] = d * sv[k] + (T(1) - d) * pv[k];
  }
}

template class AdamW<float>;
template class AdamW<double>;
template class EmaState<float>;
template class EmaState<double>;
template void adamw_update<float>(std::span<float>, std::span<const float>, std::span<float>, std::span<float>,
                                  std::int64_t, const AdamWConfig&);
template void adamw_update<double>(std::span<double>, std::span<const double>, std::span<double>,
                                   std::span<double>, std::int64_t, const AdamWConfig&);

}  // namespace flowkan
