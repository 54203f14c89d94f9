#include "flowkan/policy.hpp"

#include <stdexcept>

namespace flowkan::policy {

void validate(const ModelConfig& cfg) {
  backbone::validate(cfg.backbone);
  if (cfg.perception.cond_dim() != cfg.backbone.cond_dim) {
    throw std::invalid_argument("model: perception yields a " + std::to_string(cfg.perception.cond_dim()) +
                                "-wide condition but backbone.cond_dim is " + std::to_string(cfg.backbone.cond_dim));
  }
  if (cfg.perception.n_obs == 0 || cfg.perception.points == 0 || cfg.perception.state_dim == 0) {
    throw std::invalid_argument("model: n_obs, points and state_dim must be positive");
  }
}

template <class T>
FlowPolicyModel<T> FlowPolicyModel<T>::init(const ModelConfig& cfg, Rng& rng) {
  validate(cfg);
  FlowPolicyModel m;
  m.cfg = cfg;
  m.points = perception::PointEncoder<T>::init(cfg.perception, rng);
  m.state = perception::StateEncoder<T>::init(cfg.perception, rng);
  m.net = backbone::BackboneParams<T>::init(cfg.backbone, rng);
  return m;
}

template <class T>
ParamList<T> FlowPolicyModel<T>::parameters() const {
  ParamList<T> out;
  points.collect(out);
  state.collect(out);
  net.collect_time(out);
  net.collect(out);
  return out;
}

template <class T>
void copy_values(const ParamList<T>& dst, const ParamList<T>& src) {
  if (dst.size() != src.size()) throw ShapeError("copy_values: parameter counts differ");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].name != src[i].name || dst[i].tensor.shape() != src[i].tensor.shape()) {
      throw ShapeError("copy_values: " + dst[i].name + " " + shape_str(dst[i].tensor.shape()) + " vs " + src[i].name +
                       " " + shape_str(src[i].tensor.shape()));
    }
    auto d = dst[i].tensor.storage();
    d->data = src[i].tensor.storage()->data;
  }
}

template <class T>
Tensor<T> condition(const FlowPolicyModel<T>& m, const Tensor<T>& states, const Tensor<T>& clouds) {
  const auto& pc = m.cfg.perception;
  if (states.rank() != 2) throw ShapeError("condition: states must be [B x n_obs*state_dim]");
  const std::size_t B = states.dim(0);
  if (clouds.rank() != 3 || clouds.dim(0) != B * pc.n_obs) {
    throw ShapeError("condition: clouds " + shape_str(clouds.shape()) + " for " + std::to_string(B) + " windows of " +
                     std::to_string(pc.n_obs));
  }
  auto vision = reshape(perception::encode_points(m.points, clouds), Shape{B, pc.n_obs * pc.vision_dim});
  auto st = perception::encode_state(m.state, states);
  return concat_last<T>({st, vision});
}

template <class T>
flow::VelocityFn<T> bind_velocity(const FlowPolicyModel<T>& m, Tensor<T> cond, kan::ForwardContext ctx) {
  return [&m, cond, ctx](const Tensor<T>& a, const std::vector<double>& t, const std::vector<std::size_t>& seg) {
    return backbone::velocity_forward(m.net, a, t, seg, cond, ctx);
  };
}

#define FLOWKAN_POLICY(T)                                                                        \
  template struct FlowPolicyModel<T>;                                                            \
  template void copy_values<T>(const ParamList<T>&, const ParamList<T>&);                        \
  template Tensor<T> condition<T>(const FlowPolicyModel<T>&, const Tensor<T>&, const Tensor<T>&); \
  template flow::VelocityFn<T> bind_velocity<T>(const FlowPolicyModel<T>&, Tensor<T>, kan::ForwardContext);

FLOWKAN_POLICY(float)
FLOWKAN_POLICY(double)

}  // namespace flowkan::policy
