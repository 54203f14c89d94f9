#include "flowkan/backbone.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace flowkan::backbone {

namespace {

constexpr std::array<std::size_t, 5> kStageWidthIndex{0, 1, 2, 1, 0};

std::size_t unit_param_count(const BackboneConfig& cfg, std::size_t w) {
  const std::size_t cg = w / cfg.group_g, nb = cfg.spline_grid.num_basis();
  const std::size_t kan = cfg.group_g * cfg.kan_depth * cg * cg * (nb + 2);
  const std::size_t cam = 2 * w * (w / cfg.cam_reduction);
  return linear_param_count(cfg.cond_dim + cfg.time_dim, w) + rwkv::block_param_count(w) + kan + cam + 2 * w;
}

}  // namespace

void validate(const BackboneConfig& cfg) {
  if (cfg.action_dim == 0 || cfg.horizon == 0) throw std::invalid_argument("backbone: action_dim and horizon must be positive");
  if (cfg.segments_k == 0) throw std::invalid_argument("backbone: segments_k must be >= 1");
  if (cfg.time_dim == 0 || cfg.time_dim % 2 != 0) throw std::invalid_argument("backbone: time_dim must be even and positive");
  if (cfg.downsample == 0) throw std::invalid_argument("backbone: downsample must be >= 1");
  if (cfg.downsample > 1 && cfg.horizon % (cfg.downsample * cfg.downsample) != 0) {
    throw std::invalid_argument("backbone: horizon " + std::to_string(cfg.horizon) + " not divisible by downsample^2 = " +
                                std::to_string(cfg.downsample * cfg.downsample));
  }
  for (auto w : cfg.widths) {
    if (w == 0 || w % cfg.group_g != 0) {
      throw std::invalid_argument("backbone: width " + std::to_string(w) + " not divisible by group_g " +
                                  std::to_string(cfg.group_g));
    }
    if (cfg.cam_reduction == 0 || w % cfg.cam_reduction != 0) {
      throw std::invalid_argument("backbone: width " + std::to_string(w) + " not divisible by cam_reduction " +
                                  std::to_string(cfg.cam_reduction));
    }
  }
  kan::validate_grid(cfg.spline_grid);
}

std::vector<double> time_features(const BackboneConfig& cfg, double t, std::size_t segment) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("time embedding: t = " + std::to_string(t) + " outside [0, 1]");
  if (segment >= cfg.segments_k) {
    throw std::invalid_argument("time embedding: segment " + std::to_string(segment) + " >= K = " +
                                std::to_string(cfg.segments_k));
  }
  const std::size_t half = cfg.time_dim / 2;
  std::vector<double> f(cfg.time_dim + cfg.segments_k, 0.0);
  const double x = 1000.0 * t;
  for (std::size_t j = 0; j < half; ++j) {
    const double freq = std::exp(-std::log(10000.0) * double(j) / double(half));
    f[j] = std::sin(x * freq);
    f[half + j] = std::cos(x * freq);
  }
  f[cfg.time_dim + segment] = 1.0;
  return f;
}

template <class T>
TimeEmbedding<T> TimeEmbedding<T>::init(const BackboneConfig& cfg, Rng& rng) {
  TimeEmbedding e;
  e.fc1 = Linear<T>::init(cfg.time_dim + cfg.segments_k, cfg.time_hidden, rng);
  e.fc2 = Linear<T>::init(cfg.time_hidden, cfg.time_dim, rng);
  return e;
}

template <class T>
void TimeEmbedding<T>::collect(ParamList<T>& out) const {
  fc1.collect(out, "time.fc1.");
  fc2.collect(out, "time.fc2.");
}

template <class T>
Tensor<T> embed_time(const BackboneConfig& cfg, const TimeEmbedding<T>& p, const std::vector<double>& t,
                     const std::vector<std::size_t>& segment) {
  if (t.size() != segment.size()) throw ShapeError("embed_time: t and segment lengths differ");
  const std::size_t B = t.size(), F = cfg.time_dim + cfg.segments_k;
  std::vector<T> feats;
  feats.reserve(B * F);
  for (std::size_t b = 0; b < B; ++b) {
    for (double v : time_features(cfg, t[b], segment[b])) feats.push_back(T(v));
  }
  Tensor<T> x({B, F}, std::move(feats));
  return p.fc2(silu(p.fc1(x)));
}

template <class T>
Tensor<T> rwkv_kan_unit(const Tensor<T>& x, const Tensor<T>& cond, const UnitParams<T>& p, const rwkv::RwkvOptions& ropt,
                        const kan::ForwardContext& ctx) {
  if (x.rank() != 3 || cond.rank() != 2 || cond.dim(0) != x.dim(0) || cond.dim(1) != p.cond.in_dim()) {
    throw ShapeError("rwkv_kan_unit: tokens " + shape_str(x.shape()) + " with condition " + shape_str(cond.shape()));
  }
  auto h = add(x, expand_axis1(p.cond(cond), x.dim(1)));
  return kan::groupkan_block(rwkv::rwkv_block(h, p.rwkv, ropt), p.kan, ctx);
}

template <class T>
BackboneParams<T> BackboneParams<T>::init(const BackboneConfig& cfg, Rng& rng) {
  validate(cfg);
  BackboneParams p;
  p.cfg = cfg;
  p.time = TimeEmbedding<T>::init(cfg, rng);
  const auto& w = cfg.widths;
  p.in_proj = Linear<T>::init(cfg.action_dim, w[0], rng);
  if (cfg.blocks_per_stage > 0) {
    for (std::size_t s = 0; s < 5; ++s) {
      const std::size_t width = w[kStageWidthIndex[s]];
      for (std::size_t u = 0; u < cfg.blocks_per_stage; ++u) {
        UnitParams<T> unit;
        unit.cond = Linear<T>::init(cfg.cond_dim + cfg.time_dim, width, rng);
        unit.rwkv = rwkv::RwkvBlockParams<T>::init(width, rng);
        unit.kan = kan::GroupKanBlockParams<T>::init(width, cfg.group_g, cfg.spline_grid, cfg.kan_depth,
                                                     cfg.cam_reduction, cfg.drop_path, rng);
        p.stages[s].push_back(std::move(unit));
      }
    }
    p.down[0] = Linear<T>::init(w[0], w[1], rng);
    p.down[1] = Linear<T>::init(w[1], w[2], rng);
    p.up[0] = Linear<T>::init(w[1], w[0], rng);
    p.up[1] = Linear<T>::init(w[2], w[1], rng);
    p.skip[0] = Linear<T>::init(2 * w[0], w[0], rng);
    p.skip[1] = Linear<T>::init(2 * w[1], w[1], rng);
  }
  const std::size_t heads = cfg.separate_heads ? cfg.segments_k : 1;
  for (std::size_t h = 0; h < heads; ++h) p.out_proj.push_back(Linear<T>::zeros(w[0], cfg.action_dim));
  return p;
}

template <class T>
void BackboneParams<T>::collect(ParamList<T>& out) const {
  in_proj.collect(out, "in_proj.");
  std::size_t layer = 0;
  for (const auto& stage : stages) {
    for (const auto& unit : stage) {
      const std::string id = std::to_string(layer++);
      unit.cond.collect(out, "cond." + id + ".");
      unit.rwkv.collect(out, "rwkv." + id + ".");
      unit.kan.collect(out, id);
    }
  }
  if (cfg.blocks_per_stage > 0) {
    for (std::size_t i = 0; i < 2; ++i) {
      down[i].collect(out, "down." + std::to_string(i) + ".");
      up[i].collect(out, "up." + std::to_string(i) + ".");
      skip[i].collect(out, "skip." + std::to_string(i) + ".");
    }
  }
  if (out_proj.size() == 1) {
    out_proj[0].collect(out, "out_proj.");
  } else {
    for (std::size_t h = 0; h < out_proj.size(); ++h) out_proj[h].collect(out, "out_proj." + std::to_string(h) + ".");
  }
}

template <class T>
Tensor<T> velocity_forward(const BackboneParams<T>& p, const Tensor<T>& a_t, const std::vector<double>& t,
                           const std::vector<std::size_t>& segment, const Tensor<T>& cond,
                           const kan::ForwardContext& ctx) {
  const auto& cfg = p.cfg;
  if (a_t.rank() != 3 || a_t.dim(1) != cfg.horizon || a_t.dim(2) != cfg.action_dim) {
    throw ShapeError("velocity: expected [B x " + std::to_string(cfg.horizon) + " x " +
                     std::to_string(cfg.action_dim) + "] actions, got " + shape_str(a_t.shape()));
  }
  const std::size_t B = a_t.dim(0);
  if (cond.rank() != 2 || cond.dim(0) != B || cond.dim(1) != cfg.cond_dim) {
    throw ShapeError("velocity: condition " + shape_str(cond.shape()) + " vs [" + std::to_string(B) + "x" +
                     std::to_string(cfg.cond_dim) + "]");
  }
  if (t.size() != B || segment.size() != B) throw ShapeError("velocity: need one (t, segment) per sample");
  if (!all_finite(a_t) || !all_finite(cond)) throw NumericError("velocity: non-finite input");

  auto full_cond = concat_last<T>({cond, embed_time(cfg, p.time, t, segment)});
  rwkv::RwkvOptions ropt;
  ropt.bidir_dedup = cfg.bidir_dedup;
  auto run_stage = [&](Tensor<T> h, std::size_t s) {
    for (const auto& unit : p.stages[s]) h = rwkv_kan_unit(h, full_cond, unit, ropt, ctx);
    return h;
  };
  const std::size_t f = cfg.downsample;
  auto h = p.in_proj(a_t);
  if (cfg.blocks_per_stage > 0) {
    auto s0 = run_stage(h, 0);
    h = p.down[0](f > 1 ? pool_time(s0, f) : s0);
    auto s1 = run_stage(h, 1);
    h = p.down[1](f > 1 ? pool_time(s1, f) : s1);
    h = run_stage(h, 2);
    h = p.up[1](h);
    if (f > 1) h = repeat_time(h, f);
    h = run_stage(p.skip[1](concat_last<T>({h, s1})), 3);
    h = p.up[0](h);
    if (f > 1) h = repeat_time(h, f);
    h = run_stage(p.skip[0](concat_last<T>({h, s0})), 4);
  }
  if (p.out_proj.size() == 1) return p.out_proj[0](h);
  Tensor<T> out;
  for (std::size_t i = 0; i < p.out_proj.size(); ++i) {
    std::vector<T> mask(B);
    for (std::size_t b = 0; b < B; ++b) mask[b] = segment[b] == i ? T(1) : T(0);
    auto head = scale_rows(p.out_proj[i](h), Tensor<T>({B}, std::move(mask)));
    out = i == 0 ? head : add(out, head);
  }
  return out;
}

std::size_t count_params(const BackboneConfig& cfg) {
  validate(cfg);
  const auto& w = cfg.widths;
  const std::size_t heads = cfg.separate_heads ? cfg.segments_k : 1;
  std::size_t n = linear_param_count(cfg.action_dim, w[0]) + heads * linear_param_count(w[0], cfg.action_dim);
  if (cfg.blocks_per_stage == 0) return n;
  for (auto s : kStageWidthIndex) n += cfg.blocks_per_stage * unit_param_count(cfg, w[s]);
  n += linear_param_count(w[0], w[1]) + linear_param_count(w[1], w[2]);
  n += linear_param_count(w[1], w[0]) + linear_param_count(w[2], w[1]);
  n += linear_param_count(2 * w[0], w[0]) + linear_param_count(2 * w[1], w[1]);
  return n;
}

std::size_t count_time_embedding_params(const BackboneConfig& cfg) {
  return linear_param_count(cfg.time_dim + cfg.segments_k, cfg.time_hidden) +
         linear_param_count(cfg.time_hidden, cfg.time_dim);
}

std::size_t count_stage_spline_coefficients(const BackboneConfig& cfg, std::size_t stage) {
  validate(cfg);
  if (stage >= 5) throw std::out_of_range("stage index " + std::to_string(stage) + " >= 5");
  const std::size_t w = cfg.widths[kStageWidthIndex[stage]];
  const std::size_t cg = w / cfg.group_g;
  return cfg.blocks_per_stage * cfg.group_g * cfg.kan_depth * cg * cg * cfg.spline_grid.num_basis();
}

#define FLOWKAN_BACKBONE(T)                                                                                   \
  template struct TimeEmbedding<T>;                                                                           \
  template struct BackboneParams<T>;                                                                          \
  template Tensor<T> embed_time<T>(const BackboneConfig&, const TimeEmbedding<T>&, const std::vector<double>&, \
                                   const std::vector<std::size_t>&);                                          \
  template Tensor<T> rwkv_kan_unit<T>(const Tensor<T>&, const Tensor<T>&, const UnitParams<T>&,               \
                                      const rwkv::RwkvOptions&, const kan::ForwardContext&);                  \
  template Tensor<T> velocity_forward<T>(const BackboneParams<T>&, const Tensor<T>&, const std::vector<double>&, \
                                         const std::vector<std::size_t>&, const Tensor<T>&,                   \
                                         const kan::ForwardContext&);

FLOWKAN_BACKBONE(float)
FLOWKAN_BACKBONE(double)

}  // namespace flowkan::backbone
