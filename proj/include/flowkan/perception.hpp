#pragma once

#include <array>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "flowkan/layers.hpp"

namespace flowkan::perception {

using Point = std::array<double, 3>;
using PointCloud = std::vector<Point>;

/// Greedy farthest point sampling starting at `seed_index`. Ties go to the
/// lowest index. Throws if m is 0 or exceeds the cloud size.
std::vector<std::size_t> fps(const PointCloud& points, std::size_t m, std::size_t seed_index = 0);

struct PerceptionConfig {
  std::size_t n_obs = 2;
  std::size_t points = 64;
  std::size_t state_dim = 6;
  std::size_t point_hidden1 = 64;
  std::size_t point_hidden2 = 128;
  std::size_t vision_dim = 64;
  std::size_t state_hidden = 64;
  std::size_t state_emb = 64;

  /// Width of the flattened condition handed to the velocity network.
  std::size_t cond_dim() const { return n_obs * vision_dim + state_emb; }
  bool operator==(const PerceptionConfig&) const = default;
};

/// Shared per-point MLP (3 -> h1 -> h2, SiLU), max-pool over points, linear to vision_dim.
template <class T>
struct PointEncoder {
  Linear<T> fc1, fc2, proj;
  static PointEncoder init(const PerceptionConfig& cfg, Rng& rng);
  void collect(ParamList<T>& out) const;
};

/// [B x N x 3] -> [B x vision_dim]
template <class T>
Tensor<T> encode_points(const PointEncoder<T>& p, const Tensor<T>& points);

/// Two-layer MLP over the flattened observation window.
template <class T>
struct StateEncoder {
  Linear<T> fc1, fc2;
  static StateEncoder init(const PerceptionConfig& cfg, Rng& rng);
  void collect(ParamList<T>& out) const;
};

/// [B x n_obs*state_dim] -> [B x state_emb]
template <class T>
Tensor<T> encode_state(const StateEncoder<T>& p, const Tensor<T>& states);

/// Per-dimension affine map of the corpus range onto [-1, 1].
class Normalizer {
 public:
  Normalizer() = default;
  Normalizer(std::vector<double> lo, std::vector<double> hi);

  /// Throws on an empty corpus or ragged rows.
  static Normalizer fit(const std::vector<std::vector<double>>& rows);

  std::size_t dim() const { return lo_.size(); }
  bool empty() const { return lo_.empty(); }
  const std::vector<double>& lo() const { return lo_; }
  const std::vector<double>& hi() const { return hi_; }

  /// Degenerate dimensions (hi == lo) map to 0 and back to lo.
  double normalize(std::size_t d, double x) const;
  double denormalize(std::size_t d, double y) const;
  std::vector<double> normalize(const std::vector<double>& x) const;
  std::vector<double> denormalize(const std::vector<double>& y) const;

  nlohmann::json to_json() const;
  static Normalizer from_json(const nlohmann::json& j);

  bool operator==(const Normalizer&) const = default;

 private:
  std::vector<double> lo_, hi_;
};

/// One scripted episode: observation at every step and the action taken there.
struct Demonstration {
  std::vector<std::vector<double>> obs_state;  // [L x state_dim]
  std::vector<PointCloud> obs_points;          // [L x N]
  std::vector<std::vector<double>> actions;    // [L x action_dim]

  bool operator==(const Demonstration&) const = default;
};

nlohmann::json to_json(const Demonstration& d);
Demonstration demonstration_from_json(const nlohmann::json& j);

/// JSON-lines: one episode per line with keys obs_state, obs_points, actions.
void write_corpus(const std::string& path, const std::vector<Demonstration>& demos);
std::vector<Demonstration> read_corpus(const std::string& path);

}  // namespace flowkan::perception
