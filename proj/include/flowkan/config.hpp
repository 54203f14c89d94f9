#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "flowkan/envsuite.hpp"
#include "flowkan/flowmatch.hpp"
#include "flowkan/optim.hpp"
#include "flowkan/policy.hpp"

namespace flowkan {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TrainConfig {
  std::size_t epochs = 300;
  std::size_t batch = 64;
  double ema = 0.95;
  /// Stops after this many optimizer steps when nonzero.
  std::size_t max_steps = 0;
  bool operator==(const TrainConfig&) const = default;
};

/// Everything a run needs. Derived widths (state_dim, points, cond_dim and the
/// backbone's segment count) are filled in from the env, perception and flow
/// sections by `finalize`, so they never appear in the JSON.
struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t demos = 10;
  std::string out = "runs/default";
  /// Actions executed per policy call.
  std::size_t exec_horizon = 3;
  policy::ModelConfig model;
  flow::FlowConfig flow;
  AdamWConfig optimizer;
  TrainConfig train;
  env::EnvConfig env;
  env::EvalConfig eval;

  /// Syncs derived fields and validates every section.
  void finalize();
  flow::ControlWindow window() const;

  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys throw ConfigError.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::string& path);

  bool operator==(const RunConfig&) const = default;
};

/// Stable hex digest of the canonical JSON dump.
std::string config_hash(const RunConfig& cfg);

}  // namespace flowkan
