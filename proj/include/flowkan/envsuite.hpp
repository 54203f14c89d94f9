#pragma once

#include <array>
#include <functional>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "flowkan/perception.hpp"
#include "flowkan/random.hpp"

namespace flowkan::env {

enum class Task { Reach, Push };

Task parse_task(const std::string& name);
std::string task_name(Task task);

struct EnvConfig {
  Task task = Task::Reach;
  double max_step = 0.08;
  double success_radius = 0.05;
  std::size_t episode_cap = 100;
  double point_noise = 0.01;
  /// Cloud sampled on the discs before farthest point sampling.
  std::size_t raw_points = 128;
  std::size_t points = 64;
  double effector_radius = 0.03;
  double object_radius = 0.05;
  double target_radius = 0.05;
  /// Random FPS start index per observation (augmentation) instead of 0.
  bool random_fps_seed = false;

  bool operator==(const EnvConfig&) const = default;
};

std::size_t state_dim(Task task);

using Vec2 = std::array<double, 2>;

struct ToyEnvState {
  Vec2 effector{};
  Vec2 target{};
  Vec2 object{};  // push only
  std::size_t step = 0;
  bool success = false;
};

struct Observation {
  std::vector<double> state;
  perception::PointCloud points;
};

struct EpisodeResult {
  bool success = false;
  std::size_t steps_used = 0;
  double final_distance = 0.0;
  std::size_t nfe = 0;
};

class ToyEnv {
 public:
  ToyEnv(EnvConfig cfg, std::uint64_t seed);

  /// Samples a fresh start configuration; returns its observation.
  Observation reset();
  /// Moves the effector by clamp(action, -1, 1) * max_step.
  Observation step(const std::vector<double>& action);
  Observation observe();

  const ToyEnvState& state() const { return s_; }
  void set_state(const ToyEnvState& s) { s_ = s; }
  const EnvConfig& config() const { return cfg_; }
  /// Effector-target (reach) or object-target (push) distance.
  double distance() const;
  bool done() const { return s_.success || s_.step >= cfg_.episode_cap; }

 private:
  EnvConfig cfg_;
  Rng rng_;
  ToyEnvState s_;
};

/// Deterministic kinematics shared by the environment and the expert's lookahead.
ToyEnvState advance(const EnvConfig& cfg, ToyEnvState s, const std::vector<double>& action);
double task_distance(const EnvConfig& cfg, const ToyEnvState& s);

/// Single normalized expert action for the current state.
std::vector<double> expert_action(const EnvConfig& cfg, const ToyEnvState& s);
/// Expert chunk of H actions obtained by rolling the kinematics forward.
std::vector<std::vector<double>> scripted_expert(const EnvConfig& cfg, const ToyEnvState& s, std::size_t H);
/// Recovers the kinematic state from an observation's state vector.
ToyEnvState state_from_observation(const EnvConfig& cfg, const std::vector<double>& state);

/// One expert episode, recorded as a demonstration.
perception::Demonstration record_demo(const EnvConfig& cfg, std::uint64_t seed);
std::vector<perception::Demonstration> generate_corpus(const EnvConfig& cfg, std::size_t count, std::uint64_t seed);

/// Maps the last n_obs observations to executable actions; `nfe` accumulates
/// network evaluations.
using PolicyFn =
    std::function<std::vector<std::vector<double>>(const std::vector<Observation>& window, Rng& rng, std::size_t& nfe)>;

PolicyFn expert_policy(const EnvConfig& cfg, std::size_t H);

/// Observation window warm-started with n_obs copies of the first observation;
/// each policy call executes its whole action chunk unless the episode ends.
EpisodeResult receding_horizon_rollout(const PolicyFn& policy, ToyEnv& env, std::size_t n_obs, Rng& rng);

struct EvalConfig {
  std::size_t rounds = 10;
  std::size_t episodes_per_round = 20;
  std::vector<std::uint64_t> seeds{0, 42, 100};
  std::size_t jobs = 1;
  bool operator==(const EvalConfig&) const = default;
};

struct SuccessRates {
  double sr1 = 0, sr3 = 0, sr5 = 0;
};

/// Means of the top 1/3/5 round outcomes (fewer rounds: all of them).
SuccessRates top_k_rates(std::vector<double> round_rates);

struct SeedReport {
  std::uint64_t seed = 0;
  std::vector<double> round_rates;
  SuccessRates rates;
  double mean_steps = 0;
  double mean_nfe = 0;
};

struct EvalReport {
  std::vector<SeedReport> seeds;
  SuccessRates mean, stddev;  // population statistics over seeds
  nlohmann::json to_json() const;
};

/// Runs rounds x episodes per seed. Episode i of seed s uses streams derived
/// from (s, i), so results do not depend on the number of jobs.
SeedReport evaluate_seed(const PolicyFn& policy, const EnvConfig& env_cfg, const EvalConfig& eval, std::uint64_t seed,
                         std::size_t n_obs);
EvalReport aggregate(std::vector<SeedReport> seeds);
EvalReport evaluate_policy(const PolicyFn& policy, const EnvConfig& env_cfg, const EvalConfig& eval, std::size_t n_obs);

}  // namespace flowkan::env
