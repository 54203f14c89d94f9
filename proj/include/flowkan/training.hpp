#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>

#include "flowkan/config.hpp"

namespace flowkan::train {

/// Windowed training samples cut from a demo corpus. For step tau of a demo
/// the sample holds observations tau-n_obs+1..tau and actions
/// tau-u0..tau-u0+horizon-1, edge-padded at both ends of the episode.
struct Dataset {
  std::size_t n_obs = 2, horizon = 4, state_dim = 6, points = 64, action_dim = 2;
  perception::Normalizer state_norm, action_norm;
  std::vector<std::vector<float>> states;   // [n_obs*state_dim], normalized
  std::vector<std::vector<float>> clouds;   // [n_obs*points*3]
  std::vector<std::vector<float>> actions;  // [horizon*action_dim], normalized

  /// Fits both normalizers on the corpus. Throws ConfigError on dimension mismatch.
  static Dataset build(const std::vector<perception::Demonstration>& demos, const RunConfig& cfg);
  /// Reuses fitted normalizers (e.g. when resuming).
  static Dataset build(const std::vector<perception::Demonstration>& demos, const RunConfig& cfg,
                       perception::Normalizer state_norm, perception::Normalizer action_norm);
  std::size_t size() const { return actions.size(); }

  struct Batch {
    Tensor<float> states;   // [B x n_obs*state_dim]
    Tensor<float> clouds;   // [B*n_obs x points x 3]
    Tensor<float> actions;  // [B x horizon x action_dim]
  };
  Batch gather(const std::vector<std::size_t>& index) const;
};

struct StepMetrics {
  std::size_t step = 0;
  double l_end = 0, l_vel = 0, l_mfm = 0, l_acr = 0, total = 0;
  nlohmann::json to_json() const;
};

/// Student trained by AdamW; the teacher network doubles as the EMA shadow.
class Trainer {
 public:
  Trainer(RunConfig cfg, Dataset data);

  StepMetrics step(const std::vector<std::size_t>& batch);
  /// Loss of the current parameters on a batch without updating anything.
  StepMetrics evaluate(const std::vector<std::size_t>& batch);
  /// Continues epoch by epoch until train.epochs or train.max_steps is reached.
  void run(const std::function<void(const StepMetrics&)>& on_step = {});
  bool finished() const;

  void save(const std::filesystem::path& path) const;
  /// Restores weights, optimizer moments, counters and RNG state. Stop
  /// criteria (epochs, max_steps) come from `stop`.
  static Trainer resume(const std::filesystem::path& path, const std::vector<perception::Demonstration>& demos,
                        const TrainConfig& stop);

  const RunConfig& config() const { return cfg_; }
  const Dataset& data() const { return data_; }
  const policy::FlowPolicyModel<float>& student() const { return *student_; }
  const policy::FlowPolicyModel<float>& teacher() const { return *teacher_; }
  std::size_t step_count() const { return steps_; }
  std::size_t epoch() const { return epoch_; }

 private:
  StepMetrics forward_backward(const std::vector<std::size_t>& batch, bool update);
  void new_epoch();

  RunConfig cfg_;
  Dataset data_;
  std::unique_ptr<policy::FlowPolicyModel<float>> student_, teacher_;
  std::unique_ptr<AdamW<float>> opt_;
  std::unique_ptr<EmaState<float>> ema_;
  Rng rng_;
  std::size_t steps_ = 0, epoch_ = 0, cursor_ = 0;
  std::vector<std::size_t> order_;
};

/// Inference-side bundle: EMA weights plus normalizers and config.
struct LoadedPolicy {
  RunConfig cfg;
  policy::FlowPolicyModel<float> model;
  perception::Normalizer state_norm, action_norm;
};

/// Reads the EMA weights of a checkpoint. Throws CheckpointError when the
/// archive is unreadable or inconsistent with its stored config.
LoadedPolicy load_policy(const std::filesystem::path& path);
LoadedPolicy policy_from_trainer(const Trainer& t);

/// Observation window -> condition tensor [1 x cond_dim].
Tensor<float> encode_window(const LoadedPolicy& p, const std::vector<env::Observation>& window);

/// Receding-horizon policy. n_steps = 0 uses the chained one-step decode,
/// otherwise uniform Euler with n_steps evaluations.
env::PolicyFn make_policy_fn(const LoadedPolicy& p, std::size_t n_steps = 0);

}  // namespace flowkan::train
