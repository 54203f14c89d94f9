#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "flowkan/training.hpp"

namespace flowkan::cmd {

/// True when FLOWKAN_DETERMINISTIC=1; forces single-threaded evaluation.
bool deterministic_mode();

/// Writes `count` expert episodes as JSON-lines. Same seed, same bytes.
std::vector<perception::Demonstration> gen_demos(const RunConfig& cfg, std::size_t count,
                                                 const std::filesystem::path& out);

struct TrainResult {
  std::filesystem::path checkpoint;
  std::filesystem::path metrics;
  std::size_t steps = 0;
  double first_total = 0, last_total = 0;
};

/// Trains from a corpus into out_dir (config.json, metrics.jsonl, checkpoint.bin).
/// With `resume`, restores that checkpoint and appends to the metrics log.
TrainResult train(const RunConfig& cfg, const std::filesystem::path& corpus, const std::filesystem::path& out_dir,
                  const std::optional<std::filesystem::path>& resume = std::nullopt,
                  const std::function<void(const train::StepMetrics&)>& on_step = {});

/// Runs the evaluation protocol on a checkpoint's EMA policy. `eval_override`
/// and `env_override` replace the stored sections when given.
env::EvalReport evaluate(const std::filesystem::path& checkpoint, const std::optional<env::EvalConfig>& eval_override = {},
                         std::size_t n_steps = 0);

struct BenchRow {
  std::string mode;  // one_step or euler
  std::size_t n_steps = 0;
  double median_ms = 0, p95_ms = 0;
  std::size_t nfe = 0;
};

/// Decode latency per mode with the observation window encoded once up front.
/// Without a checkpoint a freshly initialized default model is timed.
std::vector<BenchRow> bench(const std::optional<std::filesystem::path>& checkpoint, const std::vector<std::size_t>& steps,
                            std::size_t repeats, std::uint64_t seed = 0);
std::string bench_csv(const std::vector<BenchRow>& rows);

}  // namespace flowkan::cmd
