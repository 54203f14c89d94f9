#include "flowkan/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "flowkan/checkpoint.hpp"

namespace flowkan::cmd {

namespace fs = std::filesystem;

bool deterministic_mode() {
  const char* v = std::getenv("FLOWKAN_DETERMINISTIC");
  return v != nullptr && std::string(v) == "1";
}

std::vector<perception::Demonstration> gen_demos(const RunConfig& cfg, std::size_t count, const fs::path& out) {
  if (count == 0) throw ConfigError("gen-demos: count must be positive");
  auto env_cfg = cfg.env;
  env_cfg.random_fps_seed = true;
  auto demos = env::generate_corpus(env_cfg, count, cfg.seed);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  perception::write_corpus(out.string(), demos);
  return demos;
}

TrainResult train(const RunConfig& cfg, const fs::path& corpus, const fs::path& out_dir,
                  const std::optional<fs::path>& resume, const std::function<void(const train::StepMetrics&)>& on_step) {
  auto demos = perception::read_corpus(corpus.string());
  std::optional<train::Trainer> trainer;
  if (resume) {
    trainer.emplace(train::Trainer::resume(*resume, demos, cfg.train));
  } else {
    RunConfig c = cfg;
    c.finalize();
    trainer.emplace(c, train::Dataset::build(demos, c));
  }
  fs::create_directories(out_dir);
  TrainResult r;
  r.checkpoint = out_dir / "checkpoint.bin";
  r.metrics = out_dir / "metrics.jsonl";
  {
    std::ofstream cfg_out(out_dir / "config.json");
    cfg_out << trainer->config().to_json().dump(2) << "\n";
  }
  std::ofstream log(r.metrics, resume ? std::ios::app : std::ios::trunc);
  if (!log) throw std::runtime_error("train: cannot write " + r.metrics.string());
  bool first = true;
  trainer->run([&](const train::StepMetrics& m) {
    nlohmann::json j{{"step", m.step}, {"l_end", m.l_end}, {"l_vel", m.l_vel}, {"l_acr", m.l_acr}, {"total", m.total}};
    log << j.dump() << "\n";
    if (first) r.first_total = m.total;
    first = false;
    r.last_total = m.total;
    if (on_step) on_step(m);
  });
  log.flush();
  trainer->save(r.checkpoint);
  r.steps = trainer->step_count();
  return r;
}

env::EvalReport evaluate(const fs::path& checkpoint, const std::optional<env::EvalConfig>& eval_override,
                         std::size_t n_steps) {
  auto p = train::load_policy(checkpoint);
  auto ec = eval_override.value_or(p.cfg.eval);
  if (deterministic_mode()) ec.jobs = 1;
  return env::evaluate_policy(train::make_policy_fn(p, n_steps), p.cfg.env, ec, p.cfg.model.perception.n_obs);
}

std::vector<BenchRow> bench(const std::optional<fs::path>& checkpoint, const std::vector<std::size_t>& steps,
                            std::size_t repeats, std::uint64_t seed) {
  if (repeats == 0) throw ConfigError("bench: repeats must be positive");
  std::optional<train::LoadedPolicy> p;
  if (checkpoint) {
    p.emplace(train::load_policy(*checkpoint));
  } else {
    RunConfig cfg;
    cfg.finalize();
    Rng rng(seed);
    p.emplace(train::LoadedPolicy{cfg, policy::FlowPolicyModel<float>::init(cfg.model, rng),
                                  perception::Normalizer(std::vector<double>(cfg.model.perception.state_dim, -1.0),
                                                         std::vector<double>(cfg.model.perception.state_dim, 1.0)),
                                  perception::Normalizer({-1.0, -1.0}, {1.0, 1.0})});
  }
  env::ToyEnv e(p->cfg.env, seed);
  const std::vector<env::Observation> window(p->cfg.model.perception.n_obs, e.observe());
  const auto& bc = p->cfg.model.backbone;
  const auto cond = train::encode_window(*p, window);
  auto time_mode = [&](const std::string& mode, std::size_t n) {
    NoGradGuard guard;
    auto v = policy::bind_velocity(p->model, cond);
    Rng rng(seed);
    auto decode = [&] {
      auto a_src = flow::draw_source<float>(1, bc.horizon, bc.action_dim, rng);
      return mode == "one_step" ? flow::infer_one_step(v, &p->action_norm, a_src, bc.segments_k, p->cfg.window())
                                : flow::infer_multi_step(v, &p->action_norm, a_src, n, bc.segments_k, p->cfg.window());
    };
    decode();  // warm-up
    std::vector<double> ms;
    std::size_t nfe = 0;
    for (std::size_t i = 0; i < repeats; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      nfe = decode().nfe;
      ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    std::sort(ms.begin(), ms.end());
    const double median = ms.size() % 2 ? ms[ms.size() / 2] : 0.5 * (ms[ms.size() / 2 - 1] + ms[ms.size() / 2]);
    const double p95 = ms[std::min(ms.size() - 1, std::size_t(std::ceil(0.95 * double(ms.size()))) - 1)];
    return BenchRow{mode, mode == "one_step" ? bc.segments_k : n, median, p95, nfe};
  };
  std::vector<BenchRow> rows{time_mode("one_step", 0)};
  for (auto n : steps) {
    if (n == 0) throw ConfigError("bench: step counts must be positive");
    rows.push_back(time_mode("euler", n));
  }
  return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << "mode,n_steps,median_ms,p95_ms,nfe\n";
  for (const auto& r : rows) os << r.mode << ',' << r.n_steps << ',' << r.median_ms << ',' << r.p95_ms << ',' << r.nfe << '\n';
  return os.str();
}

}  // namespace flowkan::cmd
