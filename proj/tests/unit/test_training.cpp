#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "flowkan/checkpoint.hpp"
#include "flowkan/commands.hpp"
#include "flowkan/training.hpp"

using namespace flowkan;

namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

/// Small but complete run config that trains in well under a second per step.
RunConfig tiny_run() {
  RunConfig c;
  c.model.backbone.widths = {8, 16, 32};
  c.model.backbone.time_dim = 8;
  c.model.backbone.time_hidden = 16;
  c.model.perception.point_hidden1 = 8;
  c.model.perception.point_hidden2 = 16;
  c.model.perception.vision_dim = 8;
  c.model.perception.state_hidden = 16;
  c.model.perception.state_emb = 8;
  c.env.raw_points = 32;
  c.env.points = 16;
  c.train.batch = 16;
  c.optimizer.lr = 1e-3;
  c.finalize();
  return c;
}

std::vector<perception::Demonstration> corpus(const RunConfig& c, std::size_t n) {
  auto e = c.env;
  e.random_fps_seed = true;
  return env::generate_corpus(e, n, c.seed);
}

}  // namespace

TEST_CASE("config round trip and validation") {
  RunConfig c;
  c.finalize();
  CHECK(RunConfig::from_json(c.to_json()) == c);
  auto j = c.to_json();
  j["flow"]["segments"] = 1;
  j["train"]["batch"] = 128;
  j["env"]["task"] = "push";
  auto p = RunConfig::from_json(j);
  CHECK(p.flow.segments_k == 1);
  CHECK(p.model.backbone.segments_k == 1);
  CHECK(p.model.perception.state_dim == 10);
  CHECK(p.train.batch == 128);
  CHECK(RunConfig::from_json(p.to_json()) == p);
  CHECK(RunConfig::from_json(nlohmann::json::object()) == c);

  CHECK(c.optimizer.lr == 1e-4);
  CHECK(c.train.batch == 64);
  CHECK(c.train.epochs == 300);
  CHECK(c.train.ema == 0.95);
  CHECK(c.flow.lambda_acr == 1.0);
  CHECK(c.flow.segments_k == 2);
  CHECK(c.model.backbone.horizon == 4);
  CHECK(c.model.perception.n_obs == 2);
  CHECK(c.exec_horizon == 3);
  CHECK(c.demos == 10);

  auto bad = [](const char* text) {
    try {
      RunConfig::from_json(nlohmann::json::parse(text));
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(bad(R"({"extra": 1})").find("'extra'") != std::string::npos);
  CHECK(bad(R"({"backbone": {"spline": {"knots": 3}}})").find("backbone.spline.knots") != std::string::npos);
  CHECK(bad(R"({"train": {"batch": "big"}})").find("train.batch") != std::string::npos);
  CHECK(!bad(R"({"env": {"task": "stack"}})").empty());
  CHECK(!bad(R"({"backbone": {"groups": 3}})").empty());
  CHECK(!bad(R"({"exec_horizon": 4})").empty());
  CHECK(!bad(R"({"flow": {"dt": 0.7}})").empty());
}

TEST_CASE("config hash") {
  RunConfig a;
  a.finalize();
  RunConfig b = a;
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a).size() == 16);
  b.flow.lambda_acr = 0.0;
  CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("dataset windows") {
  auto cfg = tiny_run();
  auto demos = corpus(cfg, 2);
  auto ds = train::Dataset::build(demos, cfg);
  CHECK(ds.size() == demos[0].actions.size() + demos[1].actions.size());
  // First sample: both observations are step 0, actions are 0, 0, 1, 2.
  const auto& d = demos[0];
  auto st0 = ds.state_norm.normalize(d.obs_state[0]);
  for (std::size_t i = 0; i < st0.size(); ++i) {
    CHECK(ds.states[0][i] == doctest::Approx(st0[i]).epsilon(1e-6));
    CHECK(ds.states[0][st0.size() + i] == doctest::Approx(st0[i]).epsilon(1e-6));
  }
  auto act = [&](std::size_t t, std::size_t j) { return float(ds.action_norm.normalize(j, d.actions[t][j])); };
  CHECK(ds.actions[0][0] == act(0, 0));
  CHECK(ds.actions[0][2] == act(0, 0));
  CHECK(ds.actions[0][4] == act(1, 0));
  CHECK(ds.actions[0][6] == act(2, 0));
  // Last sample of the demo pads with its final action.
  const std::size_t L = d.actions.size();
  CHECK(ds.actions[L - 1][6] == act(L - 1, 0));
  auto batch = ds.gather({0, 1, 2});
  CHECK(batch.states.shape() == Shape{3, 2 * 6});
  CHECK(batch.clouds.shape() == Shape{6, 16, 3});
  CHECK(batch.actions.shape() == Shape{3, 4, 2});

  auto push = cfg;
  push.env.task = env::Task::Push;
  push.finalize();
  CHECK_THROWS_AS(train::Dataset::build(demos, push), ConfigError);
  CHECK_THROWS_AS(train::Dataset::build({}, cfg), ConfigError);
}

TEST_CASE("training reduces the loss") {
  auto cfg = tiny_run();
  cfg.train.max_steps = 200;
  auto demos = corpus(cfg, 4);
  train::Trainer t(cfg, train::Dataset::build(demos, cfg));
  std::vector<std::size_t> all(t.data().size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const double start = t.evaluate(all).total;
  std::vector<double> totals;
  t.run([&](const train::StepMetrics& m) { totals.push_back(m.total); });
  CHECK(t.step_count() == 200);
  CHECK(totals.size() == 200);
  CHECK(t.evaluate(all).total < start);
  CHECK(totals.back() < totals.front());
}

TEST_CASE("epoch budget stops training") {
  auto cfg = tiny_run();
  cfg.train.epochs = 2;
  auto demos = corpus(cfg, 3);
  train::Trainer t(cfg, train::Dataset::build(demos, cfg));
  t.run();
  const std::size_t per_epoch = (t.data().size() + cfg.train.batch - 1) / cfg.train.batch;
  CHECK(t.step_count() == 2 * per_epoch);
  CHECK(t.finished());
}

TEST_CASE("checkpoint save, load and resume") {
  TempDir dir("flowkan_train_test");
  auto cfg = tiny_run();
  cfg.train.max_steps = 12;
  auto demos = corpus(cfg, 3);

  train::Trainer straight(cfg, train::Dataset::build(demos, cfg));
  std::vector<double> full;
  straight.run([&](const train::StepMetrics& m) { full.push_back(m.total); });

  auto half = cfg;
  half.train.max_steps = 5;
  train::Trainer first(half, train::Dataset::build(demos, half));
  std::vector<double> resumed;
  first.run([&](const train::StepMetrics& m) { resumed.push_back(m.total); });
  first.save(dir.path / "ck.bin");
  auto second = train::Trainer::resume(dir.path / "ck.bin", demos, cfg.train);
  CHECK(second.step_count() == 5);
  second.run([&](const train::StepMetrics& m) { resumed.push_back(m.total); });
  CHECK(second.step_count() == 12);
  CHECK(resumed == full);

  straight.save(dir.path / "final.bin");
  auto p = train::load_policy(dir.path / "final.bin");
  CHECK(p.cfg == straight.config());
  const auto a = p.model.parameters(), b = straight.teacher().parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    CHECK(std::equal(a[i].tensor.data().begin(), a[i].tensor.data().end(), b[i].tensor.data().begin()));
  }
  CHECK(p.action_norm == straight.data().action_norm);

  // Truncation and tampering are detected.
  {
    std::ifstream in(dir.path / "final.bin", std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream(dir.path / "cut.bin", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  }
  CHECK_THROWS_AS(train::load_policy(dir.path / "cut.bin"), CheckpointError);
  CheckpointWriter w;
  w.meta()["config"] = cfg.to_json();
  w.meta()["config_hash"] = "0000000000000000";
  w.write(dir.path / "forged.bin");
  CHECK_THROWS_AS(train::load_policy(dir.path / "forged.bin"), CheckpointError);
  CHECK_THROWS_AS(train::load_policy(dir.path / "missing.bin"), CheckpointError);
}

TEST_CASE("command pipeline") {
  TempDir dir("flowkan_cmd_test");
  auto cfg = tiny_run();
  cfg.train.max_steps = 6;
  cfg.eval.rounds = 2;
  cfg.eval.episodes_per_round = 2;
  cmd::gen_demos(cfg, 2, dir.path / "a.jsonl");
  cmd::gen_demos(cfg, 2, dir.path / "b.jsonl");
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  CHECK(slurp(dir.path / "a.jsonl") == slurp(dir.path / "b.jsonl"));
  CHECK(perception::read_corpus((dir.path / "a.jsonl").string()).size() == 2);

  auto r = cmd::train(cfg, dir.path / "a.jsonl", dir.path / "run");
  CHECK(r.steps == 6);
  CHECK(fs::exists(dir.path / "run" / "config.json"));
  CHECK(RunConfig::load((dir.path / "run" / "config.json").string()) == cfg);
  std::ifstream log(r.metrics);
  std::string line;
  std::size_t n = 0;
  while (std::getline(log, line)) {
    auto j = nlohmann::json::parse(line);
    CHECK(j.at("step") == n);
    for (const char* k : {"l_end", "l_vel", "l_acr", "total"}) CHECK(j.contains(k));
    ++n;
  }
  CHECK(n == 6);

  auto more = cfg;
  more.train.max_steps = 9;
  auto r2 = cmd::train(more, dir.path / "a.jsonl", dir.path / "run", r.checkpoint);
  CHECK(r2.steps == 9);

  auto report = cmd::evaluate(r2.checkpoint);
  CHECK(report.seeds.size() == 3);
  CHECK(report.seeds[0].round_rates.size() == 2);
  auto rows = cmd::bench(r2.checkpoint, {1, 3}, 3);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].nfe == 2);
  CHECK(rows[1].nfe == 1);
  CHECK(rows[2].nfe == 3);
  CHECK(cmd::bench_csv(rows).rfind("mode,n_steps,median_ms,p95_ms,nfe\n", 0) == 0);
}
