// flowkan command-line driver: gen-demos, train, eval, bench, check.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "flowkan/commands.hpp"
#include "flowkan/rwkv.hpp"
#include "flowkan/selfcheck.hpp"

namespace fs = std::filesystem;
using namespace flowkan;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON run config")->check(CLI::ExistingFile);
  sub->add_option("--seed", c.seed, "Override the run seed");
  sub->add_option("--out", c.out, "Output path");
}

RunConfig load(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : RunConfig::load(c.config);
  if (c.seed) cfg.seed = *c.seed;
  cfg.finalize();
  return cfg;
}

std::string one_line(std::string s) {
  for (auto& ch : s)
    if (ch == '\n' || ch == '\r') ch = ' ';
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Flow-matching RWKV/KAN policy toolkit"};
  app.require_subcommand(1);

  Common gen_c;
  std::size_t count = 0;
  auto* gen = app.add_subcommand("gen-demos", "Write scripted expert demonstrations (JSON-lines)");
  add_common(gen, gen_c);
  gen->add_option("--count", count, "Episodes (default: config demos)");

  Common train_c;
  std::string corpus, resume;
  std::optional<double> lambda_acr;
  std::optional<std::size_t> segments, steps, epochs;
  auto* tr = app.add_subcommand("train", "Train a policy on a demo corpus");
  add_common(tr, train_c);
  tr->add_option("--corpus", corpus, "Demo corpus")->required()->check(CLI::ExistingFile);
  tr->add_option("--lambda-acr", lambda_acr, "ACR weight");
  tr->add_option("--segments", segments, "Flow segments K");
  tr->add_option("--steps", steps, "Stop after this many optimizer steps");
  tr->add_option("--epochs", epochs, "Epoch budget");
  tr->add_option("--checkpoint", resume, "Resume from this checkpoint")->check(CLI::ExistingFile);

  Common eval_c;
  std::string eval_ckpt;
  std::optional<std::size_t> jobs;
  std::size_t eval_steps = 0;
  auto* ev = app.add_subcommand("eval", "Success rates of a checkpoint over the evaluation seeds");
  add_common(ev, eval_c);
  ev->add_option("--checkpoint", eval_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--jobs", jobs, "Parallel episodes");
  ev->add_option("--decode-steps", eval_steps, "Euler steps per decode (0: one-step)");

  Common bench_c;
  std::string bench_ckpt;
  std::vector<std::size_t> bench_steps{1, 2, 10};
  std::size_t repeats = 50;
  auto* be = app.add_subcommand("bench", "Decode latency table (CSV)");
  add_common(be, bench_c);
  be->add_option("--checkpoint", bench_ckpt, "Checkpoint (default: fresh toy model)")->check(CLI::ExistingFile);
  be->add_option("--steps-list", bench_steps, "Euler step counts")->delimiter(',');
  be->add_option("--repeats", repeats, "Timed decodes per row");

  std::uint64_t check_seed = 0;
  bool inject = false;
  auto* ch = app.add_subcommand("check", "Numerical self-checks");
  ch->add_option("--seed", check_seed, "Seed for the random cases");
  ch->add_flag("--inject-wkv-fault", inject, "Flip the sign of the WKV key gradient (the suite must fail)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 2;
  }

  try {
    if (gen->parsed()) {
      auto cfg = load(gen_c);
      const fs::path out = gen_c.out.empty() ? fs::path(cfg.out) / "demos.jsonl" : fs::path(gen_c.out);
      auto demos = cmd::gen_demos(cfg, count ? count : cfg.demos, out);
      std::cout << "wrote " << demos.size() << " episodes to " << out.string() << "\n";
    } else if (tr->parsed()) {
      auto cfg = load(train_c);
      if (lambda_acr) cfg.flow.lambda_acr = *lambda_acr;
      if (segments) cfg.flow.segments_k = *segments;
      if (steps) cfg.train.max_steps = *steps;
      if (epochs) cfg.train.epochs = *epochs;
      if (!train_c.out.empty()) cfg.out = train_c.out;
      cfg.finalize();
      std::optional<fs::path> from;
      if (!resume.empty()) from = resume;
      auto r = cmd::train(cfg, corpus, cfg.out, from);
      std::cout << nlohmann::json{{"checkpoint", r.checkpoint.string()},
                                  {"metrics", r.metrics.string()},
                                  {"steps", r.steps},
                                  {"first_total", r.first_total},
                                  {"last_total", r.last_total}}
                       .dump()
                << "\n";
    } else if (ev->parsed()) {
      std::optional<env::EvalConfig> ec;
      if (!eval_c.config.empty() || jobs || eval_c.seed) {
        auto stored = train::load_policy(eval_ckpt).cfg;
        env::EvalConfig e = eval_c.config.empty() ? stored.eval : RunConfig::load(eval_c.config).eval;
        if (jobs) e.jobs = *jobs;
        if (eval_c.seed) e.seeds = {*eval_c.seed};
        ec = e;
      }
      auto report = cmd::evaluate(eval_ckpt, ec, eval_steps).to_json();
      const fs::path out = eval_c.out.empty() ? fs::path(eval_ckpt).parent_path() / "eval.json" : fs::path(eval_c.out);
      std::ofstream(out) << report.dump(2) << "\n";
      std::cout << report.dump() << "\n";
    } else if (be->parsed()) {
      std::optional<fs::path> ck;
      if (!bench_ckpt.empty()) ck = bench_ckpt;
      auto csv = cmd::bench_csv(cmd::bench(ck, bench_steps, repeats, bench_c.seed.value_or(0)));
      if (bench_c.out.empty()) {
        std::cout << csv;
      } else {
        std::ofstream(bench_c.out) << csv;
      }
    } else if (ch->parsed()) {
      rwkv::set_wkv_backward_fault(inject);
      auto rows = check::run_all(check_seed);
      std::cout << check::format_table(rows);
      for (const auto& r : rows)
        if (!r.pass) return 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 1;
  }
  return 0;
}
