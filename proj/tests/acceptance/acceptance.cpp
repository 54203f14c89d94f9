// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
// Usage: acceptance <flowkan-cli> <reach-config> <work-dir> [--quick]
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "flowkan/commands.hpp"
#include "flowkan/selfcheck.hpp"
#include "oracles.hpp"

using namespace flowkan;
namespace fs = std::filesystem;
using TD = Tensor<double>;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
  std::printf("%s %s: %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  failures += !pass;
}

double elapsed(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

TD randn(Shape s, Rng& rng) { return normal_tensor<double>(std::move(s), 1.0, rng, false); }

void wkv_oracle() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  double worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t B = 1 + rng.index(4), T = 1 + rng.index(16), C = 1 + rng.index(8);
    auto k = randn({B, T, C}, rng), v = randn({B, T, C}, rng);
    std::vector<double> w(C), u(C);
    for (auto& x : w) x = rng.uniform(0.0, 4.0);
    for (auto& x : u) x = rng.uniform(-3.0, 3.0);
    auto fast = rwkv::wkv_forward_scan(k, v, TD({C}, w), TD({C}, u));
    auto slow = wkv_direct(k, v, w, u);
    for (std::size_t i = 0; i < slow.size(); ++i) worst = std::max(worst, rel(fast[i], slow[i]));
  }
  const double s = elapsed(t0);
  report("wkv_oracle", worst <= 1e-10 && s < 5.0, fmt("max rel err %.2e (tol 1e-10) over 200 cases, %.2f s (limit 5 s)", worst, s));
}

void spline_oracle() {
  const auto t0 = Clock::now();
  Rng rng(2025);
  kan::SplineGrid g;
  const auto knots = g.knots();
  // One layer of 50 independent edge functions evaluated on a batch of 100 points.
  auto layer = kan::KanLayer<double>::zeros(1, 50, g);
  for (auto& c : layer.coeffs.storage()->data) c = rng.normal();
  for (auto& s : layer.spline_scale.storage()->data) s = 1.0;
  std::vector<double> xs(100);
  for (auto& x : xs) x = rng.uniform(-g.extent, g.extent);
  auto out = kan::kan_layer_apply(layer, TD({100, 1}, xs));
  double worst = 0;
  for (std::size_t i = 0; i < 100; ++i)
    for (std::size_t q = 0; q < 50; ++q) {
      double ref = 0;
      for (std::size_t j = 0; j < g.num_basis(); ++j) ref += layer.coeffs[j * 50 + q] * cox_de_boor(knots, j, g.order, xs[i]);
      worst = std::max(worst, rel(out[i * 50 + q], ref));
    }
  const double s = elapsed(t0);
  report("spline_oracle", worst <= 1e-10 && s < 5.0,
         fmt("max rel err %.2e (tol 1e-10) at 100 points x 50 functions, %.2f s (limit 5 s)", worst, s));
}

void gradient_suite() {
  const auto t0 = Clock::now();
  auto rows = check::gradient_suite(7);
  const double s = elapsed(t0);
  double worst = 0;
  bool all = true;
  std::string names;
  for (const auto& r : rows) {
    worst = std::max(worst, r.max_error);
    all = all && r.pass;
    names += (names.empty() ? "" : ",") + r.suite.substr(5);
  }
  const auto b = check::tiny_backbone();
  report("gradient_suite", all && worst <= 1e-4 && s < 60.0,
         fmt("max rel err %.2e (tol 1e-4), T=%g D=%g widths [8,16,32], %.1f s (limit 60 s); ", worst, double(b.horizon),
             double(b.action_dim), s) +
             names);
}

void flow_identities() {
  Rng rng(2026);
  double worst_loss = 0, worst_decode = 0;
  for (std::size_t K : {1, 2}) {
    flow::FlowConfig fc;
    fc.segments_k = K;
    auto s = flow::sample_flow(randn({32, 4, 2}, rng), K, fc.dt, rng);
    const TD line = sub(s.a_tar, s.a_src);
    flow::VelocityFn<double> v = [&](const TD&, const std::vector<double>&, const std::vector<std::size_t>&) { return line; };
    auto terms = flow::consistency_terms(v, v, s, K);
    auto cfm = flow::cfm_losses(terms);
    auto ms = flow::multisegment_loss(terms, s.segment, fc);
    worst_loss = std::max({worst_loss, cfm.l_end.item(), cfm.l_vel.item(), ms.total.item()});
    for (double t0 : {0.0, 0.13, 0.5, 0.77, 0.999}) {
      std::vector<double> t(32, t0);
      auto f = flow::euler_decode(flow::interpolate(s.a_src, s.a_tar, t), t, line);
      for (std::size_t i = 0; i < f.numel(); ++i) worst_decode = std::max(worst_decode, std::abs(f[i] - s.a_tar[i]));
    }
  }
  report("flow_identities", worst_loss <= 1e-12 && worst_decode <= 1e-12,
         fmt("straight field: max(L_end, L_vel, L_MFM) = %.2e, decode err %.2e (tol 1e-12), K in {1,2}", worst_loss,
             worst_decode));
}

void k1_degeneracy() {
  Rng rng(2027);
  auto cfg = check::tiny_backbone();
  cfg.segments_k = 1;
  auto student = backbone::BackboneParams<double>::init(cfg, rng);
  auto teacher = backbone::BackboneParams<double>::init(cfg, rng);
  for (auto* p : {&student, &teacher})
    for (auto& h : p->out_proj)
      for (auto& x : h.W.storage()->data) x = rng.normal();
  auto cond = randn({16, cfg.cond_dim}, rng);
  flow::VelocityFn<double> vs = [&](const TD& a, const std::vector<double>& t, const std::vector<std::size_t>& s) {
    return backbone::velocity_forward(student, a, t, s, cond);
  };
  flow::VelocityFn<double> vt = [&](const TD& a, const std::vector<double>& t, const std::vector<std::size_t>& s) {
    return backbone::velocity_forward(teacher, a, t, s, cond);
  };
  bool exact = true;
  double last = 0;
  for (double alpha : {1.0, 0.5, 2.0}) {
    flow::FlowConfig fc;
    fc.segments_k = 1;
    fc.alpha = alpha;
    auto s = flow::sample_flow(randn({16, 4, 2}, rng), 1, fc.dt, rng);
    auto terms = flow::consistency_terms(vs, vt, s, 1);
    auto cfm = flow::cfm_losses(terms);
    const double eq19 = add(cfm.l_end, scale(cfm.l_vel, alpha)).item();
    const double mfm = flow::multisegment_loss(terms, s.segment, fc).total.item();
    exact = exact && mfm == eq19;
    last = mfm - eq19;
  }
  report("k1_degeneracy", exact, fmt("multisegment(K=1) - (L_end + alpha L_vel) = %.1e for alpha in {1, 0.5, 2}", last));
}

void acr_contract() {
  const auto w = flow::ControlWindow::make(2, 3, 4);
  Rng rng(2028);
  // Dyadic values keep the offset arithmetic exact.
  std::vector<double> e(2 * 4 * 2);
  for (auto& x : e) x = double(int(rng.index(17)) - 8) / 8.0;
  TD expert({2, 4, 2}, e);
  bool zero_iff = flow::acr_loss(expert, expert, w).item() == 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    auto d = expert.clone();
    d.mutable_data()[i] += 0.25;
    const bool in_window = (i / 2) % 4 >= 1;
    const double l = flow::acr_loss(d, expert, w).item();
    zero_iff = zero_iff && ((l == 0.0) == !in_window);
  }
  const double c0 = 0.5, c1 = -0.25;
  auto shifted = expert.clone();
  for (std::size_t i = 0; i < e.size(); ++i) shifted.mutable_data()[i] += i % 2 ? c1 : c0;
  const double l = flow::acr_loss(shifted, expert, w).item();
  const double c2 = c0 * c0 + c1 * c1;
  report("acr_contract", zero_iff && l == c2 && w.indices() == std::vector<std::size_t>{1, 2, 3},
         fmt("zero exactly on matching windows; offset c=(0.5,-0.25) gives %.17g vs ||c||^2 = %.17g; W={1,2,3}", l, c2));
}

struct SeedOutcome {
  env::SuccessRates rates;
  double seconds = 0;
};

env::EvalReport run_toy(const RunConfig& base, double lambda_acr, const fs::path& work, double& seconds) {
  std::vector<env::SeedReport> seeds;
  seconds = 0;
  for (auto seed : base.eval.seeds) {
    const auto t0 = Clock::now();
    RunConfig cfg = base;
    cfg.seed = seed;
    cfg.flow.lambda_acr = lambda_acr;
    cfg.finalize();
    const auto dir = work / ("lambda" + std::to_string(int(lambda_acr)) + "_seed" + std::to_string(seed));
    cmd::gen_demos(cfg, cfg.demos, dir / "demos.jsonl");
    auto tr = cmd::train(cfg, dir / "demos.jsonl", dir);
    env::EvalConfig ec = cfg.eval;
    ec.seeds = {seed};
    auto rep = cmd::evaluate(tr.checkpoint, ec);
    seconds += elapsed(t0);
    std::printf("  lambda_acr=%g seed %llu: SR1 %.3f SR3 %.3f SR5 %.3f, %zu steps, %.0f s\n", lambda_acr,
                (unsigned long long)seed, rep.seeds[0].rates.sr1, rep.seeds[0].rates.sr3, rep.seeds[0].rates.sr5, tr.steps,
                elapsed(t0));
    std::fflush(stdout);
    seeds.push_back(rep.seeds[0]);
  }
  return env::aggregate(seeds);
}

void end_to_end(const fs::path& config, const fs::path& work) {
  auto base = RunConfig::load(config.string());
  if (base.train.epochs > 300) {
    report("toy_reproduction", false, "config trains for more than 300 epochs");
    return;
  }
  double t_main = 0, t_ablate = 0;
  auto main = run_toy(base, 1.0, work, t_main);
  bool ordered = main.mean.sr1 >= main.mean.sr3 && main.mean.sr3 >= main.mean.sr5;
  for (const auto& s : main.seeds) ordered = ordered && s.rates.sr1 >= s.rates.sr3 && s.rates.sr3 >= s.rates.sr5;
  report("toy_reproduction", main.mean.sr1 >= 0.90 && ordered && t_main <= 900.0,
         fmt("mean SR1 %.3f +- %.3f (need >= 0.90), SR3 %.3f, SR5 %.3f", main.mean.sr1, main.stddev.sr1, main.mean.sr3,
             main.mean.sr5) +
             fmt(", %.0f demos, %.0f epochs, seeds 0/42/100, %.0f s (limit 900 s)", double(base.demos),
                 double(base.train.epochs), t_main));
  auto ablate = run_toy(base, 0.0, work, t_ablate);
  report("acr_ablation", ablate.mean.sr1 <= main.mean.sr1 + 0.05,
         fmt("mean SR1 lambda_acr=0: %.3f vs lambda_acr=1: %.3f (must not exceed by > 0.05)", ablate.mean.sr1,
             main.mean.sr1));
}

void latency() {
  auto rows = cmd::bench(std::nullopt, {1, 10}, 41, 3);
  double one = 0, ten = 0;
  std::size_t nfe1 = 0, nfe10 = 0;
  for (const auto& r : rows) {
    if (r.mode == "euler" && r.n_steps == 1) one = r.median_ms, nfe1 = r.nfe;
    if (r.mode == "euler" && r.n_steps == 10) ten = r.median_ms, nfe10 = r.nfe;
  }
  // NFE of the one-step decode for K = 1 and K = 2.
  std::size_t nfe_k[3] = {0, 0, 0};
  for (std::size_t K : {1, 2}) {
    RunConfig cfg;
    cfg.flow.segments_k = K;
    cfg.finalize();
    Rng rng(K);
    train::LoadedPolicy p{cfg, policy::FlowPolicyModel<float>::init(cfg.model, rng),
                          perception::Normalizer(std::vector<double>(6, -1.0), std::vector<double>(6, 1.0)),
                          perception::Normalizer({-1.0, -1.0}, {1.0, 1.0})};
    env::ToyEnv e(cfg.env, 1);
    auto fn = train::make_policy_fn(p);
    std::size_t nfe = 0;
    fn(std::vector<env::Observation>(2, e.observe()), rng, nfe);
    nfe_k[K] = nfe;
  }
  const double ratio = ten / one;
  report("latency", ratio >= 5.0 && nfe_k[1] == 1 && nfe_k[2] == 2 && nfe1 == 1 && nfe10 == 10,
         fmt("10-step median %.3f ms / 1-step %.3f ms = %.1fx (need >= 5x); ", ten, one, ratio) +
             "NFE one-step K=1: " + std::to_string(nfe_k[1]) + ", K=2: " + std::to_string(nfe_k[2]) +
             ", euler 1/10: " + std::to_string(nfe1) + "/" + std::to_string(nfe10));
}

void parameter_efficiency() {
  backbone::BackboneConfig g1, g4;
  g1.group_g = 1;
  g4.group_g = 4;
  bool ok = true;
  std::string detail;
  for (std::size_t stage = 0; stage < 5; ++stage) {
    const auto a = backbone::count_stage_spline_coefficients(g1, stage), b = backbone::count_stage_spline_coefficients(g4, stage);
    ok = ok && a == 4 * b;
    if (stage == 2) detail = "bottleneck (width 128): G=1 " + std::to_string(a) + ", G=4 " + std::to_string(b);
  }
  // Count the instantiated coefficient tensors as well.
  Rng rng(5);
  auto count = [&](const backbone::BackboneConfig& c) {
    auto p = backbone::BackboneParams<float>::init(c, rng);
    ParamList<float> ps;
    p.collect(ps);
    std::size_t n = 0;
    for (const auto& x : ps)
      if (x.name.find("coeffs") != std::string::npos) n += x.tensor.numel();
    return n;
  };
  const auto n1 = count(g1), n4 = count(g4);
  ok = ok && n1 == 4 * n4;
  report("parameter_efficiency", ok,
         detail + "; all stages exact 4:1; instantiated spline coefficients " + std::to_string(n1) + " vs " +
             std::to_string(n4) + "; count_params G=1 " + std::to_string(backbone::count_params(g1)) + ", G=4 " +
             std::to_string(backbone::count_params(g4)));
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void determinism(const std::string& cli, const fs::path& config, const fs::path& work) {
  auto raw = nlohmann::json::parse(slurp(config));
  raw["eval"]["rounds"] = 2;
  raw["eval"]["episodes_per_round"] = 5;
  raw["eval"]["jobs"] = 4;  // overridden by FLOWKAN_DETERMINISTIC
  fs::create_directories(work);
  const auto cfg_path = work / "det_config.json";
  std::ofstream(cfg_path) << raw.dump(2);
  std::vector<std::string> logs, evals;
  bool ran = true;
  for (int rep = 0; rep < 2; ++rep) {
    const auto dir = work / ("det" + std::to_string(rep));
    fs::remove_all(dir);
    const std::string q = "FLOWKAN_DETERMINISTIC=1 '" + cli + "' ";
    const std::string c = " --config '" + cfg_path.string() + "'";
    const std::string out = " > /dev/null";
    ran = ran && std::system((q + "gen-demos" + c + " --out '" + (dir / "demos.jsonl").string() + "'" + out).c_str()) == 0;
    ran = ran && std::system((q + "train" + c + " --corpus '" + (dir / "demos.jsonl").string() + "' --out '" +
                              dir.string() + "' --steps 50" + out).c_str()) == 0;
    ran = ran && std::system((q + "eval" + c + " --checkpoint '" + (dir / "checkpoint.bin").string() + "' --out '" +
                              (dir / "eval.json").string() + "'" + out).c_str()) == 0;
    logs.push_back(slurp(dir / "metrics.jsonl"));
    evals.push_back(slurp(dir / "eval.json"));
  }
  std::size_t lines = 0;
  for (char ch : logs[0]) lines += ch == '\n';
  report("determinism", ran && lines == 50 && logs[0] == logs[1] && evals[0] == evals[1] && !evals[0].empty(),
         std::string(ran ? "" : "pipeline failed; ") + "metrics logs (" + std::to_string(lines) + " lines) " +
             (logs[0] == logs[1] ? "identical" : "differ") + ", eval reports " +
             (evals[0] == evals[1] ? "identical" : "differ"));
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 4) {
    std::fprintf(stderr, "usage: %s <flowkan-cli> <reach-config> <work-dir> [--quick]\n", argv[0]);
    return 2;
  }
  const std::string cli = argv[1];
  const fs::path config = argv[2], work = argv[3];
  const bool quick = argc > 4 && std::string(argv[4]) == "--quick";
  try {
    wkv_oracle();
    spline_oracle();
    gradient_suite();
    flow_identities();
    k1_degeneracy();
    acr_contract();
    latency();
    parameter_efficiency();
    determinism(cli, config, work);
    if (!quick) end_to_end(config, work);
  } catch (const std::exception& e) {
    report("harness", false, std::string("exception: ") + e.what());
  }
  std::printf("%d failure(s)\n", failures);
  return failures == 0 ? 0 : 1;
}
