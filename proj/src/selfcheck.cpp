#include "flowkan/selfcheck.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "flowkan/flowmatch.hpp"
#include "flowkan/gradcheck.hpp"
#include "flowkan/perception.hpp"

namespace flowkan::check {

namespace {

using TD = Tensor<double>;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

TD randn(Shape s, Rng& rng, double sd = 1.0, bool grad = false) { return normal_tensor<double>(std::move(s), sd, rng, grad); }

CheckRow finish(std::string suite, double err, double tol, Clock::time_point t0, std::string detail = {}) {
  return {std::move(suite), err, tol, seconds_since(t0), std::isfinite(err) && err <= tol, std::move(detail)};
}

double de_boor(const std::vector<double>& t, std::size_t j, std::size_t p, double x) {
  if (p == 0) return (t[j] <= x && x < t[j + 1]) ? 1.0 : 0.0;
  double a = 0, b = 0;
  if (t[j + p] != t[j]) a = (x - t[j]) / (t[j + p] - t[j]) * de_boor(t, j, p - 1, x);
  if (t[j + p + 1] != t[j + 1]) b = (t[j + p + 1] - x) / (t[j + p + 1] - t[j + 1]) * de_boor(t, j + 1, p - 1, x);
  return a + b;
}

/// Random weights everywhere, including the zero-initialized output heads.
void perturb(const ParamList<double>& ps, Rng& rng, double sd) {
  for (const auto& p : ps) {
    auto d = p.tensor.storage();
    for (auto& x : d->data) x += sd * rng.normal();
  }
}

TD project(const TD& out, Rng& rng) {
  auto r = randn(out.shape(), rng);
  return sum(mul(out, r));
}

}  // namespace

backbone::BackboneConfig tiny_backbone() {
  backbone::BackboneConfig c;
  c.widths = {8, 16, 32};
  c.horizon = 4;
  c.action_dim = 2;
  c.cond_dim = 6;
  c.segments_k = 2;
  c.group_g = 4;
  c.cam_reduction = 4;
  c.time_dim = 8;
  c.time_hidden = 16;
  return c;
}

CheckRow wkv_oracle(std::uint64_t seed) {
  const auto t0 = Clock::now();
  Rng rng(seed);
  double worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t B = 1 + rng.index(4), L = 1 + rng.index(16), C = 1 + rng.index(8);
    auto k = randn({B, L, C}, rng, 1.5), v = randn({B, L, C}, rng);
    std::vector<double> w(C), u(C);
    for (auto& x : w) x = rng.uniform(0.0, 3.0);
    for (auto& x : u) x = rng.uniform(-2.0, 2.0);
    auto fast = rwkv::wkv_forward_scan(k, v, TD({C}, w), TD({C}, u));
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < L; ++t)
        for (std::size_t c = 0; c < C; ++c) {
          auto at = [&](std::size_t s) { return (b * L + s) * C + c; };
          double num = std::exp(u[c] + k[at(t)]) * v[at(t)], den = std::exp(u[c] + k[at(t)]);
          for (std::size_t i = 0; i < t; ++i) {
            const double e = std::exp(-double(t - 1 - i) * w[c] + k[at(i)]);
            num += e * v[at(i)];
            den += e;
          }
          worst = std::max(worst, rel_err(fast[at(t)], num / den));
        }
  }
  return finish("wkv_oracle", worst, 1e-10, t0, "200 cases");
}

CheckRow spline_oracle(std::uint64_t seed) {
  const auto t0 = Clock::now();
  Rng rng(seed + 1);
  kan::SplineGrid g;
  const auto knots = g.knots();
  double worst = 0;
  for (int f = 0; f < 50; ++f) {
    std::vector<double> c(g.num_basis());
    for (auto& x : c) x = rng.normal();
    kan::SplineFunction<double> fn{g, TD({c.size()}, c), TD::scalar(0.0), TD::scalar(1.0)};
    std::vector<double> xs(100);
    for (auto& x : xs) x = rng.uniform(-g.extent, g.extent);
    auto out = kan::spline_eval(fn, TD({100}, xs));
    for (std::size_t i = 0; i < 100; ++i) {
      double ref = 0;
      for (std::size_t j = 0; j < c.size(); ++j) ref += c[j] * de_boor(knots, j, g.order, xs[i]);
      worst = std::max(worst, rel_err(out[i], ref));
    }
  }
  return finish("spline_oracle", worst, 1e-10, t0, "50 functions x 100 points");
}

std::vector<CheckRow> gradient_suite(std::uint64_t seed) {
  constexpr double kTol = 1e-4;
  std::vector<CheckRow> rows;
  GradCheckOptions opt;
  opt.seed = seed;
  opt.max_entries_per_tensor = 24;
  auto run = [&](const std::string& name, const std::function<TD()>& f, const ParamList<double>& ps) {
    const auto t0 = Clock::now();
    auto r = gradient_check(f, ps, opt);
    rows.push_back(finish("grad_" + name, r.max_rel_error, kTol, t0, "worst " + r.worst));
  };
  Rng rng(seed + 2);
  const auto cfg = tiny_backbone();
  const std::size_t B = 2, T = cfg.horizon;

  {
    auto p = rwkv::RwkvBlockParams<double>::init(8, rng);
    ParamList<double> ps;
    p.collect(ps, "rwkv.");
    perturb(ps, rng, 0.1);
    auto x = randn({B, T, 8}, rng);
    auto r = randn({B, T, 8}, rng);
    run("rwkv_block", [&] { return sum(mul(rwkv::rwkv_block(x, p), r)); }, ps);
  }
  {
    auto p = kan::GroupKanBlockParams<double>::init(8, 4, cfg.spline_grid, 1, 4, 0.0, rng);
    ParamList<double> ps;
    p.collect(ps, "0");
    perturb(ps, rng, 0.1);
    auto x = randn({B, T, 8}, rng, 0.5);
    auto r = randn({B, T, 8}, rng);
    run("groupkan_block", [&] { return sum(mul(kan::groupkan_block(x, p), r)); }, ps);
  }
  {
    perception::PerceptionConfig pc;
    pc.n_obs = 1;
    pc.points = 6;
    pc.point_hidden1 = 5;
    pc.point_hidden2 = 7;
    pc.vision_dim = 4;
    pc.state_hidden = 5;
    pc.state_emb = 3;
    auto pe = perception::PointEncoder<double>::init(pc, rng);
    auto se = perception::StateEncoder<double>::init(pc, rng);
    ParamList<double> ps;
    pe.collect(ps);
    se.collect(ps);
    auto pts = randn({B, pc.points, 3}, rng);
    auto st = randn({B, pc.state_dim}, rng);
    auto r1 = randn({B, pc.vision_dim}, rng), r2 = randn({B, pc.state_emb}, rng);
    run("perception",
        [&] {
          return add(sum(mul(perception::encode_points(pe, pts), r1)), sum(mul(perception::encode_state(se, st), r2)));
        },
        ps);
  }
  auto net = backbone::BackboneParams<double>::init(cfg, rng);
  ParamList<double> ps;
  net.collect_time(ps);
  net.collect(ps);
  perturb(ps, rng, 0.05);
  auto a = randn({B, T, cfg.action_dim}, rng);
  auto cond = randn({B, cfg.cond_dim}, rng);
  const std::vector<double> t{0.2, 0.7};
  const std::vector<std::size_t> seg{0, 1};
  {
    auto r = randn({B, T, cfg.action_dim}, rng);
    run("backbone", [&] { return sum(mul(backbone::velocity_forward(net, a, t, seg, cond), r)); }, ps);
  }
  {
    // Full objective; the teacher is a frozen copy with different weights.
    auto teacher = backbone::BackboneParams<double>::init(cfg, rng);
    ParamList<double> tp;
    teacher.collect_time(tp);
    teacher.collect(tp);
    perturb(tp, rng, 0.05);
    flow::FlowConfig fc;
    fc.segments_k = cfg.segments_k;
    flow::FlowSample<double> s{randn({B, T, cfg.action_dim}, rng), randn({B, T, cfg.action_dim}, rng), t, seg, 0.01};
    const auto window = flow::ControlWindow::make(2, 3, T);
    flow::VelocityFn<double> student = [&](const TD& x, const std::vector<double>& tt, const std::vector<std::size_t>& ss) {
      return backbone::velocity_forward(net, x, tt, ss, cond);
    };
    flow::VelocityFn<double> frozen = [&](const TD& x, const std::vector<double>& tt, const std::vector<std::size_t>& ss) {
      return backbone::velocity_forward(teacher, x, tt, ss, cond);
    };
    run("flow_loss", [&] { return flow::compute_losses(student, frozen, s, fc, window).total; }, ps);
  }
  return rows;
}

CheckRow flow_identities(std::uint64_t seed) {
  const auto t0 = Clock::now();
  Rng rng(seed + 3);
  double worst = 0;
  for (std::size_t K : {1, 2}) {
    flow::FlowConfig fc;
    fc.segments_k = K;
    auto a_tar = randn({8, 4, 2}, rng);
    auto s = flow::sample_flow(a_tar, K, fc.dt, rng);
    const auto line = sub(s.a_tar, s.a_src);
    flow::VelocityFn<double> v = [&](const TD&, const std::vector<double>&, const std::vector<std::size_t>&) {
      return line;
    };
    auto L = flow::compute_losses(v, v, s, fc, flow::ControlWindow::make(2, 3, 4));
    worst = std::max({worst, L.l_end.item(), L.l_vel.item(), L.l_mfm.item(), L.l_acr.item()});
    std::vector<double> ts(8);
    for (auto& x : ts) x = rng.uniform(0.0, 0.999);
    auto f = flow::euler_decode(flow::interpolate(s.a_src, s.a_tar, ts), ts, line);
    for (std::size_t i = 0; i < f.numel(); ++i) worst = std::max(worst, std::abs(f[i] - s.a_tar[i]));
  }
  return finish("flow_identities", worst, 1e-12, t0, "K in {1,2}");
}

std::vector<CheckRow> run_all(std::uint64_t seed) {
  std::vector<CheckRow> rows{wkv_oracle(seed), spline_oracle(seed)};
  for (auto& r : gradient_suite(seed)) rows.push_back(std::move(r));
  rows.push_back(flow_identities(seed));
  return rows;
}

std::string format_table(const std::vector<CheckRow>& rows) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-20s %12s %10s %8s  %s\n", "suite", "max_error", "tolerance", "seconds", "result");
  os << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-20s %12.3e %10.1e %8.2f  %s%s%s\n", r.suite.c_str(), r.max_error, r.tolerance,
                  r.seconds, r.pass ? "PASS" : "FAIL", r.detail.empty() ? "" : "  ", r.detail.c_str());
    os << buf;
  }
  return os.str();
}

}  // namespace flowkan::check
