#include <cmath>

#include "doctest.h"
#include "flowkan/envsuite.hpp"

using namespace flowkan;
using namespace flowkan::env;

namespace {

double dist(const Vec2& a, const Vec2& b) { return std::hypot(a[0] - b[0], a[1] - b[1]); }

EnvConfig push_cfg() {
  EnvConfig c;
  c.task = Task::Push;
  return c;
}

}  // namespace

TEST_CASE("env step kinematics and observations") {
  EnvConfig cfg;
  ToyEnv env(cfg, 3);
  auto s0 = env.state();
  auto obs = env.step({0.0, 0.0});
  CHECK(env.state().effector == s0.effector);
  CHECK(env.state().step == 1);
  CHECK(obs.points.size() == 64);
  CHECK(obs.state.size() == 6);
  CHECK(obs.state[4] == doctest::Approx(s0.target[0] - s0.effector[0]));
  env.step({10.0, -10.0});  // clamped to one max_step per axis
  CHECK(env.state().effector[0] == doctest::Approx(std::min(1.0, s0.effector[0] + cfg.max_step)));
  CHECK_THROWS(env.step({std::nan(""), 0.0}));
  CHECK_THROWS(env.step({0.0}));

  // Heading straight for the target shrinks the distance every step.
  ToyEnv e2(cfg, 4);
  double d = e2.distance();
  while (d > cfg.max_step) {
    auto s = e2.state();
    const double n = dist(s.target, s.effector);
    e2.step({(s.target[0] - s.effector[0]) / n, (s.target[1] - s.effector[1]) / n});
    CHECK(e2.distance() < d);
    d = e2.distance();
  }
}

TEST_CASE("env determinism and workspace bounds") {
  for (auto cfg : {EnvConfig{}, push_cfg()}) {
    ToyEnv a(cfg, 11), b(cfg, 11);
    for (int i = 0; i < 20; ++i) {
      auto oa = a.step({0.7, -0.2}), ob = b.step({0.7, -0.2});
      CHECK(oa.state == ob.state);
      CHECK(oa.points == ob.points);
      for (double x : oa.state) CHECK(std::abs(x) <= 2.0);
      for (const auto& v : {a.state().effector, a.state().target, a.state().object}) {
        CHECK(std::abs(v[0]) <= 1.0);
        CHECK(std::abs(v[1]) <= 1.0);
      }
    }
    ToyEnv c(cfg, 12);
    CHECK(c.state().effector != a.state().effector);
  }
}

TEST_CASE("reach expert") {
  EnvConfig cfg;
  ToyEnvState s;
  s.effector = {0.2, 0.3};
  s.target = {0.2, 0.3};
  auto a = expert_action(cfg, s);
  CHECK(std::abs(a[0]) + std::abs(a[1]) < 1e-12);
  auto chunk = scripted_expert(cfg, s, 3);
  CHECK(chunk.size() == 3);

  int ok = 0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    ToyEnv env(cfg, derive_seed(5, i));
    const double d0 = env.distance();
    Rng rng(i);
    auto r = receding_horizon_rollout(expert_policy(cfg, 3), env, 2, rng);
    ok += r.success;
    CHECK(r.steps_used <= std::size_t(std::ceil(d0 / cfg.max_step)) + 2);
    if (r.success) CHECK(r.final_distance <= cfg.success_radius);
  }
  CHECK(ok == 100);
}

TEST_CASE("push task contact and expert") {
  auto cfg = push_cfg();
  const double R = cfg.effector_radius + cfg.object_radius;
  ToyEnvState s;
  s.effector = {0.0, 0.0};
  s.object = {0.1, 0.0};
  s.target = {0.6, 0.0};
  auto n = advance(cfg, s, {1.0, 0.0});
  CHECK(n.object[0] == doctest::Approx(n.effector[0] + R));
  CHECK(n.object[1] == doctest::Approx(0.0));
  // Moving away leaves the object where it is.
  auto m = advance(cfg, n, {-1.0, 0.0});
  CHECK(m.object == n.object);

  int ok = 0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    ToyEnv env(cfg, derive_seed(6, i));
    while (!env.done()) {
      env.step(expert_action(cfg, env.state()));
      CHECK(dist(env.state().effector, env.state().object) >= R - 1e-9);
    }
    ok += env.state().success;
  }
  CHECK(ok >= 95);
}

TEST_CASE("success rate statistics") {
  auto r = top_k_rates({0.4, 1.0, 0.2, 0.8, 0.6});
  CHECK(r.sr1 == 1.0);
  CHECK(r.sr3 == doctest::Approx(0.8));
  CHECK(r.sr5 == doctest::Approx(0.6));
  auto z = top_k_rates(std::vector<double>(10, 0.0));
  CHECK(z.sr1 == 0.0);
  CHECK(z.sr5 == 0.0);
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> v(1 + rng.index(12));
    for (auto& x : v) x = double(rng.index(21)) / 20.0;
    auto t = top_k_rates(v);
    CHECK(t.sr1 >= t.sr3);
    CHECK(t.sr3 >= t.sr5);
  }
  SeedReport a, b;
  a.rates = {1.0, 0.8, 0.6};
  b.rates = {0.6, 0.6, 0.6};
  auto agg = aggregate({a, b});
  CHECK(agg.mean.sr1 == doctest::Approx(0.8));
  CHECK(agg.stddev.sr1 == doctest::Approx(0.2));
  CHECK(agg.stddev.sr5 == doctest::Approx(0.0));
  auto j = agg.to_json();
  CHECK(j.contains("per_seed"));
  CHECK(j["aggregate"].contains("mean"));
  CHECK(j["aggregate"]["std"].contains("sr3"));
}

TEST_CASE("receding horizon rollout accounting") {
  EnvConfig cfg;
  const std::size_t K = 2, H = 3;
  PolicyFn idle = [&](const std::vector<Observation>& w, Rng&, std::size_t& nfe) {
    CHECK(w.size() == 2);
    nfe += K;
    return std::vector<std::vector<double>>(H, {0.0, 0.0});
  };
  ToyEnv env(cfg, 9);
  Rng rng(0);
  auto r = receding_horizon_rollout(idle, env, 2, rng);
  CHECK(!r.success);
  CHECK(r.steps_used == cfg.episode_cap);
  CHECK(r.nfe == std::size_t(std::ceil(double(cfg.episode_cap) / H)) * K);

  // The expert wrapped as a policy: calls = ceil(steps / H).
  ToyEnv e2(cfg, 10);
  auto base = expert_policy(cfg, H);
  PolicyFn counted = [&](const std::vector<Observation>& w, Rng& g, std::size_t& nfe) {
    nfe += K;
    return base(w, g, nfe);
  };
  auto r2 = receding_horizon_rollout(counted, e2, 2, rng);
  CHECK(r2.success);
  CHECK(r2.nfe == std::size_t(std::ceil(double(r2.steps_used) / H)) * K);

  // Warm start repeats the first observation.
  ToyEnv e3(cfg, 11);
  const auto first = e3.observe().state;
  PolicyFn probe = [&](const std::vector<Observation>& w, Rng&, std::size_t&) {
    CHECK(w[0].state == first);
    CHECK(w[1].state == first);
    return std::vector<std::vector<double>>{};
  };
  CHECK_THROWS(receding_horizon_rollout(probe, e3, 2, rng));
}

TEST_CASE("evaluation is independent of the job count") {
  EnvConfig cfg;
  EvalConfig ec;
  ec.rounds = 3;
  ec.episodes_per_round = 4;
  PolicyFn noisy = [&](const std::vector<Observation>& w, Rng& rng, std::size_t& nfe) {
    ++nfe;
    auto a = scripted_expert(cfg, state_from_observation(cfg, w.back().state), 3);
    for (auto& x : a) x[0] += 0.8 * rng.normal();
    return a;
  };
  auto one = evaluate_seed(noisy, cfg, ec, 42, 2);
  ec.jobs = 4;
  auto four = evaluate_seed(noisy, cfg, ec, 42, 2);
  CHECK(one.round_rates == four.round_rates);
  CHECK(one.mean_steps == four.mean_steps);
  CHECK(one.mean_nfe == four.mean_nfe);
  ec.episodes_per_round = 0;
  CHECK_THROWS(evaluate_seed(noisy, cfg, ec, 42, 2));
  EvalConfig defaults;
  CHECK(defaults.seeds == std::vector<std::uint64_t>{0, 42, 100});
}

TEST_CASE("demo corpus") {
  EnvConfig cfg;
  cfg.random_fps_seed = true;
  auto demos = generate_corpus(cfg, 10, 0);
  CHECK(demos.size() == 10);
  for (const auto& d : demos) {
    CHECK(d.actions.size() == d.obs_state.size());
    CHECK(d.obs_points.front().size() == 64);
    // Replaying the actions from the first state finishes the episode.
    auto s = state_from_observation(cfg, d.obs_state.front());
    for (const auto& a : d.actions) s = advance(cfg, s, a);
    CHECK(s.success);
  }
  CHECK(generate_corpus(cfg, 2, 0) == std::vector<perception::Demonstration>(demos.begin(), demos.begin() + 2));
}
