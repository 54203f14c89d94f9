#include "flowkan/envsuite.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <deque>
#include <numbers>
#include <stdexcept>
#include <thread>

namespace flowkan::env {

namespace {

constexpr double kEffectorZ = 0.05;
constexpr double kObjectZ = 0.02;
constexpr double kTargetZ = 0.0;

double norm2(const Vec2& v) { return std::hypot(v[0], v[1]); }
Vec2 sub2(const Vec2& a, const Vec2& b) { return {a[0] - b[0], a[1] - b[1]}; }
double clamp1(double x) { return std::clamp(x, -1.0, 1.0); }

Vec2 uniform_point(Rng& rng, double extent) { return {rng.uniform(-extent, extent), rng.uniform(-extent, extent)}; }

/// Proportional step toward `desired`, scaled so no axis exceeds one unit.
std::vector<double> step_toward(const EnvConfig& cfg, const Vec2& from, const Vec2& desired) {
  std::vector<double> a{(desired[0] - from[0]) / cfg.max_step, (desired[1] - from[1]) / cfg.max_step};
  const double m = std::max(std::abs(a[0]), std::abs(a[1]));
  if (m > 1.0) {
    a[0] /= m;
    a[1] /= m;
  }
  return a;
}

std::vector<double> push_expert(const EnvConfig& cfg, const ToyEnvState& s) {
  const double R = cfg.effector_radius + cfg.object_radius;
  Vec2 to_target = sub2(s.target, s.object);
  const double remaining = norm2(to_target);
  if (remaining < 1e-12) return {0.0, 0.0};
  const Vec2 dir{to_target[0] / remaining, to_target[1] / remaining};
  const Vec2 perp{-dir[1], dir[0]};
  const Vec2 rel = sub2(s.effector, s.object);
  const double along = rel[0] * dir[0] + rel[1] * dir[1];
  const double lat = rel[0] * perp[0] + rel[1] * perp[1];
  const double side = lat >= 0.0 ? 1.0 : -1.0;
  auto at = [&](double a, double l) -> Vec2 {
    return {s.object[0] + a * dir[0] + l * perp[0], s.object[1] + a * dir[1] + l * perp[1]};
  };
  Vec2 desired;
  if (along < -0.5 * R && std::abs(lat) <= 0.02) {
    desired = at(-R + std::min(cfg.max_step, remaining), 0.0);  // push
  } else if (along <= -(R + 0.03)) {
    desired = at(-(R + 0.06), 0.0);  // slide in behind the object
  } else if (std::abs(lat) < R + 0.05) {
    desired = at(along, side * (R + 0.1));  // step aside
  } else {
    desired = at(-(R + 0.06), side * (R + 0.1));  // go around
  }
  return step_toward(cfg, s.effector, desired);
}

}  // namespace

Task parse_task(const std::string& name) {
  if (name == "reach") return Task::Reach;
  if (name == "push") return Task::Push;
  throw std::invalid_argument("unknown task '" + name + "' (expected reach or push)");
}

std::string task_name(Task task) { return task == Task::Reach ? "reach" : "push"; }

std::size_t state_dim(Task task) { return task == Task::Reach ? 6 : 10; }

double task_distance(const EnvConfig& cfg, const ToyEnvState& s) {
  return cfg.task == Task::Reach ? norm2(sub2(s.target, s.effector)) : norm2(sub2(s.target, s.object));
}

ToyEnvState advance(const EnvConfig& cfg, ToyEnvState s, const std::vector<double>& action) {
  if (action.size() != 2) throw std::invalid_argument("env: actions are 2-dimensional");
  for (double a : action) {
    if (!std::isfinite(a)) throw std::invalid_argument("env: non-finite action");
  }
  s.effector[0] = clamp1(s.effector[0] + clamp1(action[0]) * cfg.max_step);
  s.effector[1] = clamp1(s.effector[1] + clamp1(action[1]) * cfg.max_step);
  if (cfg.task == Task::Push) {
    const double R = cfg.effector_radius + cfg.object_radius;
    Vec2 rel = sub2(s.object, s.effector);
    double d = norm2(rel);
    if (d < R) {
      if (d < 1e-12) {
        rel = {action[0], action[1]};
        d = std::max(norm2(rel), 1e-12);
      }
      s.object = {clamp1(s.effector[0] + rel[0] / d * R), clamp1(s.effector[1] + rel[1] / d * R)};
    }
  }
  ++s.step;
  if (task_distance(cfg, s) <= cfg.success_radius) s.success = true;
  return s;
}

ToyEnv::ToyEnv(EnvConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), rng_(seed) {
  if (cfg_.points == 0 || cfg_.points > cfg_.raw_points) throw std::invalid_argument("env: need 0 < points <= raw_points");
  reset();
}

Observation ToyEnv::reset() {
  s_ = ToyEnvState{};
  if (cfg_.task == Task::Reach) {
    s_.effector = uniform_point(rng_, 0.9);
    do {
      s_.target = uniform_point(rng_, 0.8);
    } while (norm2(sub2(s_.target, s_.effector)) < 0.3);
  } else {
    const double R = cfg_.effector_radius + cfg_.object_radius;
    s_.object = uniform_point(rng_, 0.5);
    do {
      s_.target = uniform_point(rng_, 0.6);
    } while (norm2(sub2(s_.target, s_.object)) < 0.25);
    do {
      s_.effector = uniform_point(rng_, 0.9);
    } while (norm2(sub2(s_.effector, s_.object)) < R + 0.1);
  }
  return observe();
}

Observation ToyEnv::step(const std::vector<double>& action) {
  s_ = advance(cfg_, s_, action);
  return observe();
}

double ToyEnv::distance() const { return task_distance(cfg_, s_); }

Observation ToyEnv::observe() {
  Observation o;
  const auto& e = s_.effector;
  const auto& t = s_.target;
  if (cfg_.task == Task::Reach) {
    o.state = {e[0], e[1], t[0], t[1], t[0] - e[0], t[1] - e[1]};
  } else {
    const auto& b = s_.object;
    o.state = {e[0], e[1], b[0], b[1], t[0], t[1], b[0] - e[0], b[1] - e[1], t[0] - b[0], t[1] - b[1]};
  }
  struct Disc {
    Vec2 c;
    double r, z;
  };
  std::vector<Disc> discs{{e, cfg_.effector_radius, kEffectorZ}, {t, cfg_.target_radius, kTargetZ}};
  if (cfg_.task == Task::Push) discs.push_back({s_.object, cfg_.object_radius, kObjectZ});
  perception::PointCloud raw;
  raw.reserve(cfg_.raw_points);
  for (std::size_t i = 0; i < cfg_.raw_points; ++i) {
    const auto& d = discs[i % discs.size()];
    const double r = d.r * std::sqrt(rng_.uniform());
    const double th = 2.0 * std::numbers::pi * rng_.uniform();
    raw.push_back({d.c[0] + r * std::cos(th) + cfg_.point_noise * rng_.normal(),
                   d.c[1] + r * std::sin(th) + cfg_.point_noise * rng_.normal(), d.z + cfg_.point_noise * rng_.normal()});
  }
  const std::size_t start = cfg_.random_fps_seed ? rng_.index(raw.size()) : 0;
  for (auto i : perception::fps(raw, cfg_.points, start)) o.points.push_back(raw[i]);
  return o;
}

std::vector<double> expert_action(const EnvConfig& cfg, const ToyEnvState& s) {
  if (cfg.task == Task::Reach) return step_toward(cfg, s.effector, s.target);
  return push_expert(cfg, s);
}

std::vector<std::vector<double>> scripted_expert(const EnvConfig& cfg, const ToyEnvState& s, std::size_t H) {
  std::vector<std::vector<double>> chunk;
  ToyEnvState cur = s;
  for (std::size_t i = 0; i < H; ++i) {
    chunk.push_back(expert_action(cfg, cur));
    cur = advance(cfg, cur, chunk.back());
  }
  return chunk;
}

ToyEnvState state_from_observation(const EnvConfig& cfg, const std::vector<double>& v) {
  if (v.size() != state_dim(cfg.task)) throw std::invalid_argument("env: state vector has wrong length");
  ToyEnvState s;
  s.effector = {v[0], v[1]};
  if (cfg.task == Task::Reach) {
    s.target = {v[2], v[3]};
  } else {
    s.object = {v[2], v[3]};
    s.target = {v[4], v[5]};
  }
  return s;
}

perception::Demonstration record_demo(const EnvConfig& cfg, std::uint64_t seed) {
  ToyEnv env(cfg, seed);
  perception::Demonstration d;
  auto obs = env.observe();
  while (!env.done()) {
    auto a = expert_action(cfg, env.state());
    d.obs_state.push_back(obs.state);
    d.obs_points.push_back(obs.points);
    d.actions.push_back(a);
    obs = env.step(a);
  }
  return d;
}

std::vector<perception::Demonstration> generate_corpus(const EnvConfig& cfg, std::size_t count, std::uint64_t seed) {
  std::vector<perception::Demonstration> demos;
  for (std::size_t i = 0; i < count; ++i) demos.push_back(record_demo(cfg, derive_seed(seed, i)));
  return demos;
}

PolicyFn expert_policy(const EnvConfig& cfg, std::size_t H) {
  return [cfg, H](const std::vector<Observation>& window, Rng&, std::size_t&) {
    return scripted_expert(cfg, state_from_observation(cfg, window.back().state), H);
  };
}

EpisodeResult receding_horizon_rollout(const PolicyFn& policy, ToyEnv& env, std::size_t n_obs, Rng& rng) {
  if (n_obs == 0) throw std::invalid_argument("rollout: n_obs must be positive");
  std::deque<Observation> window(n_obs, env.observe());
  EpisodeResult r;
  while (!env.done()) {
    auto actions = policy(std::vector<Observation>(window.begin(), window.end()), rng, r.nfe);
    if (actions.empty()) throw std::runtime_error("rollout: policy returned no actions");
    for (const auto& a : actions) {
      window.push_back(env.step(a));
      window.pop_front();
      if (env.done()) break;
    }
  }
  r.success = env.state().success;
  r.steps_used = env.state().step;
  r.final_distance = env.distance();
  return r;
}

SuccessRates top_k_rates(std::vector<double> rates) {
  if (rates.empty()) return {};
  std::sort(rates.begin(), rates.end(), std::greater<>());
  auto top = [&](std::size_t k) {
    k = std::min(k, rates.size());
    double s = 0;
    for (std::size_t i = 0; i < k; ++i) s += rates[i];
    return s / double(k);
  };
  return {top(1), top(3), top(5)};
}

SeedReport evaluate_seed(const PolicyFn& policy, const EnvConfig& env_cfg, const EvalConfig& eval, std::uint64_t seed,
                         std::size_t n_obs) {
  if (eval.rounds == 0 || eval.episodes_per_round == 0) throw std::invalid_argument("evaluate: n_episodes must be positive");
  const std::size_t n = eval.rounds * eval.episodes_per_round;
  std::vector<EpisodeResult> results(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < n;) {
      ToyEnv env(env_cfg, derive_seed(seed, i));
      Rng rng(derive_seed(seed ^ 0x5eedf00dULL, i));
      results[i] = receding_horizon_rollout(policy, env, n_obs, rng);
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(eval.jobs, n));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  SeedReport rep;
  rep.seed = seed;
  for (std::size_t r = 0; r < eval.rounds; ++r) {
    std::size_t ok = 0;
    for (std::size_t e = 0; e < eval.episodes_per_round; ++e) ok += results[r * eval.episodes_per_round + e].success;
    rep.round_rates.push_back(double(ok) / double(eval.episodes_per_round));
  }
  for (const auto& res : results) {
    rep.mean_steps += double(res.steps_used) / double(n);
    rep.mean_nfe += double(res.nfe) / double(n);
  }
  rep.rates = top_k_rates(rep.round_rates);
  return rep;
}

EvalReport aggregate(std::vector<SeedReport> seeds) {
  EvalReport rep;
  rep.seeds = std::move(seeds);
  const double n = double(rep.seeds.size());
  if (rep.seeds.empty()) return rep;
  for (const auto& s : rep.seeds) {
    rep.mean.sr1 += s.rates.sr1 / n;
    rep.mean.sr3 += s.rates.sr3 / n;
    rep.mean.sr5 += s.rates.sr5 / n;
  }
  for (const auto& s : rep.seeds) {
    rep.stddev.sr1 += (s.rates.sr1 - rep.mean.sr1) * (s.rates.sr1 - rep.mean.sr1) / n;
    rep.stddev.sr3 += (s.rates.sr3 - rep.mean.sr3) * (s.rates.sr3 - rep.mean.sr3) / n;
    rep.stddev.sr5 += (s.rates.sr5 - rep.mean.sr5) * (s.rates.sr5 - rep.mean.sr5) / n;
  }
  rep.stddev = {std::sqrt(rep.stddev.sr1), std::sqrt(rep.stddev.sr3), std::sqrt(rep.stddev.sr5)};
  return rep;
}

EvalReport evaluate_policy(const PolicyFn& policy, const EnvConfig& env_cfg, const EvalConfig& eval, std::size_t n_obs) {
  if (eval.seeds.empty()) throw std::invalid_argument("evaluate: no seeds");
  std::vector<SeedReport> reps;
  for (auto s : eval.seeds) reps.push_back(evaluate_seed(policy, env_cfg, eval, s, n_obs));
  return aggregate(std::move(reps));
}

nlohmann::json EvalReport::to_json() const {
  auto rates = [](const SuccessRates& r) { return nlohmann::json{{"sr1", r.sr1}, {"sr3", r.sr3}, {"sr5", r.sr5}}; };
  nlohmann::json per = nlohmann::json::array();
  for (const auto& s : seeds) {
    auto j = rates(s.rates);
    j["seed"] = s.seed;
    j["round_rates"] = s.round_rates;
    j["mean_steps"] = s.mean_steps;
    j["mean_nfe"] = s.mean_nfe;
    per.push_back(std::move(j));
  }
  return {{"per_seed", std::move(per)}, {"aggregate", {{"mean", rates(mean)}, {"std", rates(stddev)}}}};
}

}  // namespace flowkan::env
