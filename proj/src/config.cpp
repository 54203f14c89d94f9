#include "flowkan/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace flowkan {

namespace {

using nlohmann::json;

/// Reads keys of one JSON object into fields, rejecting anything unlisted.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("config: '" + name_ + "' must be an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("config: unknown key '" + prefix() + k + "'");
    }
  }

  template <class V>
  void get(const char* key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<V>();
    } catch (const json::exception& e) {
      throw ConfigError("config: bad value for '" + prefix() + key + "': " + e.what());
    }
  }
  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

 private:
  std::string prefix() const { return name_.empty() ? "" : name_ + "."; }
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

}  // namespace

void RunConfig::finalize() {
  auto& pc = model.perception;
  auto& bc = model.backbone;
  pc.state_dim = env::state_dim(env.task);
  pc.points = env.points;
  bc.cond_dim = pc.cond_dim();
  bc.segments_k = flow.segments_k;
  bc.action_dim = 2;
  try {
    policy::validate(model);
    flow::validate(flow);
    window();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (train.batch == 0) throw ConfigError("config: train.batch must be positive");
  if (!(train.ema >= 0.0 && train.ema < 1.0)) throw ConfigError("config: train.ema must lie in [0, 1)");
  if (!(optimizer.lr > 0.0)) throw ConfigError("config: optimizer.lr must be positive");
  if (env.points == 0 || env.points > env.raw_points) throw ConfigError("config: need 0 < env.points <= env.raw_points");
  if (env.episode_cap == 0 || !(env.max_step > 0.0)) throw ConfigError("config: env cap and max_step must be positive");
  if (eval.rounds == 0 || eval.episodes_per_round == 0) throw ConfigError("config: n_episodes must be positive");
  if (eval.seeds.empty()) throw ConfigError("config: eval.seeds is empty");
  if (eval.jobs == 0) throw ConfigError("config: eval.jobs must be positive");
}

flow::ControlWindow RunConfig::window() const {
  return flow::ControlWindow::make(model.perception.n_obs, exec_horizon, model.backbone.horizon);
}

json RunConfig::to_json() const {
  const auto& pc = model.perception;
  const auto& bc = model.backbone;
  json j;
  j["seed"] = seed;
  j["demos"] = demos;
  j["out"] = out;
  j["exec_horizon"] = exec_horizon;
  j["perception"] = {{"n_obs", pc.n_obs},
                     {"point_hidden1", pc.point_hidden1},
                     {"point_hidden2", pc.point_hidden2},
                     {"vision_dim", pc.vision_dim},
                     {"state_hidden", pc.state_hidden},
                     {"state_emb", pc.state_emb}};
  j["backbone"] = {{"widths", bc.widths},
                   {"blocks_per_stage", bc.blocks_per_stage},
                   {"horizon", bc.horizon},
                   {"downsample", bc.downsample},
                   {"groups", bc.group_g},
                   {"kan_depth", bc.kan_depth},
                   {"cam_reduction", bc.cam_reduction},
                   {"spline",
                    {{"intervals", bc.spline_grid.intervals},
                     {"order", bc.spline_grid.order},
                     {"extent", bc.spline_grid.extent}}},
                   {"drop_path", bc.drop_path},
                   {"bidir_dedup", bc.bidir_dedup},
                   {"time_dim", bc.time_dim},
                   {"time_hidden", bc.time_hidden},
                   {"separate_heads", bc.separate_heads}};
  j["flow"] = {{"segments", flow.segments_k},
               {"dt", flow.dt},
               {"alpha", flow.alpha},
               {"lambdas", flow.lambdas},
               {"lambda_acr", flow.lambda_acr}};
  j["optimizer"] = {{"lr", optimizer.lr},
                    {"beta1", optimizer.beta1},
                    {"beta2", optimizer.beta2},
                    {"eps", optimizer.eps},
                    {"weight_decay", optimizer.weight_decay}};
  j["train"] = {{"epochs", train.epochs}, {"batch", train.batch}, {"ema", train.ema}, {"max_steps", train.max_steps}};
  j["env"] = {{"task", env::task_name(env.task)},
              {"max_step", env.max_step},
              {"success_radius", env.success_radius},
              {"episode_cap", env.episode_cap},
              {"point_noise", env.point_noise},
              {"raw_points", env.raw_points},
              {"points", env.points},
              {"effector_radius", env.effector_radius},
              {"object_radius", env.object_radius},
              {"target_radius", env.target_radius}};
  j["eval"] = {{"rounds", eval.rounds},
               {"episodes_per_round", eval.episodes_per_round},
               {"seeds", eval.seeds},
               {"jobs", eval.jobs}};
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  {
    Section s(j, "");
    s.get("seed", c.seed);
    s.get("demos", c.demos);
    s.get("out", c.out);
    s.get("exec_horizon", c.exec_horizon);
    if (auto* p = s.child("perception")) {
      Section q(*p, "perception");
      auto& pc = c.model.perception;
      q.get("n_obs", pc.n_obs);
      q.get("point_hidden1", pc.point_hidden1);
      q.get("point_hidden2", pc.point_hidden2);
      q.get("vision_dim", pc.vision_dim);
      q.get("state_hidden", pc.state_hidden);
      q.get("state_emb", pc.state_emb);
    }
    if (auto* p = s.child("backbone")) {
      Section q(*p, "backbone");
      auto& bc = c.model.backbone;
      q.get("widths", bc.widths);
      q.get("blocks_per_stage", bc.blocks_per_stage);
      q.get("horizon", bc.horizon);
      q.get("downsample", bc.downsample);
      q.get("groups", bc.group_g);
      q.get("kan_depth", bc.kan_depth);
      q.get("cam_reduction", bc.cam_reduction);
      if (auto* g = q.child("spline")) {
        Section r(*g, "backbone.spline");
        r.get("intervals", bc.spline_grid.intervals);
        r.get("order", bc.spline_grid.order);
        r.get("extent", bc.spline_grid.extent);
      }
      q.get("drop_path", bc.drop_path);
      q.get("bidir_dedup", bc.bidir_dedup);
      q.get("time_dim", bc.time_dim);
      q.get("time_hidden", bc.time_hidden);
      q.get("separate_heads", bc.separate_heads);
    }
    if (auto* p = s.child("flow")) {
      Section q(*p, "flow");
      q.get("segments", c.flow.segments_k);
      q.get("dt", c.flow.dt);
      q.get("alpha", c.flow.alpha);
      q.get("lambdas", c.flow.lambdas);
      q.get("lambda_acr", c.flow.lambda_acr);
    }
    if (auto* p = s.child("optimizer")) {
      Section q(*p, "optimizer");
      q.get("lr", c.optimizer.lr);
      q.get("beta1", c.optimizer.beta1);
      q.get("beta2", c.optimizer.beta2);
      q.get("eps", c.optimizer.eps);
      q.get("weight_decay", c.optimizer.weight_decay);
    }
    if (auto* p = s.child("train")) {
      Section q(*p, "train");
      q.get("epochs", c.train.epochs);
      q.get("batch", c.train.batch);
      q.get("ema", c.train.ema);
      q.get("max_steps", c.train.max_steps);
    }
    if (auto* p = s.child("env")) {
      Section q(*p, "env");
      std::string task = env::task_name(c.env.task);
      q.get("task", task);
      try {
        c.env.task = env::parse_task(task);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: env.task: ") + e.what());
      }
      q.get("max_step", c.env.max_step);
      q.get("success_radius", c.env.success_radius);
      q.get("episode_cap", c.env.episode_cap);
      q.get("point_noise", c.env.point_noise);
      q.get("raw_points", c.env.raw_points);
      q.get("points", c.env.points);
      q.get("effector_radius", c.env.effector_radius);
      q.get("object_radius", c.env.object_radius);
      q.get("target_radius", c.env.target_radius);
    }
    if (auto* p = s.child("eval")) {
      Section q(*p, "eval");
      q.get("rounds", c.eval.rounds);
      q.get("episodes_per_round", c.eval.episodes_per_round);
      q.get("seeds", c.eval.seeds);
      q.get("jobs", c.eval.jobs);
    }
  }
  c.finalize();
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: " + path + ": " + e.what());
  }
  return from_json(j);
}

std::string config_hash(const RunConfig& cfg) {
  // FNV-1a over the canonical dump; keys are sorted by nlohmann::json.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : cfg.to_json().dump()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

}  // namespace flowkan
