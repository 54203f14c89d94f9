#include "flowkan/training.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "flowkan/checkpoint.hpp"

namespace flowkan::train {

namespace {

using perception::Demonstration;
using perception::Normalizer;

void check_corpus(const std::vector<Demonstration>& demos, const RunConfig& cfg) {
  if (demos.empty()) throw ConfigError("train: corpus is empty");
  const auto& pc = cfg.model.perception;
  for (std::size_t i = 0; i < demos.size(); ++i) {
    const auto& d = demos[i];
    const std::string where = "train: demo " + std::to_string(i) + ": ";
    if (d.actions.empty() || d.obs_state.size() != d.actions.size() || d.obs_points.size() != d.actions.size()) {
      throw ConfigError(where + "ragged or empty episode");
    }
    for (std::size_t t = 0; t < d.actions.size(); ++t) {
      if (d.obs_state[t].size() != pc.state_dim) {
        throw ConfigError(where + "state has " + std::to_string(d.obs_state[t].size()) + " dims, config expects " +
                          std::to_string(pc.state_dim));
      }
      if (d.obs_points[t].size() != pc.points) {
        throw ConfigError(where + "cloud has " + std::to_string(d.obs_points[t].size()) + " points, config expects " +
                          std::to_string(pc.points));
      }
      if (d.actions[t].size() != cfg.model.backbone.action_dim) throw ConfigError(where + "action width mismatch");
    }
  }
}

std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << const_cast<Rng&>(rng).engine();
  return os.str();
}

void set_rng_state(Rng& rng, const std::string& s) {
  std::istringstream is(s);
  is >> rng.engine();
  if (!is) throw CheckpointError("checkpoint: corrupt rng state");
}

}  // namespace

Dataset Dataset::build(const std::vector<Demonstration>& demos, const RunConfig& cfg) {
  check_corpus(demos, cfg);
  std::vector<std::vector<double>> s_rows, a_rows;
  for (const auto& d : demos) {
    s_rows.insert(s_rows.end(), d.obs_state.begin(), d.obs_state.end());
    a_rows.insert(a_rows.end(), d.actions.begin(), d.actions.end());
  }
  return build(demos, cfg, Normalizer::fit(s_rows), Normalizer::fit(a_rows));
}

Dataset Dataset::build(const std::vector<Demonstration>& demos, const RunConfig& cfg, Normalizer state_norm,
                       Normalizer action_norm) {
  check_corpus(demos, cfg);
  Dataset ds;
  const auto& pc = cfg.model.perception;
  ds.n_obs = pc.n_obs;
  ds.horizon = cfg.model.backbone.horizon;
  ds.state_dim = pc.state_dim;
  ds.points = pc.points;
  ds.action_dim = cfg.model.backbone.action_dim;
  if (state_norm.dim() != ds.state_dim || action_norm.dim() != ds.action_dim) {
    throw ConfigError("train: normalizer dimensions do not match the config");
  }
  ds.state_norm = std::move(state_norm);
  ds.action_norm = std::move(action_norm);
  const long u0 = long(ds.n_obs) - 1;
  for (const auto& d : demos) {
    const long L = long(d.actions.size());
    auto clip = [L](long i) { return std::size_t(std::clamp(i, 0L, L - 1)); };
    for (long tau = 0; tau < L; ++tau) {
      std::vector<float> st, cl, ac;
      for (long o = tau - u0; o <= tau; ++o) {
        for (double x : ds.state_norm.normalize(d.obs_state[clip(o)])) st.push_back(float(x));
        for (const auto& p : d.obs_points[clip(o)]) cl.insert(cl.end(), {float(p[0]), float(p[1]), float(p[2])});
      }
      for (long h = 0; h < long(ds.horizon); ++h) {
        for (double x : ds.action_norm.normalize(d.actions[clip(tau - u0 + h)])) ac.push_back(float(x));
      }
      ds.states.push_back(std::move(st));
      ds.clouds.push_back(std::move(cl));
      ds.actions.push_back(std::move(ac));
    }
  }
  return ds;
}

Dataset::Batch Dataset::gather(const std::vector<std::size_t>& index) const {
  if (index.empty()) throw std::invalid_argument("dataset: empty batch");
  std::vector<float> s, c, a;
  for (auto i : index) {
    s.insert(s.end(), states.at(i).begin(), states[i].end());
    c.insert(c.end(), clouds[i].begin(), clouds[i].end());
    a.insert(a.end(), actions[i].begin(), actions[i].end());
  }
  const std::size_t B = index.size();
  return {Tensor<float>({B, n_obs * state_dim}, std::move(s)), Tensor<float>({B * n_obs, points, 3}, std::move(c)),
          Tensor<float>({B, horizon, action_dim}, std::move(a))};
}

nlohmann::json StepMetrics::to_json() const {
  return {{"step", step}, {"l_end", l_end}, {"l_vel", l_vel}, {"l_mfm", l_mfm}, {"l_acr", l_acr}, {"total", total}};
}

Trainer::Trainer(RunConfig cfg, Dataset data) : cfg_(std::move(cfg)), data_(std::move(data)) {
  cfg_.finalize();
  if (data_.size() == 0) throw ConfigError("train: dataset is empty");
  Rng init_rng(derive_seed(cfg_.seed, 1));
  student_ = std::make_unique<policy::FlowPolicyModel<float>>(policy::FlowPolicyModel<float>::init(cfg_.model, init_rng));
  // Copying the struct would share storage, so the teacher gets fresh buffers.
  Rng scratch(0);
  teacher_ = std::make_unique<policy::FlowPolicyModel<float>>(policy::FlowPolicyModel<float>::init(cfg_.model, scratch));
  policy::copy_values(teacher_->parameters(), student_->parameters());
  opt_ = std::make_unique<AdamW<float>>(student_->parameters(), cfg_.optimizer);
  ema_ = std::make_unique<EmaState<float>>(teacher_->parameters(), cfg_.train.ema, true);
  rng_ = Rng(derive_seed(cfg_.seed, 2));
}

void Trainer::new_epoch() {
  order_.resize(data_.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  std::shuffle(order_.begin(), order_.end(), rng_.engine());
  cursor_ = 0;
}

bool Trainer::finished() const {
  if (cfg_.train.max_steps != 0 && steps_ >= cfg_.train.max_steps) return true;
  return epoch_ >= cfg_.train.epochs && cursor_ >= order_.size();
}

StepMetrics Trainer::forward_backward(const std::vector<std::size_t>& index, bool update) {
  auto batch = data_.gather(index);
  Tape<float> tape;
  std::optional<TapeScope<float>> scope;
  std::optional<NoGradGuard> no_grad;
  if (update) {
    scope.emplace(tape);
  } else {
    no_grad.emplace();
  }
  auto params = student_->parameters();
  zero_grads(params);
  auto cond_s = policy::condition(*student_, batch.states, batch.clouds);
  Tensor<float> cond_t;
  {
    NoGradGuard guard;
    cond_t = policy::condition(*teacher_, batch.states, batch.clouds).detach();
  }
  auto student = policy::bind_velocity(*student_, cond_s, kan::ForwardContext{update, &rng_});
  auto teacher = policy::bind_velocity(*teacher_, cond_t);
  auto sample = flow::sample_flow(batch.actions, cfg_.flow.segments_k, cfg_.flow.dt, rng_);
  auto L = flow::compute_losses(student, teacher, sample, cfg_.flow, cfg_.window());
  StepMetrics m{steps_, L.l_end.item(), L.l_vel.item(), L.l_mfm.item(), L.l_acr.item(), L.total.item()};
  if (update) {
    backward(L.total);
    opt_->step();
    ema_->update(params);
    ++steps_;
  }
  return m;
}

StepMetrics Trainer::step(const std::vector<std::size_t>& batch) { return forward_backward(batch, true); }
StepMetrics Trainer::evaluate(const std::vector<std::size_t>& batch) { return forward_backward(batch, false); }

void Trainer::run(const std::function<void(const StepMetrics&)>& on_step) {
  while (!finished()) {
    if (cursor_ >= order_.size()) {
      new_epoch();
      ++epoch_;
    }
    const std::size_t end = std::min(order_.size(), cursor_ + cfg_.train.batch);
    std::vector<std::size_t> batch(order_.begin() + long(cursor_), order_.begin() + long(end));
    cursor_ = end;
    auto m = step(batch);
    if (on_step) on_step(m);
  }
}

void Trainer::save(const std::filesystem::path& path) const {
  CheckpointWriter w;
  w.add_all("params/", student_->parameters());
  w.add_all("ema/", teacher_->parameters());
  const auto& names = opt_->params();
  for (std::size_t i = 0; i < names.size(); ++i) {
    w.add("optim/m/" + names[i].name, const_cast<AdamW<float>&>(*opt_).first_moments()[i]);
    w.add("optim/v/" + names[i].name, const_cast<AdamW<float>&>(*opt_).second_moments()[i]);
  }
  auto& meta = w.meta();
  meta["config"] = cfg_.to_json();
  meta["config_hash"] = config_hash(cfg_);
  meta["step"] = steps_;
  meta["adam_step"] = opt_->step_count();
  meta["epoch"] = epoch_;
  meta["cursor"] = cursor_;
  meta["order"] = order_;
  meta["rng"] = rng_state(rng_);
  meta["state_norm"] = data_.state_norm.to_json();
  meta["action_norm"] = data_.action_norm.to_json();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  w.write(path);
}

namespace {

RunConfig checked_config(const CheckpointReader& r) {
  const auto& meta = r.meta();
  if (!meta.contains("config") || !meta.contains("config_hash")) throw CheckpointError("checkpoint: missing config");
  RunConfig cfg = RunConfig::from_json(meta.at("config"));
  if (config_hash(cfg) != meta.at("config_hash").get<std::string>()) {
    throw CheckpointError("checkpoint: config hash mismatch");
  }
  return cfg;
}

}  // namespace

Trainer Trainer::resume(const std::filesystem::path& path, const std::vector<Demonstration>& demos,
                        const TrainConfig& stop) {
  CheckpointReader r(path);
  RunConfig cfg = checked_config(r);
  cfg.train.epochs = stop.epochs;
  cfg.train.max_steps = stop.max_steps;
  const auto& meta = r.meta();
  auto data = Dataset::build(demos, cfg, Normalizer::from_json(meta.at("state_norm")),
                             Normalizer::from_json(meta.at("action_norm")));
  Trainer t(cfg, std::move(data));
  auto sp = t.student_->parameters();
  auto tp = t.teacher_->parameters();
  r.load_into("params/", sp);
  r.load_into("ema/", tp);
  for (std::size_t i = 0; i < sp.size(); ++i) {
    ParamList<float> m{{sp[i].name, t.opt_->first_moments()[i]}};
    ParamList<float> v{{sp[i].name, t.opt_->second_moments()[i]}};
    r.load_into("optim/m/", m);
    r.load_into("optim/v/", v);
  }
  t.opt_->set_step_count(meta.at("adam_step").get<std::int64_t>());
  t.steps_ = meta.at("step").get<std::size_t>();
  t.epoch_ = meta.at("epoch").get<std::size_t>();
  t.cursor_ = meta.at("cursor").get<std::size_t>();
  t.order_ = meta.at("order").get<std::vector<std::size_t>>();
  set_rng_state(t.rng_, meta.at("rng").get<std::string>());
  return t;
}

LoadedPolicy load_policy(const std::filesystem::path& path) {
  CheckpointReader r(path);
  RunConfig cfg = checked_config(r);
  Rng scratch(0);
  LoadedPolicy p{cfg, policy::FlowPolicyModel<float>::init(cfg.model, scratch), {}, {}};
  auto params = p.model.parameters();
  r.load_into("ema/", params);
  try {
    p.state_norm = Normalizer::from_json(r.meta().at("state_norm"));
    p.action_norm = Normalizer::from_json(r.meta().at("action_norm"));
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint: missing normalizer: ") + e.what());
  }
  return p;
}

LoadedPolicy policy_from_trainer(const Trainer& t) {
  Rng scratch(0);
  LoadedPolicy p{t.config(), policy::FlowPolicyModel<float>::init(t.config().model, scratch), t.data().state_norm,
                 t.data().action_norm};
  policy::copy_values(p.model.parameters(), t.teacher().parameters());
  return p;
}

Tensor<float> encode_window(const LoadedPolicy& p, const std::vector<env::Observation>& window) {
  const auto& pc = p.cfg.model.perception;
  if (window.size() != pc.n_obs) throw std::invalid_argument("policy: observation window has the wrong length");
  std::vector<float> s, c;
  for (const auto& o : window) {
    for (double x : p.state_norm.normalize(o.state)) s.push_back(float(x));
    if (o.points.size() != pc.points) throw std::invalid_argument("policy: cloud has the wrong number of points");
    for (const auto& q : o.points) c.insert(c.end(), {float(q[0]), float(q[1]), float(q[2])});
  }
  NoGradGuard guard;
  return policy::condition(p.model, Tensor<float>({1, pc.n_obs * pc.state_dim}, std::move(s)),
                           Tensor<float>({pc.n_obs, pc.points, 3}, std::move(c)));
}

env::PolicyFn make_policy_fn(const LoadedPolicy& p, std::size_t n_steps) {
  return [&p, n_steps](const std::vector<env::Observation>& window, Rng& rng, std::size_t& nfe) {
    NoGradGuard guard;
    const auto& bc = p.cfg.model.backbone;
    auto v = policy::bind_velocity(p.model, encode_window(p, window));
    auto a_src = flow::draw_source<float>(1, bc.horizon, bc.action_dim, rng);
    auto d = n_steps == 0 ? flow::infer_one_step(v, &p.action_norm, a_src, bc.segments_k, p.cfg.window())
                          : flow::infer_multi_step(v, &p.action_norm, a_src, n_steps, bc.segments_k, p.cfg.window());
    nfe += d.nfe;
    return d.window.at(0);
  };
}

}  // namespace flowkan::train
