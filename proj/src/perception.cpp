#include "flowkan/perception.hpp"

#include <fstream>
#include <limits>
#include <stdexcept>

namespace flowkan::perception {

std::vector<std::size_t> fps(const PointCloud& points, std::size_t m, std::size_t seed_index) {
  const std::size_t n = points.size();
  if (m == 0 || m > n) {
    throw std::invalid_argument("fps: cannot select " + std::to_string(m) + " of " + std::to_string(n) + " points");
  }
  if (seed_index >= n) throw std::invalid_argument("fps: seed index " + std::to_string(seed_index) + " out of range");
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> picked{seed_index};
  picked.reserve(m);
  std::size_t last = seed_index;
  while (picked.size() < m) {
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dx = points[i][0] - points[last][0];
      const double dy = points[i][1] - points[last][1];
      const double dz = points[i][2] - points[last][2];
      dist[i] = std::min(dist[i], dx * dx + dy * dy + dz * dz);
      if (dist[i] > best_d) {
        best_d = dist[i];
        best = i;
      }
    }
    picked.push_back(best);
    last = best;
  }
  return picked;
}

template <class T>
PointEncoder<T> PointEncoder<T>::init(const PerceptionConfig& cfg, Rng& rng) {
  PointEncoder p;
  p.fc1 = Linear<T>::init(3, cfg.point_hidden1, rng);
  p.fc2 = Linear<T>::init(cfg.point_hidden1, cfg.point_hidden2, rng);
  p.proj = Linear<T>::init(cfg.point_hidden2, cfg.vision_dim, rng);
  return p;
}

template <class T>
void PointEncoder<T>::collect(ParamList<T>& out) const {
  fc1.collect(out, "points.fc1.");
  fc2.collect(out, "points.fc2.");
  proj.collect(out, "points.proj.");
}

template <class T>
Tensor<T> encode_points(const PointEncoder<T>& p, const Tensor<T>& points) {
  if (points.rank() != 3 || points.dim(2) != 3) throw ShapeError("encode_points: expected [B x N x 3], got " + shape_str(points.shape()));
  if (points.dim(1) == 0) throw ShapeError("encode_points: empty point cloud");
  auto h = silu(p.fc2(silu(p.fc1(points))));
  return p.proj(max_axis1(h));
}

template <class T>
StateEncoder<T> StateEncoder<T>::init(const PerceptionConfig& cfg, Rng& rng) {
  StateEncoder p;
  p.fc1 = Linear<T>::init(cfg.n_obs * cfg.state_dim, cfg.state_hidden, rng);
  p.fc2 = Linear<T>::init(cfg.state_hidden, cfg.state_emb, rng);
  return p;
}

template <class T>
void StateEncoder<T>::collect(ParamList<T>& out) const {
  fc1.collect(out, "state.fc1.");
  fc2.collect(out, "state.fc2.");
}

template <class T>
Tensor<T> encode_state(const StateEncoder<T>& p, const Tensor<T>& states) {
  if (states.rank() != 2 || states.dim(1) != p.fc1.in_dim()) {
    throw ShapeError("encode_state: expected [B x " + std::to_string(p.fc1.in_dim()) + "], got " +
                     shape_str(states.shape()));
  }
  return p.fc2(silu(p.fc1(states)));
}

Normalizer::Normalizer(std::vector<double> lo, std::vector<double> hi) : lo_(std::move(lo)), hi_(std::move(hi)) {
  if (lo_.size() != hi_.size()) throw std::invalid_argument("normalizer: lo/hi length mismatch");
  for (std::size_t d = 0; d < lo_.size(); ++d) {
    if (!(hi_[d] >= lo_[d])) throw std::invalid_argument("normalizer: hi < lo in dimension " + std::to_string(d));
  }
}

Normalizer Normalizer::fit(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw std::invalid_argument("normalizer: empty corpus");
  const std::size_t D = rows.front().size();
  std::vector<double> lo(D, std::numeric_limits<double>::infinity());
  std::vector<double> hi(D, -std::numeric_limits<double>::infinity());
  for (const auto& r : rows) {
    if (r.size() != D) throw std::invalid_argument("normalizer: ragged corpus rows");
    for (std::size_t d = 0; d < D; ++d) {
      lo[d] = std::min(lo[d], r[d]);
      hi[d] = std::max(hi[d], r[d]);
    }
  }
  return Normalizer(std::move(lo), std::move(hi));
}

double Normalizer::normalize(std::size_t d, double x) const {
  const double span = hi_[d] - lo_[d];
  if (span == 0.0) return 0.0;
  return 2.0 * (x - lo_[d]) / span - 1.0;
}

double Normalizer::denormalize(std::size_t d, double y) const {
  const double span = hi_[d] - lo_[d];
  if (span == 0.0) return lo_[d];
  return (y + 1.0) * 0.5 * span + lo_[d];
}

std::vector<double> Normalizer::normalize(const std::vector<double>& x) const {
  if (x.size() != dim()) throw std::invalid_argument("normalizer: input has " + std::to_string(x.size()) + " dims, expected " + std::to_string(dim()));
  std::vector<double> y(x.size());
  for (std::size_t d = 0; d < x.size(); ++d) y[d] = normalize(d, x[d]);
  return y;
}

std::vector<double> Normalizer::denormalize(const std::vector<double>& y) const {
  if (y.size() != dim()) throw std::invalid_argument("normalizer: input has " + std::to_string(y.size()) + " dims, expected " + std::to_string(dim()));
  std::vector<double> x(y.size());
  for (std::size_t d = 0; d < y.size(); ++d) x[d] = denormalize(d, y[d]);
  return x;
}

nlohmann::json Normalizer::to_json() const { return {{"lo", lo_}, {"hi", hi_}}; }

Normalizer Normalizer::from_json(const nlohmann::json& j) {
  return Normalizer(j.at("lo").get<std::vector<double>>(), j.at("hi").get<std::vector<double>>());
}

nlohmann::json to_json(const Demonstration& d) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& cloud : d.obs_points) {
    nlohmann::json c = nlohmann::json::array();
    for (const auto& p : cloud) c.push_back({p[0], p[1], p[2]});
    pts.push_back(std::move(c));
  }
  return {{"obs_state", d.obs_state}, {"obs_points", std::move(pts)}, {"actions", d.actions}};
}

Demonstration demonstration_from_json(const nlohmann::json& j) {
  Demonstration d;
  d.obs_state = j.at("obs_state").get<std::vector<std::vector<double>>>();
  d.actions = j.at("actions").get<std::vector<std::vector<double>>>();
  for (const auto& c : j.at("obs_points")) {
    PointCloud cloud;
    for (const auto& p : c) cloud.push_back({p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()});
    d.obs_points.push_back(std::move(cloud));
  }
  if (d.obs_state.size() != d.actions.size() || d.obs_points.size() != d.actions.size()) {
    throw std::invalid_argument("demonstration: obs_state, obs_points and actions lengths differ");
  }
  if (d.actions.empty()) throw std::invalid_argument("demonstration: empty episode");
  return d;
}

void write_corpus(const std::string& path, const std::vector<Demonstration>& demos) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write corpus " + path);
  for (const auto& d : demos) out << to_json(d).dump() << '\n';
  if (!out) throw std::runtime_error("write failed for corpus " + path);
}

std::vector<Demonstration> read_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read corpus " + path);
  std::vector<Demonstration> demos;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      demos.push_back(demonstration_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (demos.empty()) throw std::runtime_error("corpus " + path + " holds no episodes");
  return demos;
}

#define FLOWKAN_PERCEPTION(T)                                                       \
  template struct PointEncoder<T>;                                                  \
  template struct StateEncoder<T>;                                                  \
  template Tensor<T> encode_points<T>(const PointEncoder<T>&, const Tensor<T>&);    \
  template Tensor<T> encode_state<T>(const StateEncoder<T>&, const Tensor<T>&);

FLOWKAN_PERCEPTION(float)
FLOWKAN_PERCEPTION(double)

}  // namespace flowkan::perception
