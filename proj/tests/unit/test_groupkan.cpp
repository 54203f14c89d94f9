#include <cmath>

#include "doctest.h"
#include "flowkan/groupkan.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace flowkan;
using namespace flowkan::kan;

namespace {

double silu_ref(double x) { return x / (1.0 + std::exp(-x)); }

SplineFunction<double> make_function(const SplineGrid& g, std::vector<double> c, double base, double scale) {
  const std::size_t n = c.size();
  return {g, TD({n}, std::move(c), true), TD::scalar(base, true), TD::scalar(scale, true)};
}

KanLayer<double> identity_layer(const SplineGrid& g) {
  std::vector<double> xs, ys;
  for (int i = 0; i <= 200; ++i) {
    xs.push_back(-1.0 + 2.0 * i / 200.0);
    ys.push_back(xs.back());
  }
  auto c = fit_spline_coefficients(g, xs, ys);
  auto L = KanLayer<double>::zeros(1, 1, g);
  for (std::size_t j = 0; j < c.size(); ++j) L.coeffs.mutable_data()[j] = c[j];
  return L;
}

}  // namespace

TEST_CASE("grid layout") {
  SplineGrid g;
  CHECK(g.num_basis() == 8);
  auto t = g.knots();
  CHECK(t.size() == 12);
  CHECK(t[3] == doctest::Approx(-1.1));
  CHECK(t[8] == doctest::Approx(1.1));
  validate_grid(g);
  CHECK_THROWS(validate_grid(SplineGrid{5, 3, -1.0}));
  CHECK_THROWS(validate_grid(SplineGrid{0, 3, 1.0}));
  CHECK_THROWS(validate_grid(SplineGrid{5, kMaxSplineOrder + 1, 1.0}));
}

TEST_CASE("spline evaluation") {
  SplineGrid g;
  auto zero = make_function(g, std::vector<double>(8, 0.0), 0.0, 1.0);
  auto xs = TD({5}, {-3, -1, 0, 0.5, 4});
  {
    auto out_ = spline_eval(zero, xs);
    for (auto v : out_.data()) CHECK(v == 0.0);
  }

  // partition of unity inside the grid
  for (double x = -1.1; x < 1.1; x += 0.013) {
    auto b = bspline_basis(g, x);
    double s = 0;
    for (auto v : b) s += v;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-13));
  }

  std::vector<double> grid_pts, id;
  for (int i = 0; i <= 100; ++i) {
    grid_pts.push_back(-1.1 + 2.2 * i / 100.0);
    id.push_back(grid_pts.back());
  }
  auto c = fit_spline_coefficients(g, grid_pts, id);
  auto fid = make_function(g, c, 0.0, 1.0);
  double worst = 0;
  for (int i = 0; i <= 1000; ++i) {
    const double x = -1.1 + 2.2 * i / 1000.0;
    worst = std::max(worst, std::abs(spline_eval(fid, TD::scalar(x)).item() - x));
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("spline evaluation matches the Cox-de Boor recursion") {
  Rng rng(15);
  double worst = 0;
  for (int f = 0; f < 50; ++f) {
    SplineGrid g;
    std::vector<double> c(g.num_basis());
    for (auto& v : c) v = rng.normal();
    const double base = rng.normal(), scale = rng.normal();
    auto fn = make_function(g, c, base, scale);
    const auto t = g.knots();
    std::vector<double> xs(100);
    for (auto& x : xs) x = rng.uniform(-1.1, 1.1);
    auto out = spline_eval(fn, TD({100}, xs));
    std::vector<double> ref(100);
    for (std::size_t i = 0; i < 100; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < c.size(); ++j) s += c[j] * cox_de_boor(t, j, g.order, xs[i]);
      ref[i] = base * silu_ref(xs[i]) + scale * s;
    }
    worst = std::max(worst, max_rel_diff(out.data(), ref));
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("spline extrapolates linearly outside the grid") {
  SplineGrid g;
  Rng rng(16);
  std::vector<double> c(g.num_basis());
  for (auto& v : c) v = rng.normal();
  auto fn = make_function(g, c, 0.0, 1.0);
  auto at = [&](double x) { return spline_eval(fn, TD::scalar(x)).item(); };
  const double slope = (at(2.0) - at(1.5)) / 0.5;
  CHECK(at(3.0) == doctest::Approx(at(2.0) + slope).epsilon(1e-12));
  const double edge = at(1.1 - 1e-9);
  CHECK(at(1.1) == doctest::Approx(edge).epsilon(1e-7));
}

TEST_CASE("spline gradients") {
  SplineGrid g;
  Rng rng(17);
  std::vector<double> c(g.num_basis());
  for (auto& v : c) v = rng.normal();
  auto fn = make_function(g, c, 0.7, 1.3);
  auto x = TD({7}, {-1.5, -0.93, -0.2, 0.11, 0.6, 1.05, 1.7}, true);
  auto m = randn({7}, rng, 1.0, false);
  double err = gradcheck([&] { return sum(mul(spline_eval(fn, x), m)); },
                         {{"coeffs", fn.coeffs}, {"base", fn.base_scale}, {"scale", fn.spline_scale}, {"x", x}});
  CHECK(err < 1e-4);
}

TEST_CASE("kan layer") {
  SplineGrid g;
  auto id = identity_layer(g);
  auto xs = TD({4, 1}, {-0.9, -0.3, 0.2, 0.8});
  auto y = kan_layer_apply(id, xs);
  CHECK(max_abs_diff(y.data(), xs.data()) < 1e-6);

  auto zero = KanLayer<double>::zeros(3, 2, g);
  {
    auto out_ = kan_layer_apply(zero, TD::full({2, 3}, 0.4));
    for (auto v : out_.data()) CHECK(v == 0.0);
  }

  Rng rng(18);
  auto L = KanLayer<double>::init(3, 2, g, rng);
  for (auto& v : L.spline_scale.mutable_data()) v = rng.uniform(0.5, 1.5);
  auto x = uniform_tensor<double>({5, 3}, 1.05, rng, false);
  auto out = kan_layer_apply(L, x);
  const auto t = g.knots();
  for (std::size_t n = 0; n < 5; ++n)
    for (std::size_t q = 0; q < 2; ++q) {
      double s = 0;
      for (std::size_t p = 0; p < 3; ++p) {
        const double xi = x[n * 3 + p];
        double spline = 0;
        for (std::size_t j = 0; j < g.num_basis(); ++j)
          spline += L.coeffs[(p * g.num_basis() + j) * 2 + q] * cox_de_boor(t, j, 3, xi);
        s += L.base_w[p * 2 + q] * silu_ref(xi) + L.spline_scale[p * 2 + q] * spline;
      }
      CHECK(out[n * 2 + q] == doctest::Approx(s).epsilon(1e-12));
    }
  CHECK_THROWS_AS(kan_layer_apply(L, TD::zeros({2, 4})), ShapeError);
}

TEST_CASE("kan stack") {
  SplineGrid g;
  Rng rng(19);
  auto L = KanLayer<double>::init(3, 2, g, rng);
  auto x = randn({4, 3}, rng, 0.5);
  auto one = kan_stack<double>(x, {L});
  CHECK(max_abs_diff(one.data(), kan_layer_apply(L, x).data()) == 0.0);

  auto id = identity_layer(g);
  auto xi = TD({3, 1}, {-0.5, 0.1, 0.7});
  CHECK(max_abs_diff(kan_stack<double>(xi, {id, id}).data(), xi.data()) < 1e-5);

  auto L2 = KanLayer<double>::init(2, 4, g, rng);
  CHECK_THROWS_AS(kan_stack<double>(x, {L, L}), ShapeError);
  ParamList<double> ps{{"x", x}};
  L.collect(ps, "a.");
  L2.collect(ps, "b.");
  for (auto& np : ps)
    if (np.name.find("spline_scale") != std::string::npos)
      for (auto& v : np.tensor.mutable_data()) v = rng.uniform(0.5, 1.5);
  auto m = randn({4, 4}, rng, 1.0, false);
  CHECK(gradcheck([&] { return sum(mul(kan_stack<double>(x, {L, L2}), m)); }, ps) < 1e-4);
}

TEST_CASE("channel affinity gate") {
  Rng rng(20);
  const std::size_t C = 8;
  auto x = randn({2, 5, C}, rng, 1.0, false);
  auto W1 = randn({C, C / 4}, rng);
  auto half = cam_gate(x, W1, TD::zeros({C / 4, C}));
  for (auto v : half.data()) CHECK(v == 0.5);

  auto W2 = randn({C / 4, C}, rng);
  auto a = cam_gate(x, W1, W2);
  CHECK(a.shape() == Shape{2, 5, C});
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 1; t < 5; ++t)
      for (std::size_t c = 0; c < C; ++c) CHECK(a[(b * 5 + t) * C + c] == a[b * 5 * C + c]);
  for (auto v : a.data()) CHECK((v > 0.0 && v < 1.0));

  auto perm = select_axis1(x, {3, 0, 4, 1, 2});
  auto ap = cam_gate(perm, W1, W2);
  CHECK(max_abs_diff(ap.data(), a.data()) < 1e-15);
}

TEST_CASE("groupkan block") {
  SplineGrid g;
  Rng rng(21);
  auto p = GroupKanBlockParams<double>::init(32, 4, g, 1, 4, 0.0, rng);
  auto x = randn({2, 3, 32}, rng, 0.5, false);

  auto z = GroupKanBlockParams<double>::init(32, 4, g, 1, 4, 0.0, rng);
  for (auto& stack : z.kan)
    for (auto& L : stack) L = KanLayer<double>::zeros(8, 8, g);
  auto same = groupkan_block(x, z);
  CHECK(max_abs_diff(same.data(), x.data()) == 0.0);

  CHECK_THROWS(GroupKanBlockParams<double>::init(30, 4, g, 1, 2, 0.0, rng));

  // G = 1 is one ungrouped KAN over all channels
  auto p1 = GroupKanBlockParams<double>::init(8, 1, g, 1, 4, 0.0, rng);
  auto x8 = randn({1, 2, 8}, rng, 0.5, false);
  CHECK(max_abs_diff(grouped_kan(x8, p1).data(), kan_layer_apply(p1.kan[0][0], x8).data()) == 0.0);

  // group locality before gating
  auto y0 = grouped_kan(x, p);
  auto xp = x.clone();
  xp.mutable_data()[8 + 3] += 0.25;  // channel 11 -> group 1
  auto y1 = grouped_kan(xp, p);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t c = 0; c < 32; ++c) {
        const std::size_t i = (b * 3 + t) * 32 + c;
        if (i == 11) continue;
        if (c / 8 != 1 || b != 0 || t != 0) CHECK(y1[i] == y0[i]);
      }
  bool moved = false;
  for (std::size_t c = 8; c < 16; ++c) moved |= y1[c] != y0[c];
  CHECK(moved);

  // T = 1 per-step application equals full-sequence application
  auto x1 = randn({2, 1, 32}, rng, 0.5, false);
  auto full = groupkan_block(x1, p);
  for (std::size_t b = 0; b < 2; ++b) {
    auto xb = TD({1, 1, 32}, std::vector<double>(x1.data().begin() + b * 32, x1.data().begin() + (b + 1) * 32));
    auto yb = groupkan_block(xb, p);
    for (std::size_t c = 0; c < 32; ++c) CHECK(yb[c] == full[b * 32 + c]);
  }
}

TEST_CASE("group parameter count") {
  SplineGrid g;
  Rng rng(22);
  auto p4 = GroupKanBlockParams<double>::init(32, 4, g, 1, 4, 0.0, rng);
  auto p1 = GroupKanBlockParams<double>::init(32, 1, g, 1, 4, 0.0, rng);
  std::size_t kan4 = 0, kan1 = 0;
  for (auto& s : p4.kan) for (auto& L : s) kan4 += L.param_count();
  for (auto& s : p1.kan) for (auto& L : s) kan1 += L.param_count();
  CHECK(kan4 * 4 == kan1);
  CHECK(p4.spline_coefficient_count() * 4 == p1.spline_coefficient_count());
  ParamList<double> ps;
  p4.collect(ps, "0");
  CHECK(count_scalars(ps) == p4.param_count());
}

TEST_CASE("drop path") {
  Rng rng(23);
  auto x = randn({64, 2, 3}, rng, 1.0, false);
  CHECK(drop_path(x, 0.0, ForwardContext{true, &rng}).storage() == x.storage());
  CHECK(drop_path(x, 0.5, ForwardContext{false, nullptr}).storage() == x.storage());
  auto d = drop_path(x, 0.5, ForwardContext{true, &rng});
  std::size_t dropped = 0;
  for (std::size_t b = 0; b < 64; ++b) {
    const double r = d[b * 6] / x[b * 6];
    CHECK((r == 0.0 || r == doctest::Approx(2.0)));
    if (r == 0.0) ++dropped;
    for (std::size_t i = 1; i < 6; ++i) CHECK(d[b * 6 + i] == doctest::Approx(r * x[b * 6 + i]));
  }
  CHECK(dropped > 10);
  CHECK(dropped < 54);
}

TEST_CASE("groupkan block gradient") {
  SplineGrid g;
  Rng rng(24);
  auto p = GroupKanBlockParams<double>::init(8, 4, g, 1, 4, 0.0, rng);
  ParamList<double> ps;
  p.collect(ps, "0");
  for (auto& np : ps)
    for (auto& v : np.tensor.mutable_data()) v += 0.2 * rng.normal();
  auto x = randn({2, 3, 8}, rng, 0.6);
  ps.push_back({"x", x});
  auto m = randn({2, 3, 8}, rng, 1.0, false);
  CHECK(gradcheck([&] { return sum(mul(groupkan_block(x, p), m)); }, ps) < 1e-4);
}
