#include <cmath>

#include "doctest.h"
#include "flowkan/optim.hpp"
#include "support.hpp"

using namespace flowkan;

TEST_CASE("elementwise values") {
  auto e = exp(TD({2}, {0, 0}));
  CHECK(e[0] == 1.0);
  CHECK(e[1] == 1.0);
  CHECK(sigmoid(TD({1}, {0}))[0] == 0.5);
  auto r = relu_squared(TD({2}, {-1, 2}));
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 4.0);
}

TEST_CASE("broadcast rules") {
  TD a({2, 3}, {1, 2, 3, 4, 5, 6});
  TD b({3}, {10, 20, 30});
  auto c = add(a, b);
  CHECK(c.shape() == Shape{2, 3});
  CHECK(c[4] == 25.0);
  auto d = mul(b, a);
  CHECK(d[5] == 180.0);
  TD bad({2}, {1, 2});
  try {
    add(a, bad);
    FAIL("expected ShapeError");
  } catch (const ShapeError& err) {
    const std::string msg = err.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[2]") != std::string::npos);
  }
}

TEST_CASE("matmul values and errors") {
  TD I({2, 2}, {1, 0, 0, 1});
  TD M({2, 2}, {3, 4, 5, 6});
  auto P = matmul(I, M);
  CHECK(std::vector<double>(P.data().begin(), P.data().end()) == std::vector<double>{3, 4, 5, 6});
  auto q = matmul(TD({1, 2}, {1, 2}), TD({2, 1}, {3, 4}));
  CHECK(q.item() == 11.0);
  CHECK_THROWS_AS(matmul(TD::zeros({2, 3}), TD::zeros({2, 3})), ShapeError);
}

TEST_CASE("matmul gradient") {
  Rng rng(1);
  auto A = randn({4, 5}, rng);
  auto B = randn({5, 3}, rng);
  auto W = randn({4, 3}, rng, 1.0, false);
  double err = gradcheck([&] { return sum(mul(matmul(A, B), W)); }, {{"A", A}, {"B", B}});
  CHECK(err < 1e-5);
}

TEST_CASE("layer norm") {
  TD g = TD::full({4}, 1.0), b = TD::zeros({4});
  auto y = layer_norm(TD({1, 4}, {5, 5, 5, 5}), g, b);
  for (auto v : y.data()) CHECK(v == 0.0);
  auto z = layer_norm(TD({1, 2}, {1, -1}), TD::full({2}, 1.0), TD::zeros({2}));
  CHECK(z[0] == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(z[1] == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK_THROWS_AS(layer_norm(TD::zeros({2, 3}), g, b), ShapeError);

  Rng rng(2);
  auto x = randn({3, 8}, rng);
  auto gain = randn({8}, rng);
  auto bias = randn({8}, rng);
  auto W = randn({3, 8}, rng, 1.0, false);
  double err = gradcheck([&] { return sum(mul(layer_norm(x, gain, bias), W)); },
                         {{"x", x}, {"gain", gain}, {"bias", bias}});
  CHECK(err < 1e-5);
}

TEST_CASE("backward contract") {
  TD x({3}, {1, 2, 3}, true);
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    auto loss = sum(square(x));
    tape.backward(loss);
  }
  CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{2, 4, 6});

  TD y({2}, {1, 2}, true);
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    auto loss = sum(mul(y, TD::zeros({2})));
    tape.backward(loss);
  }
  for (auto g : y.grad()) CHECK(g == 0.0);

  Tape<double> tape;
  TapeScope<double> scope(tape);
  TD z({2}, {1, 2}, true);
  auto vec = square(z);
  CHECK_THROWS_AS(tape.backward(vec), TapeError);
  TD off_tape = TD::scalar(1.0, true);
  CHECK_THROWS_AS(tape.backward(off_tape), TapeError);
}

TEST_CASE("tape is consumed and visits each node once in reverse order") {
  TD x({2}, {1, 2}, true);
  Tape<double> tape;
  TapeScope<double> scope(tape);
  auto a = exp(x);
  auto b = mul(a, a);
  auto loss = sum(b);
  CHECK(tape.size() == 3);
  for (std::size_t i = 0; i < tape.size(); ++i) {
    for (auto parent : tape.parents(i)) CHECK(parent < i);
  }
  CHECK(tape.backward(loss) == 3);
  CHECK(tape.size() == 0);
  CHECK(x.grad()[0] == doctest::Approx(2 * std::exp(2.0)));
}

TEST_CASE("detached tensors never receive gradient") {
  TD x({2}, {1, 2}, true);
  auto d = x.detach();
  d.set_requires_grad(false);
  Tape<double> tape;
  TapeScope<double> scope(tape);
  auto loss = sum(mul(x, d));
  tape.backward(loss);
  CHECK(!d.has_grad());
  CHECK(x.grad()[1] == 2.0);
}

TEST_CASE("no-grad guard suppresses recording") {
  TD x({2}, {1, 2}, true);
  Tape<double> tape;
  TapeScope<double> scope(tape);
  {
    NoGradGuard guard;
    auto y = exp(x);
    CHECK(!y.node_id().has_value());
  }
  CHECK(tape.size() == 0);
}

TEST_CASE("gradient linearity") {
  Rng rng(3);
  auto x = randn({5}, rng);
  auto grad_of = [&](auto f) {
    x.zero_grad();
    Tape<double> tape;
    TapeScope<double> scope(tape);
    auto loss = f();
    tape.backward(loss);
    return std::vector<double>(x.grad().begin(), x.grad().end());
  };
  auto f = [&] { return sum(sigmoid(x)); };
  auto g = [&] { return sum(square(exp(x))); };
  const double alpha = 0.7, beta = -1.3;
  auto gf = grad_of(f);
  auto gg = grad_of(g);
  auto gc = grad_of([&] { return add(scale(f(), alpha), scale(g(), beta)); });
  for (std::size_t i = 0; i < gc.size(); ++i) CHECK(gc[i] == doctest::Approx(alpha * gf[i] + beta * gg[i]).epsilon(1e-12));
}

TEST_CASE("primitive gradients on random instances") {
  Rng rng(4);
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    auto a = randn({2, 3, 4}, rng);
    auto b = randn({4}, rng);
    auto pos = TD::full({2, 3, 4}, 0.0, true);
    for (std::size_t i = 0; i < pos.numel(); ++i) pos.mutable_data()[i] = 0.5 + rng.uniform();
    auto W = randn({4, 3}, rng);
    auto m = randn({2, 3, 4}, rng, 1.0, false);
    auto loss = [&] {
      auto h = add(mul(sigmoid(a), b), silu(a));
      h = add(h, div(softplus(a), pos));
      h = add(h, log(pos));
      h = add(h, relu_squared(sub(a, b)));
      h = add(h, elementwise(UnaryKind::Sqrt, pos));
      h = add(h, neg(exp(scale(a, 0.3))));
      auto sh = shift_time(h);
      auto rv = reverse_time(sh);
      auto cat = concat_last<double>({rv, slice_last(h, 1, 2)});
      auto mm = matmul(slice_last(cat, 0, 4), W);
      auto pooled = add(expand_axis1(mean_axis1(mm), 3), expand_axis1(max_axis1(mm), 3));
      auto ln = layer_norm(add_scalar(h, 0.1), b, b);
      return add(sum(mul(ln, m)), add(sum(pooled), mean(clamp(h, -0.5, 0.5))));
    };
    worst = std::max(worst, gradcheck(loss, {{"a", a}, {"b", b}, {"pos", pos}, {"W", W}}));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("AdamW step") {
  TD p = TD::scalar(1.0, true);
  p.grad_accumulator()[0] = 1.0;
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.0;
  AdamW<double> opt({{"p", p}}, cfg);
  opt.step();
  CHECK(p.item() == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(opt.step_count() == 1);

  TD q({2}, {1, -2}, true);
  AdamW<double> still({{"q", q}}, AdamWConfig{.lr = 0.1, .weight_decay = 0.0});
  q.grad_accumulator();
  still.step();
  CHECK(q[0] == 1.0);
  CHECK(q[1] == -2.0);

  TD r = TD::scalar(1.0, true);
  AdamW<double> decay({{"r", r}}, AdamWConfig{.lr = 0.1, .weight_decay = 0.01});
  decay.step();
  CHECK(r.item() < 1.0);

  TD bad = TD::scalar(1.0, true);
  bad.grad_accumulator()[0] = std::nan("");
  AdamW<double> nan_opt({{"layer.weight", bad}}, cfg);
  try {
    nan_opt.step();
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("layer.weight") != std::string::npos);
  }
  CHECK_THROWS(AdamW<double>({{"p", p}}, AdamWConfig{.lr = 0.0}));
}

TEST_CASE("EMA update") {
  TD param = TD::scalar(1.0, true);
  ParamList<double> ps{{"p", param}};
  EmaState<double> ema(ParamList<double>{{"p", TD::scalar(0.0)}}, 0.95, true);
  ema.update(ps);
  CHECK(ema.shadows()[0].tensor.item() == doctest::Approx(0.05).epsilon(1e-12));
  for (int n = 2; n <= 20; ++n) {
    ema.update(ps);
    CHECK(1.0 - ema.shadows()[0].tensor.item() == doctest::Approx(std::pow(0.95, n)).epsilon(1e-9));
  }
  EmaState<double> zero(ParamList<double>{{"p", TD::scalar(0.0)}}, 0.0, true);
  zero.update(ps);
  CHECK(zero.shadows()[0].tensor.item() == 1.0);
  CHECK_THROWS(EmaState<double>(ps, 1.0));
  ParamList<double> wrong{{"p", TD::zeros({2})}};
  CHECK_THROWS_AS(ema.update(wrong), ShapeError);
}
