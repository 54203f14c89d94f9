#include "flowkan/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "flowkan/random.hpp"

namespace flowkan {

GradCheckResult gradient_check(const std::function<Tensor<double>()>& loss_fn, const ParamList<double>& params,
                               const GradCheckOptions& opt) {
  ParamList<double> ps = params;
  zero_grads(ps);
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    auto loss = loss_fn();
    tape.backward(loss);
  }
  auto eval = [&] {
    NoGradGuard guard;
    return loss_fn().item();
  };

  GradCheckResult result;
  Rng rng(opt.seed);
  for (auto& p : ps) {
    auto data = p.tensor.mutable_data();
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (opt.max_entries_per_tensor > 0 && idx.size() > opt.max_entries_per_tensor) {
      std::shuffle(idx.begin(), idx.end(), rng.engine());
      idx.resize(opt.max_entries_per_tensor);
    }
    const auto g = p.tensor.grad();
    double diff2 = 0, ga2 = 0, gn2 = 0;
    for (auto i : idx) {
      const double orig = data[i];
      data[i] = orig + opt.step;
      const double fp = eval();
      data[i] = orig - opt.step;
      const double fm = eval();
      data[i] = orig;
      const double numeric = (fp - fm) / (2 * opt.step);
      const double analytic = g.empty() ? 0.0 : g[i];
      diff2 += (analytic - numeric) * (analytic - numeric);
      ga2 += analytic * analytic;
      gn2 += numeric * numeric;
    }
    result.entries_checked += idx.size();
    const double rel = std::sqrt(diff2) / std::max({std::sqrt(ga2), std::sqrt(gn2), opt.floor});
    if (rel > result.max_rel_error || result.worst.empty()) {
      if (rel >= result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst = p.name;
      }
    }
  }
  return result;
}

}  // namespace flowkan
