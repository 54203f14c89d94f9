#include "flowkan/rwkv.hpp"

#include <atomic>
#include <cmath>
#include <limits>

#include "flowkan/ops.hpp"

namespace flowkan::rwkv {

namespace {
std::atomic<bool> g_backward_fault{false};
}

void set_wkv_backward_fault(bool enabled) { g_backward_fault = enabled; }
bool wkv_backward_fault() { return g_backward_fault; }

template <class T>
RwkvBlockParams<T> RwkvBlockParams<T>::init(std::size_t channels, Rng& rng) {
  RwkvBlockParams p;
  p.channels = channels;
  const std::size_t C = channels;
  for (Tensor<T>* W : {&p.W_r, &p.W_k, &p.W_v, &p.W_o, &p.Wc_r, &p.Wc_k, &p.Wc_v}) {
    *W = orthogonal_tensor<T>(C, 0.1, rng);
  }
  // softplus(log(e - 1)) = 1
  p.decay_raw = Tensor<T>::full({C}, T(std::log(std::exp(1.0) - 1.0)), true);
  p.u = Tensor<T>::zeros({C}, true);
  p.ln1_gain = Tensor<T>::full({C}, T(1), true);
  p.ln1_bias = Tensor<T>::zeros({C}, true);
  p.ln2_gain = Tensor<T>::full({C}, T(1), true);
  p.ln2_bias = Tensor<T>::zeros({C}, true);
  p.shift_mix = Tensor<T>::full({C}, T(0.5), true);
  return p;
}

template <class T>
void RwkvBlockParams<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  out.push_back({prefix + "W_r", W_r});
  out.push_back({prefix + "W_k", W_k});
  out.push_back({prefix + "W_v", W_v});
  out.push_back({prefix + "W_o", W_o});
  out.push_back({prefix + "Wc_r", Wc_r});
  out.push_back({prefix + "Wc_k", Wc_k});
  out.push_back({prefix + "Wc_v", Wc_v});
  out.push_back({prefix + "w", decay_raw});
  out.push_back({prefix + "u", u});
  out.push_back({prefix + "ln1.gain", ln1_gain});
  out.push_back({prefix + "ln1.bias", ln1_bias});
  out.push_back({prefix + "ln2.gain", ln2_gain});
  out.push_back({prefix + "ln2.bias", ln2_bias});
  out.push_back({prefix + "shift_mix", shift_mix});
}

template <class T>
Tensor<T> token_shift(const Tensor<T>& x, const Tensor<T>& shift_mix) {
  auto m = clamp(shift_mix, T(0), T(1));
  return add(x, mul(sub(shift_time(x), x), m));
}

template <class T>
Tensor<T> wkv_forward_scan(const Tensor<T>& k, const Tensor<T>& v, const Tensor<T>& w, const Tensor<T>& u) {
  if (k.rank() != 3 || k.shape() != v.shape()) {
    throw ShapeError("wkv: k " + shape_str(k.shape()) + " and v " + shape_str(v.shape()) +
                     " must both be [B x T x C]");
  }
  const std::size_t B = k.dim(0), L = k.dim(1), C = k.dim(2);
  if (w.numel() != C || u.numel() != C) {
    throw ShapeError("wkv: decay " + shape_str(w.shape()) + " / bonus " + shape_str(u.shape()) +
                     " must have " + std::to_string(C) + " entries");
  }
  for (auto wc : w.data()) {
    if (!(wc >= T(0))) throw std::invalid_argument("wkv: decay must be non-negative");
  }
  const T neg_inf = -std::numeric_limits<T>::infinity();
  const std::size_t n = B * L * C;
  // Per-position state before the token is absorbed, kept for the reverse pass.
  struct Saved {
    std::vector<T> hist_a, hist_b, hist_p, out_q, out_d, y;
  };
  auto s = std::make_shared<Saved>();
  s->hist_a.resize(n);
  s->hist_b.resize(n);
  s->hist_p.resize(n);
  s->out_q.resize(n);
  s->out_d.resize(n);
  std::vector<T> y(n);
  const auto kv = k.data();
  const auto vv = v.data();
  const auto wv = w.data();
  const auto uv = u.data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      T a_hat = 0, b_hat = 0, p = neg_inf;
      const T wc = wv[c], uc = uv[c];
      for (std::size_t t = 0; t < L; ++t) {
        const std::size_t i = (b * L + t) * C + c;
        s->hist_a[i] = a_hat;
        s->hist_b[i] = b_hat;
        s->hist_p[i] = p;
        const T e_cur = uc + kv[i];
        const T q = std::max(p, e_cur);
        const T wa = std::exp(p - q);
        const T wb = std::exp(e_cur - q);
        const T den = b_hat * wa + wb;
        y[i] = (a_hat * wa + wb * vv[i]) / den;
        s->out_q[i] = q;
        s->out_d[i] = den;
        const T p_next = std::max(p - wc, kv[i]);
        const T decay = std::exp(p - wc - p_next);
        const T fresh = std::exp(kv[i] - p_next);
        a_hat = a_hat * decay + fresh * vv[i];
        b_hat = b_hat * decay + fresh;
        p = p_next;
      }
    }
  }
  for (auto val : y) {
    if (!std::isfinite(val)) throw NumericError("wkv: non-finite output (overflow in scan)");
  }
  s->y = y;
  return make_result<T>(k.shape(), std::move(y), {k, v, w, u}, [k, v, w, u, s, B, L, C](std::span<const T> gy) mutable {
    const T neg_inf = -std::numeric_limits<T>::infinity();
    const auto kv = k.data();
    const auto vv = v.data();
    const auto wv = w.data();
    const auto uv = u.data();
    std::vector<T> gk(B * L * C, T(0)), gv(B * L * C, T(0)), gw(C, T(0)), gu(C, T(0));
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t c = 0; c < C; ++c) {
        const T wc = wv[c], uc = uv[c];
        // G, H: adjoints of the history numerator / denominator, stored as
        // mantissa * exp(r).
        T g_hat = 0, h_hat = 0, r = neg_inf;
        for (std::size_t t = L; t-- > 0;) {
          const std::size_t i = (b * L + t) * C + c;
          const T ek = std::exp(r + kv[i]);
          gv[i] += g_hat * ek;
          gk[i] += ek * (g_hat * vv[i] + h_hat);
          gw[c] -= std::exp(r + s->hist_p[i] - wc) * (g_hat * s->hist_a[i] + h_hat * s->hist_b[i]);

          const T direct = std::exp(uc + kv[i] - s->out_q[i]) / s->out_d[i];
          gv[i] += gy[i] * direct;
          const T dk = gy[i] * direct * (vv[i] - s->y[i]);
          gk[i] += dk;
          gu[c] += dk;

          const T cg = gy[i] / s->out_d[i];
          const T ch = -gy[i] * s->y[i] / s->out_d[i];
          const T r_next = std::max(-s->out_q[i], r - wc);
          const T fresh = std::exp(-s->out_q[i] - r_next);
          const T carry = std::exp(r - wc - r_next);
          g_hat = cg * fresh + g_hat * carry;
          h_hat = ch * fresh + h_hat * carry;
          r = r_next;
        }
      }
    }
    auto acc = [](const Tensor<T>& t, const std::vector<T>& g) {
      if (!t.requires_grad()) return;
      auto dst = t.grad_accumulator();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
    };
    if (g_backward_fault) {
      for (auto& g : gk) g = -g;
    }
    acc(k, gk);
    acc(v, gv);
    acc(w, gw);
    acc(u, gu);
  });
}

template <class T>
Tensor<T> wkv_bidirectional(const Tensor<T>& k, const Tensor<T>& v, const Tensor<T>& w, const Tensor<T>& u,
                            bool dedup) {
  auto fwd = wkv_forward_scan(k, v, w, u);
  auto bwd = reverse_time(wkv_forward_scan(reverse_time(k), reverse_time(v), w, u));
  auto out = add(fwd, bwd);
  if (dedup) out = sub(out, v);
  return out;
}

template <class T>
Tensor<T> time_mix(const Tensor<T>& x, const RwkvBlockParams<T>& p, const RwkvOptions& opt) {
  auto xs = token_shift(x, p.shift_mix);
  auto r = matmul(xs, p.W_r);
  auto k = matmul(xs, p.W_k);
  auto v = matmul(xs, p.W_v);
  auto agg = wkv_bidirectional(k, v, softplus(p.decay_raw), p.u, opt.bidir_dedup);
  return matmul(mul(sigmoid(r), agg), p.W_o);
}

template <class T>
Tensor<T> channel_mix(const Tensor<T>& x, const RwkvBlockParams<T>& p) {
  auto r = matmul(x, p.Wc_r);
  auto k = matmul(x, p.Wc_k);
  return mul(sigmoid(r), matmul(relu_squared(k), p.Wc_v));
}

template <class T>
Tensor<T> rwkv_block(const Tensor<T>& x, const RwkvBlockParams<T>& p, const RwkvOptions& opt) {
  if (x.rank() != 3 || x.dim(2) != p.channels) {
    throw ShapeError("rwkv_block: input " + shape_str(x.shape()) + " vs " + std::to_string(p.channels) +
                     " channels");
  }
  auto y = add(x, channel_mix(layer_norm(x, p.ln2_gain, p.ln2_bias, opt.ln_eps), p));
  return add(y, time_mix(layer_norm(y, p.ln1_gain, p.ln1_bias, opt.ln_eps), p, opt));
}

#define FLOWKAN_RWKV(T)                                                                                    \
  template struct RwkvBlockParams<T>;                                                                      \
  template Tensor<T> token_shift<T>(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> wkv_forward_scan<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,             \
                                         const Tensor<T>&);                                                \
  template Tensor<T> wkv_bidirectional<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,            \
                                          const Tensor<T>&, bool);                                         \
  template Tensor<T> time_mix<T>(const Tensor<T>&, const RwkvBlockParams<T>&, const RwkvOptions&);         \
  template Tensor<T> channel_mix<T>(const Tensor<T>&, const RwkvBlockParams<T>&);                          \
  template Tensor<T> rwkv_block<T>(const Tensor<T>&, const RwkvBlockParams<T>&, const RwkvOptions&);

FLOWKAN_RWKV(float)
FLOWKAN_RWKV(double)

}  // namespace flowkan::rwkv
