#pragma once

#include <string>

#include "flowkan/random.hpp"
#include "flowkan/tensor.hpp"

namespace flowkan::rwkv {

/// Parameters of one bidirectional RWKV block over C channels. Projections are
/// applied as x * W (row-vector convention).
template <class T>
struct RwkvBlockParams {
  std::size_t channels = 0;
  // time mixing
  Tensor<T> W_r, W_k, W_v, W_o;
  // channel mixing
  Tensor<T> Wc_r, Wc_k, Wc_v;
  /// Raw decay; the effective decay is softplus(decay_raw) >= 0.
  Tensor<T> decay_raw;
  /// Current-token bonus.
  Tensor<T> u;
  Tensor<T> ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  /// Token-shift interpolation, clamped to [0, 1] when applied.
  Tensor<T> shift_mix;

  /// Orthogonal projections scaled by 0.1, u = 0, softplus(decay_raw) = 1, shift_mix = 0.5.
  static RwkvBlockParams init(std::size_t channels, Rng& rng);

  void collect(ParamList<T>& out, const std::string& prefix) const;
};

struct RwkvOptions {
  /// Removes the double-counted current token from the two scans (off by default).
  bool bidir_dedup = false;
  double ln_eps = 1e-5;
};

/// x~_t = m * x_{t-1} + (1 - m) * x_t with x_{-1} = 0, m = clamp(shift_mix, 0, 1).
template <class T>
Tensor<T> token_shift(const Tensor<T>& x, const Tensor<T>& shift_mix);

/// Causal WKV aggregation over [B x T x C] with per-channel decay w >= 0 and
/// bonus u. Linear in T; exponents are rebased on a running maximum so large
/// keys do not overflow. Throws NumericError on a non-finite result.
template <class T>
Tensor<T> wkv_forward_scan(const Tensor<T>& k, const Tensor<T>& v, const Tensor<T>& w, const Tensor<T>& u);

/// Forward scan plus the time-reversed scan. With `dedup`, one copy of v is
/// subtracted so the current token is counted once in the limit of equal weights.
template <class T>
Tensor<T> wkv_bidirectional(const Tensor<T>& k, const Tensor<T>& v, const Tensor<T>& w, const Tensor<T>& u,
                            bool dedup = false);

template <class T>
Tensor<T> time_mix(const Tensor<T>& x, const RwkvBlockParams<T>& p, const RwkvOptions& opt = {});

template <class T>
Tensor<T> channel_mix(const Tensor<T>& x, const RwkvBlockParams<T>& p);

/// y = x + CM(LN2(x)); z = y + TM(LN1(y)).
template <class T>
Tensor<T> rwkv_block(const Tensor<T>& x, const RwkvBlockParams<T>& p, const RwkvOptions& opt = {});

/// Fault injection for self-checks: when set, the scan's key gradient is
/// negated. Never set outside the mutation test.
void set_wkv_backward_fault(bool enabled);
bool wkv_backward_fault();

/// Learnable scalars in one block.
inline std::size_t block_param_count(std::size_t channels) {
  return 7 * channels * channels + 7 * channels;
}

}  // namespace flowkan::rwkv
