#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ibro/error.hpp"
#include "ibro/numerics/ops.hpp"
#include "ibro/numerics/tensor.hpp"

namespace ibro::rlcore {

// Asymmetric ratio clipping: r is clipped to [1 - eps_low, 1 + eps_high].
struct ClipConfig {
  double eps_low = 0.2;
  double eps_high = 0.28;

  void validate() const {
    if (!(eps_low > 0) || eps_low > eps_high || !(eps_high < 1)) {
      throw ConfigError("clip: need 0 < eps_low <= eps_high < 1");
    }
  }
};

enum class RegularizerKind { none, naive, ib, generalized_ib };

inline std::string to_string(RegularizerKind k) {
  switch (k) {
    case RegularizerKind::none: return "none";
    case RegularizerKind::naive: return "naive";
    case RegularizerKind::ib: return "ib";
    case RegularizerKind::generalized_ib: return "generalized_ib";
  }
  return "?";
}

inline RegularizerKind parse_regularizer_kind(const std::string& s) {
  if (s == "none") return RegularizerKind::none;
  if (s == "naive") return RegularizerKind::naive;
  if (s == "ib") return RegularizerKind::ib;
  if (s == "generalized_ib") return RegularizerKind::generalized_ib;
  throw ConfigError("unknown regularizer kind '" + s + "'");
}

// Entropy shaping. Per-token weights on H_t are
//   none: 0, naive: 1, ib: A_t, generalized_ib: A_t + eta,
// where A_t may first be clamped to [-1, 1].
struct RegularizerMode {
  RegularizerKind kind = RegularizerKind::none;
  double alpha = 0.0;
  double eta = 0.0;
  bool clip_advantage_to_unit = false;

  bool active() const { return kind != RegularizerKind::none && alpha != 0.0; }
};

struct LossReport {
  double pg_loss = 0.0;
  double entropy_reg_value = 0.0;
  double value_loss = 0.0;
  double total_loss = 0.0;
  double mean_token_entropy = 0.0;
  double clip_fraction = 0.0;
};

namespace detail {

inline void require_aligned(std::size_t n, std::size_t a, std::size_t b, const char* op) {
  if (a != n || b != n) {
    throw DimensionError(std::string(op) + ": inputs are not aligned (" + std::to_string(n) + ", " +
                         std::to_string(a) + ", " + std::to_string(b) + ")");
  }
}

inline std::size_t mask_count(std::span<const std::uint8_t> mask) {
  std::size_t c = 0;
  for (auto m : mask) c += m ? 1 : 0;
  return c;
}

}  // namespace detail

template <class T>
struct PgLoss {
  num::Tensor<T> loss;  // -token_mean(objective)
  double clip_fraction = 0.0;
};

// Clipped surrogate with token-mean aggregation over masked tokens:
//   objective_t = min(r_t A_t, clip(r_t, 1 - eps_low, 1 + eps_high) A_t),
//   r_t = exp(logp_new_t - logp_old_t).
// Where the clipped term is strictly smaller the token passes no gradient.
template <class T>
PgLoss<T> ppo_clip_loss(const num::Tensor<T>& logp_new, std::span<const double> logp_old,
                        std::span<const double> advantages, std::span<const std::uint8_t> mask,
                        const ClipConfig& clip) {
  const std::size_t n = logp_new.size();
  detail::require_aligned(n, logp_old.size(), advantages.size(), "ppo_clip_loss");
  if (mask.size() != n) throw DimensionError("ppo_clip_loss: mask length mismatch");
  const std::size_t count = detail::mask_count(mask);
  const double inv = count ? 1.0 / static_cast<double>(count) : 0.0;
  std::vector<double> dobj(n, 0.0);  // d objective / d logp_new
  double total = 0.0;
  std::size_t clipped = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const double r = std::exp(static_cast<double>(logp_new[i]) - logp_old[i]);
    const double a = advantages[i];
    const double unclipped = r * a;
    const double rc = std::clamp(r, 1.0 - clip.eps_low, 1.0 + clip.eps_high);
    const double clipped_term = rc * a;
    if (clipped_term < unclipped) {
      total += clipped_term;
      ++clipped;
    } else {
      total += unclipped;
      dobj[i] = unclipped;  // d(r A)/d logp = r A
    }
  }
  PgLoss<T> out;
  out.clip_fraction = count ? static_cast<double>(clipped) * inv : 0.0;
  out.loss = num::make_result<T>({1}, {static_cast<T>(-total * inv)}, {logp_new},
                                 [logp_new, dobj = std::move(dobj), inv](const T* g) {
                                   T* gl = logp_new.node()->grad.data();
                                   for (std::size_t i = 0; i < dobj.size(); ++i) {
                                     gl[i] += g[0] * static_cast<T>(-dobj[i] * inv);
                                   }
                                 });
  return out;
}

// Per-token weights applied to H_t for a regularizer mode.
inline std::vector<double> regularizer_weights(std::span<const double> advantages,
                                               const RegularizerMode& mode) {
  std::vector<double> w(advantages.size(), 0.0);
  for (std::size_t i = 0; i < w.size(); ++i) {
    double a = advantages[i];
    if (mode.clip_advantage_to_unit) a = std::clamp(a, -1.0, 1.0);
    switch (mode.kind) {
      case RegularizerKind::none: w[i] = 0.0; break;
      case RegularizerKind::naive: w[i] = 1.0; break;
      case RegularizerKind::ib: w[i] = a; break;
      case RegularizerKind::generalized_ib: w[i] = a + mode.eta; break;
    }
  }
  return w;
}

// J_reg = token_mean(w_t * H_t). Advantages enter only as constant weights,
// so no gradient reaches them.
template <class T>
num::Tensor<T> entropy_regularizer(const num::Tensor<T>& entropy, std::span<const double> advantages,
                                   std::span<const std::uint8_t> mask, const RegularizerMode& mode) {
  const std::size_t n = entropy.size();
  detail::require_aligned(n, advantages.size(), mask.size(), "entropy_regularizer");
  if (mode.kind == RegularizerKind::none) return num::Tensor<T>::scalar(T(0));
  const auto w = regularizer_weights(advantages, mode);
  const std::size_t count = detail::mask_count(mask);
  const T inv = count ? T(1) / static_cast<T>(count) : T(0);
  std::vector<T> wt(n, T(0));
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    wt[i] = static_cast<T>(w[i]);
    s += wt[i] * entropy[i];
  }
  return num::make_result<T>({1}, {s * inv}, {entropy}, [entropy, wt = std::move(wt), inv](const T* g) {
    T* ge = entropy.node()->grad.data();
    for (std::size_t i = 0; i < wt.size(); ++i) ge[i] += g[0] * wt[i] * inv;
  });
}

// total = pg_loss - alpha * J_reg: minimizing it maximizes J_RL + alpha J_reg.
template <class T>
num::Tensor<T> total_policy_loss(const num::Tensor<T>& pg_loss, const num::Tensor<T>& reg, double alpha) {
  if (alpha == 0.0 || !reg.defined()) return pg_loss;
  return num::sub(pg_loss, num::scale(reg, static_cast<T>(alpha)));
}

// Token-mean squared error against the returns. With a clip c the per-token
// loss is max((v - R)^2, (v_old + clamp(v - v_old, -c, c) - R)^2).
template <class T>
num::Tensor<T> value_loss(const num::Tensor<T>& values_new, std::span<const double> returns,
                          std::span<const double> values_old, std::span<const std::uint8_t> mask,
                          std::optional<double> value_clip = std::nullopt) {
  const std::size_t n = values_new.size();
  detail::require_aligned(n, returns.size(), values_old.size(), "value_loss");
  if (mask.size() != n) throw DimensionError("value_loss: mask length mismatch");
  const std::size_t count = detail::mask_count(mask);
  const double inv = count ? 1.0 / static_cast<double>(count) : 0.0;
  std::vector<double> dv(n, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const double v = static_cast<double>(values_new[i]);
    const double err = v - returns[i];
    double loss = err * err;
    double grad = 2.0 * err;
    if (value_clip) {
      const double delta = std::clamp(v - values_old[i], -*value_clip, *value_clip);
      const double err_c = values_old[i] + delta - returns[i];
      const double loss_c = err_c * err_c;
      if (loss_c > loss) {
        loss = loss_c;
        const bool inside = std::abs(v - values_old[i]) < *value_clip;
        grad = inside ? 2.0 * err_c : 0.0;
      }
    }
    total += loss;
    dv[i] = grad;
  }
  return num::make_result<T>({1}, {static_cast<T>(total * inv)}, {values_new},
                             [values_new, dv = std::move(dv), inv](const T* g) {
                               T* gv = values_new.node()->grad.data();
                               for (std::size_t i = 0; i < dv.size(); ++i) {
                                 gv[i] += g[0] * static_cast<T>(dv[i] * inv);
                               }
                             });
}

}  // namespace ibro::rlcore
