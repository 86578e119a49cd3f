#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "ibro/error.hpp"
#include "ibro/random.hpp"
#include "ibro/types.hpp"

namespace ibro::model {

// Below this temperature sampling degenerates to argmax.
inline constexpr double kGreedyTemperature = 1e-6;

struct SamplingConfig {
  double temperature = 1.0;
  double top_p = 1.0;
  int max_new_tokens = 16;

  bool greedy() const { return temperature < kGreedyTemperature; }
};

// The distribution sample_token draws from: softmax(logits / temperature),
// restricted to the nucleus and renormalized. The nucleus is the smallest
// prefix of tokens sorted by probability (descending, ties by ascending id)
// whose cumulative mass reaches top_p. Greedy temperatures give a one-hot
// vector at the lowest-id argmax.
template <class T>
std::vector<double> sampling_distribution(std::span<const T> logits, double temperature,
                                          double top_p) {
  if (!(temperature > 0)) throw SamplingError("sampling: temperature must be positive");
  if (!(top_p > 0) || top_p > 1) throw SamplingError("sampling: top_p must lie in (0, 1]");
  const std::size_t v = logits.size();
  if (v == 0) throw SamplingError("sampling: empty logits");
  double mx = -std::numeric_limits<double>::infinity();
  std::size_t arg = 0;
  for (std::size_t i = 0; i < v; ++i) {
    const double x = static_cast<double>(logits[i]);
    if (std::isnan(x) || x == std::numeric_limits<double>::infinity()) {
      throw InvalidInput("sampling: logits contain NaN or +inf");
    }
    if (x > mx) {
      mx = x;
      arg = i;
    }
  }
  if (mx == -std::numeric_limits<double>::infinity()) {
    throw SamplingError("sampling: every logit is -inf");
  }
  std::vector<double> p(v, 0.0);
  if (temperature < kGreedyTemperature) {
    p[arg] = 1.0;
    return p;
  }
  double z = 0.0;
  for (std::size_t i = 0; i < v; ++i) {
    p[i] = std::exp((static_cast<double>(logits[i]) - mx) / temperature);
    z += p[i];
  }
  for (auto& x : p) x /= z;
  if (top_p >= 1.0) return p;

  std::vector<std::size_t> order(v);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&p](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  double cum = 0.0;
  std::size_t keep = 0;
  while (keep < v) {
    cum += p[order[keep++]];
    if (cum >= top_p - 1e-12) break;
  }
  std::vector<double> q(v, 0.0);
  double kept_mass = 0.0;
  for (std::size_t i = 0; i < keep; ++i) kept_mass += p[order[i]];
  for (std::size_t i = 0; i < keep; ++i) q[order[i]] = p[order[i]] / kept_mass;
  return q;
}

// Inverse-CDF draw over token ids in ascending order.
inline TokenId draw(std::span<const double> probs, Rng& rng) {
  const double u = uniform01(rng);
  double cum = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    cum += probs[i];
    last = i;
    if (u < cum) return static_cast<TokenId>(i);
  }
  return static_cast<TokenId>(last);
}

template <class T>
TokenId sample_token(std::span<const T> logits, double temperature, double top_p, Rng& rng) {
  const auto probs = sampling_distribution(logits, temperature, top_p);
  if (temperature < kGreedyTemperature) {
    return static_cast<TokenId>(std::max_element(probs.begin(), probs.end()) - probs.begin());
  }
  return draw(probs, rng);
}

}  // namespace ibro::model
