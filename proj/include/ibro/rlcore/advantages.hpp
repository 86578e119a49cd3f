#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "ibro/error.hpp"

namespace ibro::rlcore {

enum class AdvantageSource { gae_critic, group_normalized };

// Per-token advantages aligned with a response mask.
struct AdvantageField {
  std::vector<double> values;
  AdvantageSource source = AdvantageSource::group_normalized;
};

struct GaeResult {
  AdvantageField advantages;
  std::vector<double> returns;  // advantages + values
};

// Generalized advantage estimation over one response:
//   delta_t = r_t + gamma * v_{t+1} - v_t,  A_t = delta_t + gamma * lam * A_{t+1},
// with v and A taken as 0 past the last token.
inline GaeResult gae_advantages(std::span<const double> rewards, std::span<const double> values,
                                double gamma, double lam) {
  if (rewards.size() != values.size()) {
    throw InvalidInput("gae_advantages: " + std::to_string(rewards.size()) + " rewards vs " +
                       std::to_string(values.size()) + " values");
  }
  if (gamma < 0 || gamma > 1 || lam < 0 || lam > 1) {
    throw InvalidInput("gae_advantages: gamma and lam must lie in [0, 1]");
  }
  const std::size_t n = rewards.size();
  GaeResult out;
  out.advantages.source = AdvantageSource::gae_critic;
  out.advantages.values.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double next_adv = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    const double next_value = k + 1 < n ? values[k + 1] : 0.0;
    const double delta = rewards[k] + gamma * next_value - values[k];
    next_adv = delta + gamma * lam * next_adv;
    out.advantages.values[k] = next_adv;
    out.returns[k] = next_adv + values[k];
  }
  return out;
}

struct GroupAdvantages {
  std::vector<double> advantages;  // one per response
  bool zero_variance = false;      // all rewards equal; advantages are 0
};

// (R_i - mean(R)) / std(R) with the population standard deviation.
inline GroupAdvantages group_normalized_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) throw ContractError("group_normalized_advantages: need G >= 2");
  GroupAdvantages out;
  out.advantages.assign(rewards.size(), 0.0);
  bool all_equal = true;
  for (double r : rewards) all_equal = all_equal && r == rewards[0];
  if (all_equal) {
    out.zero_variance = true;
    return out;
  }
  const auto g = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= g;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double std = std::sqrt(var / g);
  for (std::size_t i = 0; i < rewards.size(); ++i) out.advantages[i] = (rewards[i] - mean) / std;
  return out;
}

inline bool has_zero_variance(std::span<const double> rewards) {
  for (double r : rewards) {
    if (r != rewards[0]) return false;
  }
  return true;
}

// Drops groups whose rewards are all identical. `Group` must expose
// `group_rewards`.
template <class Group>
std::vector<Group> filter_zero_variance_groups(std::vector<Group> groups, std::size_t* dropped = nullptr) {
  std::vector<Group> kept;
  std::size_t n_dropped = 0;
  for (auto& g : groups) {
    if (has_zero_variance(g.group_rewards)) {
      ++n_dropped;
    } else {
      kept.push_back(std::move(g));
    }
  }
  if (dropped) *dropped = n_dropped;
  return kept;
}

// Batch whitening over masked tokens: (A - mean) / (std + 1e-8).
inline void whiten(std::span<double> advantages) {
  if (advantages.empty()) return;
  double mean = 0.0;
  for (double a : advantages) mean += a;
  mean /= static_cast<double>(advantages.size());
  double var = 0.0;
  for (double a : advantages) var += (a - mean) * (a - mean);
  const double std = std::sqrt(var / static_cast<double>(advantages.size()));
  for (double& a : advantages) a = (a - mean) / (std + 1e-8);
}

}  // namespace ibro::rlcore
