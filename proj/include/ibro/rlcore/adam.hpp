#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "ibro/numerics/tensor.hpp"

namespace ibro::rlcore {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int warmup_steps = 0;  // linear ramp of the learning rate
  double grad_clip = 0.0;  // global norm clip when > 0
};

// Adam over parameter groups with per-group learning rates. Each group
// counts its own steps, so a group that is skipped keeps its moments and
// warmup position untouched.
template <class T>
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  // Returns the group index.
  std::size_t add_group(std::vector<num::Tensor<T>> params, double lr) {
    Group g;
    g.lr = lr;
    for (auto& p : params) {
      g.m.emplace_back(p.size(), 0.0);
      g.v.emplace_back(p.size(), 0.0);
    }
    g.params = std::move(params);
    groups_.push_back(std::move(g));
    return groups_.size() - 1;
  }

  void zero_grad() {
    for (auto& g : groups_) {
      for (auto& p : g.params) p.zero_grad();
    }
  }

  // Global L2 norm of the gradients of the given groups.
  double grad_norm(const std::vector<std::size_t>& which) const {
    double s = 0.0;
    for (std::size_t gi : which) {
      for (const auto& p : groups_[gi].params) {
        for (T x : p.grad()) s += static_cast<double>(x) * static_cast<double>(x);
      }
    }
    return std::sqrt(s);
  }

  // Applies one update to the listed groups.
  void step(const std::vector<std::size_t>& which) {
    double scale = 1.0;
    if (config_.grad_clip > 0) {
      const double norm = grad_norm(which);
      if (norm > config_.grad_clip) scale = config_.grad_clip / norm;
    }
    for (std::size_t gi : which) {
      auto& g = groups_[gi];
      ++g.t;
      const double warm = config_.warmup_steps > 0
                              ? std::min(1.0, static_cast<double>(g.t) / config_.warmup_steps)
                              : 1.0;
      const double lr = g.lr * warm;
      const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(g.t));
      const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(g.t));
      for (std::size_t k = 0; k < g.params.size(); ++k) {
        auto& p = g.params[k];
        if (!p.has_grad()) continue;
        auto values = p.mutable_values();
        const auto grad = p.grad();
        auto& m = g.m[k];
        auto& v = g.v[k];
        for (std::size_t i = 0; i < values.size(); ++i) {
          const double gr = static_cast<double>(grad[i]) * scale;
          m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * gr;
          v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * gr * gr;
          const double update = lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + config_.eps);
          values[i] = static_cast<T>(static_cast<double>(values[i]) - update);
        }
      }
    }
  }

  std::size_t group_count() const { return groups_.size(); }
  long steps_taken(std::size_t group) const { return groups_[group].t; }

 private:
  struct Group {
    std::vector<num::Tensor<T>> params;
    std::vector<std::vector<double>> m, v;
    double lr = 0.0;
    long t = 0;
  };

  AdamConfig config_;
  std::vector<Group> groups_;
};

}  // namespace ibro::rlcore
