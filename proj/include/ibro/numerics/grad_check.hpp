#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "ibro/numerics/tensor.hpp"

namespace ibro::num {

struct GradReport {
  double max_relative_error = 0.0;
  // Flat index over the concatenation of all checked parameters.
  std::size_t worst_parameter_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates_checked = 0;
};

// |a - n| / max(|a|, |n|, 1e-8), with 0 when both magnitudes are below 1e-8.
inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  if (std::abs(analytic) < 1e-8 && std::abs(numeric) < 1e-8) return 0.0;
  return std::abs(analytic - numeric) / scale;
}

// Compares reverse-mode gradients of a scalar function against central
// differences (f(x+eps) - f(x-eps)) / (2 eps).
//
// `f` must rebuild its graph from `params` on every call. When
// `max_coordinates` is nonzero, a seeded sample of that many coordinates is
// checked instead of all of them.
template <class T>
GradReport grad_check(const std::function<Tensor<T>()>& f, std::span<Tensor<T>> params,
                      double eps, std::size_t max_coordinates = 0, std::uint64_t seed = 0) {
  if (!(eps > 0)) throw ContractError("grad_check: epsilon must be positive");
  for (auto& p : params) {
    if (!p.requires_grad()) throw ContractError("grad_check: parameter without requires_grad");
    p.zero_grad();
  }
  const Tensor<T> out = f();
  const T base = out.item();
  if (f().item() != base || f().item() != base) {
    throw ContractError("grad_check: function is not deterministic");
  }
  out.backward();

  std::vector<std::pair<std::size_t, std::size_t>> coords;  // (param, element)
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) coords.emplace_back(p, i);
  }
  if (max_coordinates != 0 && coords.size() > max_coordinates) {
    std::mt19937_64 rng(seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(max_coordinates);
    std::sort(coords.begin(), coords.end());
  }
  std::vector<std::size_t> flat_offset(params.size(), 0);
  for (std::size_t p = 1; p < params.size(); ++p) {
    flat_offset[p] = flat_offset[p - 1] + params[p - 1].size();
  }

  GradReport report;
  for (const auto& [p, i] : coords) {
    auto values = params[p].mutable_values();
    const T saved = values[i];
    values[i] = saved + static_cast<T>(eps);
    const double up = static_cast<double>(f().item());
    values[i] = saved - static_cast<T>(eps);
    const double down = static_cast<double>(f().item());
    values[i] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double analytic = static_cast<double>(params[p].grad()[i]);
    const double err = relative_error(analytic, numeric);
    ++report.coordinates_checked;
    if (err > report.max_relative_error || report.coordinates_checked == 1) {
      report.max_relative_error = err;
      report.worst_parameter_index = flat_offset[p] + i;
      report.analytic = analytic;
      report.numeric = numeric;
    }
  }
  return report;
}

}  // namespace ibro::num
