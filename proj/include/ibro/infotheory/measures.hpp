#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ibro/error.hpp"

namespace ibro::info {

inline constexpr double kNormTolerance = 1e-9;

// Shannon entropy in nats with 0 log 0 = 0.
inline double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double x : p) {
    if (x > 0.0) h -= x * std::log(x);
  }
  return h;
}

// Dense joint distribution p(x, y), row-major.
struct JointTable {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> p;

  JointTable() = default;
  JointTable(std::size_t r, std::size_t c) : rows(r), cols(c), p(r * c, 0.0) {}

  double& at(std::size_t i, std::size_t j) { return p[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return p[i * cols + j]; }

  std::vector<double> row_marginal() const {
    std::vector<double> m(rows, 0.0);
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) m[i] += at(i, j);
    }
    return m;
  }

  std::vector<double> col_marginal() const {
    std::vector<double> m(cols, 0.0);
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) m[j] += at(i, j);
    }
    return m;
  }

  double total() const {
    double s = 0.0;
    for (double x : p) s += x;
    return s;
  }

  void check_normalized(const char* what) const {
    if (p.size() != rows * cols) throw InvalidInput(std::string(what) + ": table size mismatch");
    for (double x : p) {
      if (!(x >= 0.0) || !std::isfinite(x)) throw InvalidInput(std::string(what) + ": negative or non-finite mass");
    }
    if (std::abs(total() - 1.0) > kNormTolerance) {
      throw InvalidInput(std::string(what) + ": joint sums to " + std::to_string(total()) + ", not 1");
    }
  }
};

// I(X;Y) = sum p(x,y) log(p(x,y) / (p(x) p(y))).
inline double mutual_information(const JointTable& joint) {
  joint.check_normalized("mutual_information");
  const auto px = joint.row_marginal();
  const auto py = joint.col_marginal();
  double mi = 0.0;
  for (std::size_t i = 0; i < joint.rows; ++i) {
    for (std::size_t j = 0; j < joint.cols; ++j) {
      const double pxy = joint.at(i, j);
      if (pxy > 0.0) mi += pxy * std::log(pxy / (px[i] * py[j]));
    }
  }
  return mi;
}

// H(Y|X) for a joint with X on rows.
inline double conditional_entropy_of_cols(const JointTable& joint) {
  double h = 0.0;
  const auto px = joint.row_marginal();
  for (std::size_t i = 0; i < joint.rows; ++i) {
    for (std::size_t j = 0; j < joint.cols; ++j) {
      const double pxy = joint.at(i, j);
      if (pxy > 0.0) h -= pxy * std::log(pxy / px[i]);
    }
  }
  return h;
}

}  // namespace ibro::info
