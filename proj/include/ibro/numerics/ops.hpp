#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ibro/numerics/tensor.hpp"

namespace ibro::num {

namespace detail {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ConstMap = Eigen::Map<const RowMatrix<T>>;
template <class T>
using MutMap = Eigen::Map<RowMatrix<T>>;

inline void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

template <class T>
void require_matrix(const Tensor<T>& t, const char* op) {
  require(t.defined() && t.shape().size() == 2,
          std::string(op) + ": expected a 2-d tensor, got " +
              (t.defined() ? shape_string(t.shape()) : std::string("undefined")));
}

template <class T>
void require_finite(std::span<const T> values, const char* op) {
  for (T v : values) {
    if (!std::isfinite(v)) {
      throw InvalidInput(std::string(op) + ": non-finite input");
    }
  }
}

template <class T>
T* grad_of(const Tensor<T>& t) {
  return t.requires_grad() ? t.node()->grad.data() : nullptr;
}

}  // namespace detail

// [M, K] x [K, N] -> [M, N]
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  using namespace detail;
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k, "matmul: inner dimensions differ: " + shape_string(a.shape()) +
                             " x " + shape_string(b.shape()));
  std::vector<T> out(m * n);
  MutMap<T>(out.data(), m, n).noalias() =
      ConstMap<T>(a.values().data(), m, k) * ConstMap<T>(b.values().data(), k, n);
  return make_result<T>({m, n}, std::move(out), {a, b}, [a, b, m, k, n](const T* g) {
    ConstMap<T> dc(g, m, n);
    if (T* ga = grad_of(a)) {
      MutMap<T>(ga, m, k).noalias() += dc * ConstMap<T>(b.values().data(), k, n).transpose();
    }
    if (T* gb = grad_of(b)) {
      MutMap<T>(gb, k, n).noalias() += ConstMap<T>(a.values().data(), m, k).transpose() * dc;
    }
  });
}

// x [M, K] * w [K, N] + bias [N] -> [M, N]
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  using namespace detail;
  require_matrix(x, "linear");
  require_matrix(w, "linear");
  const std::size_t m = x.dim(0), k = x.dim(1), n = w.dim(1);
  require(w.dim(0) == k, "linear: input width " + std::to_string(k) +
                             " does not match weight " + shape_string(w.shape()));
  require(bias.size() == n, "linear: bias size mismatch");
  std::vector<T> out(m * n);
  MutMap<T> y(out.data(), m, n);
  y.noalias() = ConstMap<T>(x.values().data(), m, k) * ConstMap<T>(w.values().data(), k, n);
  const T* bv = bias.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  }
  return make_result<T>({m, n}, std::move(out), {x, w, bias},
                        [x, w, bias, m, k, n](const T* g) {
                          ConstMap<T> dy(g, m, n);
                          if (T* gx = grad_of(x)) {
                            MutMap<T>(gx, m, k).noalias() +=
                                dy * ConstMap<T>(w.values().data(), k, n).transpose();
                          }
                          if (T* gw = grad_of(w)) {
                            MutMap<T>(gw, k, n).noalias() +=
                                ConstMap<T>(x.values().data(), m, k).transpose() * dy;
                          }
                          if (T* gb = grad_of(bias)) {
                            for (std::size_t i = 0; i < m; ++i) {
                              for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                            }
                          }
                        });
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(), "add: shape mismatch " + shape_string(a.shape()) +
                                              " vs " + shape_string(b.shape()));
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [a, b](const T* g) {
    const std::size_t n = a.size();
    if (T* ga = detail::grad_of(a)) {
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
    }
    if (T* gb = detail::grad_of(b)) {
      for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
    }
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(), "sub: shape mismatch");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [a, b](const T* g) {
    const std::size_t n = a.size();
    if (T* ga = detail::grad_of(a)) {
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
    }
    if (T* gb = detail::grad_of(b)) {
      for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i];
    }
  });
}

// Elementwise product.
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(), "mul: shape mismatch " + shape_string(a.shape()) +
                                              " vs " + shape_string(b.shape()));
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [a, b](const T* g) {
    const std::size_t n = a.size();
    if (T* ga = detail::grad_of(a)) {
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * b[i];
    }
    if (T* gb = detail::grad_of(b)) {
      for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * a[i];
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
  return make_result<T>(a.shape(), std::move(out), {a}, [a, s](const T* g) {
    T* ga = detail::grad_of(a);
    for (std::size_t i = 0; i < a.size(); ++i) ga[i] += g[i] * s;
  });
}

// Same values under a new shape of equal size.
template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  detail::require(shape_size(shape) == a.size(), "reshape: size mismatch");
  std::vector<T> out(a.values().begin(), a.values().end());
  return make_result<T>(std::move(shape), std::move(out), {a}, [a](const T* g) {
    T* ga = detail::grad_of(a);
    for (std::size_t i = 0; i < a.size(); ++i) ga[i] += g[i];
  });
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (T v : a.values()) s += v;
  return make_result<T>({1}, {s}, {a}, [a](const T* g) {
    T* ga = detail::grad_of(a);
    for (std::size_t i = 0; i < a.size(); ++i) ga[i] += g[0];
  });
}

// tanh approximation of GELU.
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  const T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  const T k = static_cast<T>(0.044715);
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x[i];
    out[i] = T(0.5) * v * (T(1) + std::tanh(c * (v + k * v * v * v)));
  }
  return make_result<T>(x.shape(), std::move(out), {x}, [x, c, k](const T* g) {
    T* gx = detail::grad_of(x);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const T v = x[i];
      const T u = c * (v + k * v * v * v);
      const T th = std::tanh(u);
      const T du = c * (T(1) + T(3) * k * v * v);
      gx[i] += g[i] * (T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * du);
    }
  });
}

// Row lookup: table [V, D], ids -> [n, D].
template <class T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int32_t> ids) {
  detail::require_matrix(table, "embedding");
  const std::size_t v = table.dim(0), d = table.dim(1);
  std::vector<std::int32_t> idx(ids.begin(), ids.end());
  std::vector<T> out(idx.size() * d);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || static_cast<std::size_t>(idx[r]) >= v) {
      throw VocabError("embedding: index " + std::to_string(idx[r]) + " outside table of " +
                       std::to_string(v) + " rows");
    }
    const T* src = table.values().data() + static_cast<std::size_t>(idx[r]) * d;
    std::copy(src, src + d, out.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  const std::size_t n = idx.size();
  return make_result<T>({n, d}, std::move(out), {table},
                        [table, idx = std::move(idx), d](const T* g) {
                          T* gt = detail::grad_of(table);
                          for (std::size_t r = 0; r < idx.size(); ++r) {
                            T* dst = gt + static_cast<std::size_t>(idx[r]) * d;
                            for (std::size_t j = 0; j < d; ++j) dst[j] += g[r * d + j];
                          }
                        });
}

// Selects rows of a [M, D] tensor.
template <class T>
Tensor<T> select_rows(const Tensor<T>& x, std::span<const std::size_t> rows) {
  detail::require_matrix(x, "select_rows");
  const std::size_t m = x.dim(0), d = x.dim(1);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<T> out(idx.size() * d);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    detail::require(idx[r] < m, "select_rows: row out of range");
    const T* src = x.values().data() + idx[r] * d;
    std::copy(src, src + d, out.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  const std::size_t n = idx.size();
  return make_result<T>({n, d}, std::move(out), {x}, [x, idx = std::move(idx), d](const T* g) {
    T* gx = detail::grad_of(x);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (std::size_t j = 0; j < d; ++j) gx[idx[r] * d + j] += g[r * d + j];
    }
  });
}

// Per-row element pick: x [M, V], index per row -> [M].
template <class T>
Tensor<T> gather(const Tensor<T>& x, std::span<const std::int32_t> index) {
  detail::require_matrix(x, "gather");
  const std::size_t m = x.dim(0), v = x.dim(1);
  detail::require(index.size() == m, "gather: need one index per row");
  std::vector<std::int32_t> idx(index.begin(), index.end());
  std::vector<T> out(m);
  for (std::size_t r = 0; r < m; ++r) {
    if (idx[r] < 0 || static_cast<std::size_t>(idx[r]) >= v) {
      throw VocabError("gather: index " + std::to_string(idx[r]) + " out of range");
    }
    out[r] = x[r * v + static_cast<std::size_t>(idx[r])];
  }
  return make_result<T>({m}, std::move(out), {x}, [x, idx = std::move(idx), v](const T* g) {
    T* gx = detail::grad_of(x);
    for (std::size_t r = 0; r < idx.size(); ++r) gx[r * v + static_cast<std::size_t>(idx[r])] += g[r];
  });
}

template <class T>
struct MaskedMean {
  Tensor<T> value;
  // Set when no position is selected; value is then 0.
  bool degenerate = false;
};

// Mean of x over positions where mask is nonzero; an empty mask yields 0.
template <class T>
MaskedMean<T> masked_mean(const Tensor<T>& x, std::span<const std::uint8_t> mask) {
  detail::require(mask.size() == x.size(), "masked_mean: mask length " +
                                               std::to_string(mask.size()) + " vs " +
                                               std::to_string(x.size()));
  std::size_t count = 0;
  T s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (mask[i]) {
      s += x[i];
      ++count;
    }
  }
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  const T inv = count ? T(1) / static_cast<T>(count) : T(0);
  auto value = make_result<T>({1}, {count ? s * inv : T(0)}, {x},
                              [x, m = std::move(m), inv](const T* g) {
                                T* gx = detail::grad_of(x);
                                for (std::size_t i = 0; i < m.size(); ++i) {
                                  if (m[i]) gx[i] += g[0] * inv;
                                }
                              });
  return {value, count == 0};
}

// Pre-normalization over the last dimension with learned gain and shift.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& shift,
                     T eps = static_cast<T>(1e-5)) {
  detail::require_matrix(x, "layer_norm");
  const std::size_t m = x.dim(0), d = x.dim(1);
  detail::require(gain.size() == d && shift.size() == d, "layer_norm: parameter size mismatch");
  std::vector<T> out(m * d), xhat(m * d), rstd(m);
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = x.values().data() + i * d;
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<T>(d);
    rstd[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (row[j] - mean) * rstd[i];
      out[i * d + j] = xhat[i * d + j] * gain[j] + shift[j];
    }
  }
  return make_result<T>(
      {m, d}, std::move(out), {x, gain, shift},
      [x, gain, shift, xhat = std::move(xhat), rstd = std::move(rstd), m, d](const T* g) {
        T* gx = detail::grad_of(x);
        T* gg = detail::grad_of(gain);
        T* gs = detail::grad_of(shift);
        for (std::size_t i = 0; i < m; ++i) {
          const T* dy = g + i * d;
          const T* xh = xhat.data() + i * d;
          if (gg) {
            for (std::size_t j = 0; j < d; ++j) gg[j] += dy[j] * xh[j];
          }
          if (gs) {
            for (std::size_t j = 0; j < d; ++j) gs[j] += dy[j];
          }
          if (gx) {
            T mean_dxhat = 0, mean_dxhat_xhat = 0;
            for (std::size_t j = 0; j < d; ++j) {
              const T dxh = dy[j] * gain[j];
              mean_dxhat += dxh;
              mean_dxhat_xhat += dxh * xh[j];
            }
            mean_dxhat /= static_cast<T>(d);
            mean_dxhat_xhat /= static_cast<T>(d);
            for (std::size_t j = 0; j < d; ++j) {
              const T dxh = dy[j] * gain[j];
              gx[i * d + j] += rstd[i] * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
            }
          }
        }
      });
}

// A contiguous run of rows forming one independent sequence.
struct Segment {
  std::size_t offset = 0;
  std::size_t length = 0;
};

// Multi-head causal self-attention over packed sequences.
//
// qkv is [M, 3D] holding query, key and value projections side by side.
// Attention never crosses segment boundaries; row i of a segment attends to
// rows 0..i of the same segment. Returns [M, D].
template <class T>
Tensor<T> causal_attention(const Tensor<T>& qkv, std::size_t n_heads,
                           std::span<const Segment> segments) {
  detail::require_matrix(qkv, "causal_attention");
  const std::size_t m = qkv.dim(0), w = qkv.dim(1);
  detail::require(w % 3 == 0, "causal_attention: width must be 3*D");
  const std::size_t d = w / 3;
  detail::require(n_heads > 0 && d % n_heads == 0, "causal_attention: heads must divide D");
  const std::size_t hd = d / n_heads;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(hd));
  std::vector<Segment> segs(segments.begin(), segments.end());
  std::size_t covered = 0;
  for (const auto& s : segs) {
    detail::require(s.offset == covered && s.length > 0, "causal_attention: segments must tile rows");
    covered += s.length;
  }
  detail::require(covered == m, "causal_attention: segments must cover every row");

  // Attention weights stored per (segment, head) as lower-triangular blocks.
  std::vector<std::size_t> prob_offset(segs.size());
  std::size_t total = 0;
  for (std::size_t s = 0; s < segs.size(); ++s) {
    prob_offset[s] = total;
    total += n_heads * segs[s].length * (segs[s].length + 1) / 2;
  }
  std::vector<T> probs(total);
  std::vector<T> out(m * d, T(0));
  const T* base = qkv.values().data();
  std::vector<T> scores;
  for (std::size_t s = 0; s < segs.size(); ++s) {
    const std::size_t off = segs[s].offset, len = segs[s].length;
    T* p = probs.data() + prob_offset[s];
    for (std::size_t h = 0; h < n_heads; ++h) {
      for (std::size_t i = 0; i < len; ++i) {
        const T* q = base + (off + i) * w + h * hd;
        scores.assign(i + 1, T(0));
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j <= i; ++j) {
          const T* k = base + (off + j) * w + d + h * hd;
          T dot = 0;
          for (std::size_t c = 0; c < hd; ++c) dot += q[c] * k[c];
          scores[j] = dot * inv_sqrt;
          mx = std::max(mx, scores[j]);
        }
        T z = 0;
        for (std::size_t j = 0; j <= i; ++j) {
          scores[j] = std::exp(scores[j] - mx);
          z += scores[j];
        }
        T* o = out.data() + (off + i) * d + h * hd;
        for (std::size_t j = 0; j <= i; ++j) {
          const T pj = scores[j] / z;
          *p++ = pj;
          const T* v = base + (off + j) * w + 2 * d + h * hd;
          for (std::size_t c = 0; c < hd; ++c) o[c] += pj * v[c];
        }
      }
    }
  }
  return make_result<T>(
      {m, d}, std::move(out), {qkv},
      [qkv, segs = std::move(segs), prob_offset = std::move(prob_offset),
       probs = std::move(probs), n_heads, d, hd, w, inv_sqrt](const T* g) {
        T* gq = detail::grad_of(qkv);
        const T* base = qkv.values().data();
        std::vector<T> dp;
        for (std::size_t s = 0; s < segs.size(); ++s) {
          const std::size_t off = segs[s].offset, len = segs[s].length;
          const T* p = probs.data() + prob_offset[s];
          for (std::size_t h = 0; h < n_heads; ++h) {
            for (std::size_t i = 0; i < len; ++i) {
              const T* dout = g + (off + i) * d + h * hd;
              dp.assign(i + 1, T(0));
              T dot_pdp = 0;
              for (std::size_t j = 0; j <= i; ++j) {
                const T* v = base + (off + j) * w + 2 * d + h * hd;
                T* dv = gq + (off + j) * w + 2 * d + h * hd;
                T acc = 0;
                for (std::size_t c = 0; c < hd; ++c) {
                  acc += dout[c] * v[c];
                  dv[c] += p[j] * dout[c];
                }
                dp[j] = acc;
                dot_pdp += p[j] * acc;
              }
              const T* q = base + (off + i) * w + h * hd;
              T* dq = gq + (off + i) * w + h * hd;
              for (std::size_t j = 0; j <= i; ++j) {
                const T ds = p[j] * (dp[j] - dot_pdp) * inv_sqrt;
                const T* k = base + (off + j) * w + d + h * hd;
                T* dk = gq + (off + j) * w + d + h * hd;
                for (std::size_t c = 0; c < hd; ++c) {
                  dq[c] += ds * k[c];
                  dk[c] += ds * q[c];
                }
              }
              p += i + 1;
            }
          }
        }
      });
}

// Row-wise log-softmax over the last dimension, stabilized by the row max.
template <class T>
Tensor<T> log_softmax(const Tensor<T>& logits) {
  const std::size_t v = logits.cols();
  detail::require(v >= 1, "log_softmax: empty last dimension");
  detail::require_finite(logits.values(), "log_softmax");
  const std::size_t m = logits.rows();
  std::vector<T> out(logits.size());
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = logits.values().data() + i * v;
    T mx = row[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    T z = 0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
    const T lse = mx + std::log(z);
    for (std::size_t j = 0; j < v; ++j) out[i * v + j] = row[j] - lse;
  }
  std::vector<T> saved = out;
  return make_result<T>(logits.shape(), std::move(out), {logits},
                        [logits, saved = std::move(saved), m, v](const T* g) {
                          T* gl = detail::grad_of(logits);
                          for (std::size_t i = 0; i < m; ++i) {
                            T gs = 0;
                            for (std::size_t j = 0; j < v; ++j) gs += g[i * v + j];
                            for (std::size_t j = 0; j < v; ++j) {
                              gl[i * v + j] += g[i * v + j] - std::exp(saved[i * v + j]) * gs;
                            }
                          }
                        });
}

// Per-row Shannon entropy (nats) of softmax(logits): [*, V] -> [*].
template <class T>
Tensor<T> entropy_from_logits(const Tensor<T>& logits) {
  const std::size_t v = logits.cols();
  detail::require(v >= 1, "entropy_from_logits: empty last dimension");
  detail::require_finite(logits.values(), "entropy_from_logits");
  const std::size_t m = logits.rows();
  std::vector<T> out(m), logp(logits.size());
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = logits.values().data() + i * v;
    T mx = row[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    T z = 0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
    const T lse = mx + std::log(z);
    T h = 0;
    for (std::size_t j = 0; j < v; ++j) {
      const T lp = row[j] - lse;
      logp[i * v + j] = lp;
      h -= std::exp(lp) * lp;
    }
    out[i] = std::max(h, T(0));
  }
  Shape shape = logits.shape();
  shape.pop_back();
  if (shape.empty()) shape.push_back(1);
  std::vector<T> h_saved = out;
  return make_result<T>(std::move(shape), std::move(out), {logits},
                        [logits, logp = std::move(logp), h_saved = std::move(h_saved), m,
                         v](const T* g) {
                          T* gl = detail::grad_of(logits);
                          for (std::size_t i = 0; i < m; ++i) {
                            for (std::size_t j = 0; j < v; ++j) {
                              const T lp = logp[i * v + j];
                              gl[i * v + j] -= g[i] * std::exp(lp) * (lp + h_saved[i]);
                            }
                          }
                        });
}

}  // namespace ibro::num
