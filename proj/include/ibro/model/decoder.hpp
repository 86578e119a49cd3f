#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ibro/error.hpp"
#include "ibro/model/transformer.hpp"
#include "ibro/numerics/ops.hpp"

namespace ibro::model {

// Inference-only forward with a key/value cache per sequence. Feeding a
// sequence's tokens in pieces gives the same logits as one full forward up to
// floating-point reassociation. No autograd graph is built.
template <class T>
class IncrementalDecoder {
 public:
  IncrementalDecoder(const PolicyParams<T>& params, std::size_t n_sequences)
      : params_(params), d_(static_cast<std::size_t>(params.config.d_model)), lengths_(n_sequences, 0) {
    cache_.resize(n_sequences);
    for (auto& c : cache_) c.resize(params.blocks.size());
  }

  std::size_t length(std::size_t seq) const { return lengths_[seq]; }

  // Appends tokens[i] to sequence seqs[i] and returns the logits after the
  // last appended token of each, as rows of a [seqs.size(), V] buffer.
  std::vector<T> feed(std::span<const std::size_t> seqs, std::span<const TokenSeq> tokens) {
    using Map = num::detail::MutMap<T>;
    using CMap = num::detail::ConstMap<T>;
    const auto& cfg = params_.config;
    const std::size_t d = d_, v = static_cast<std::size_t>(cfg.vocab_size);
    std::size_t rows = 0;
    std::vector<std::size_t> first(seqs.size());
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      if (tokens[i].empty()) throw LengthError("decoder: nothing to feed");
      if (lengths_[seqs[i]] + tokens[i].size() > static_cast<std::size_t>(cfg.max_seq_len)) {
        throw LengthError("decoder: sequence exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
      }
      first[i] = rows;
      rows += tokens[i].size();
    }
    std::vector<T> x(rows * d);
    const T* tok = params_.token_embedding.values().data();
    const T* pos = params_.position_embedding.values().data();
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      for (std::size_t t = 0; t < tokens[i].size(); ++t) {
        const TokenId id = tokens[i][t];
        if (id < 0 || id >= cfg.vocab_size) {
          throw VocabError("decoder: token id " + std::to_string(id) + " outside vocab");
        }
        const std::size_t p = lengths_[seqs[i]] + t;
        T* row = x.data() + (first[i] + t) * d;
        for (std::size_t j = 0; j < d; ++j) row[j] = tok[static_cast<std::size_t>(id) * d + j] + pos[p * d + j];
      }
    }
    const std::size_t heads = static_cast<std::size_t>(cfg.n_heads), hd = d / heads;
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(hd));
    std::vector<T> h(rows * d), qkv(rows * 3 * d), att(rows * d), tmp(rows * d), fc(rows * 4 * d), scores;
    for (std::size_t l = 0; l < params_.blocks.size(); ++l) {
      const auto& b = params_.blocks[l];
      layer_norm(x, h, b.ln1_gain, b.ln1_shift);
      linear(h, rows, d, b.w_qkv, b.b_qkv, qkv);
      std::fill(att.begin(), att.end(), T(0));
      for (std::size_t i = 0; i < seqs.size(); ++i) {
        auto& c = cache_[seqs[i]][l];
        const std::size_t start = lengths_[seqs[i]];
        for (std::size_t t = 0; t < tokens[i].size(); ++t) {
          const T* src = qkv.data() + (first[i] + t) * 3 * d;
          c.k.insert(c.k.end(), src + d, src + 2 * d);
          c.v.insert(c.v.end(), src + 2 * d, src + 3 * d);
        }
        for (std::size_t t = 0; t < tokens[i].size(); ++t) {
          const std::size_t row = first[i] + t, upto = start + t;
          const T* qrow = qkv.data() + row * 3 * d;
          for (std::size_t hh = 0; hh < heads; ++hh) {
            const T* q = qrow + hh * hd;
            scores.assign(upto + 1, T(0));
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t j = 0; j <= upto; ++j) {
              const T* k = c.k.data() + j * d + hh * hd;
              T dot = 0;
              for (std::size_t e = 0; e < hd; ++e) dot += q[e] * k[e];
              scores[j] = dot * inv_sqrt;
              mx = std::max(mx, scores[j]);
            }
            T z = 0;
            for (std::size_t j = 0; j <= upto; ++j) {
              scores[j] = std::exp(scores[j] - mx);
              z += scores[j];
            }
            T* o = att.data() + row * d + hh * hd;
            for (std::size_t j = 0; j <= upto; ++j) {
              const T pj = scores[j] / z;
              const T* vv = c.v.data() + j * d + hh * hd;
              for (std::size_t e = 0; e < hd; ++e) o[e] += pj * vv[e];
            }
          }
        }
      }
      linear(att, rows, d, b.w_attn_out, b.b_attn_out, tmp);
      for (std::size_t i = 0; i < x.size(); ++i) x[i] += tmp[i];
      layer_norm(x, h, b.ln2_gain, b.ln2_shift);
      linear(h, rows, d, b.w_fc, b.b_fc, fc);
      const T gc = static_cast<T>(0.7978845608028654), gk = static_cast<T>(0.044715);
      for (auto& u : fc) u = T(0.5) * u * (T(1) + std::tanh(gc * (u + gk * u * u * u)));
      linear(fc, rows, 4 * d, b.w_proj, b.b_proj, tmp);
      for (std::size_t i = 0; i < x.size(); ++i) x[i] += tmp[i];
    }
    for (std::size_t i = 0; i < seqs.size(); ++i) lengths_[seqs[i]] += tokens[i].size();

    // Only the last new row of each sequence needs logits.
    std::vector<T> last(seqs.size() * d), hl(seqs.size() * d), out(seqs.size() * v);
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      const std::size_t row = first[i] + tokens[i].size() - 1;
      std::copy(x.begin() + static_cast<std::ptrdiff_t>(row * d), x.begin() + static_cast<std::ptrdiff_t>((row + 1) * d),
                last.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    layer_norm(last, hl, params_.lnf_gain, params_.lnf_shift);
    Map(out.data(), seqs.size(), v).noalias() =
        CMap(hl.data(), seqs.size(), d) * CMap(params_.w_out.values().data(), d, v);
    const T* bo = params_.b_out.values().data();
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      for (std::size_t j = 0; j < v; ++j) out[i * v + j] += bo[j];
    }
    return out;
  }

 private:
  struct LayerCache {
    std::vector<T> k, v;  // [length, d] each
  };

  void layer_norm(const std::vector<T>& in, std::vector<T>& out, const num::Tensor<T>& gain,
                  const num::Tensor<T>& shift) const {
    const std::size_t d = d_, m = in.size() / d;
    const T eps = static_cast<T>(1e-5);
    for (std::size_t i = 0; i < m; ++i) {
      const T* row = in.data() + i * d;
      T mean = 0;
      for (std::size_t j = 0; j < d; ++j) mean += row[j];
      mean /= static_cast<T>(d);
      T var = 0;
      for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
      var /= static_cast<T>(d);
      const T rstd = T(1) / std::sqrt(var + eps);
      for (std::size_t j = 0; j < d; ++j) out[i * d + j] = (row[j] - mean) * rstd * gain[j] + shift[j];
    }
  }

  static void linear(const std::vector<T>& in, std::size_t m, std::size_t k, const num::Tensor<T>& w,
                     const num::Tensor<T>& bias, std::vector<T>& out) {
    const std::size_t n = w.dim(1);
    num::detail::MutMap<T>(out.data(), m, n).noalias() =
        num::detail::ConstMap<T>(in.data(), m, k) * num::detail::ConstMap<T>(w.values().data(), k, n);
    const T* bv = bias.values().data();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
    }
  }

  const PolicyParams<T>& params_;
  std::size_t d_;
  std::vector<std::size_t> lengths_;
  std::vector<std::vector<LayerCache>> cache_;
};

}  // namespace ibro::model
