#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ibro/error.hpp"
#include "ibro/numerics/ops.hpp"
#include "ibro/random.hpp"
#include "ibro/types.hpp"

namespace ibro::model {

struct ModelConfig {
  int vocab_size = 32;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 2;
  int max_seq_len = 64;
  bool has_value_head = false;
  std::uint64_t seed = 0;

  void validate() const {
    if (vocab_size < 2) throw ConfigError("model: vocab_size must be at least 2");
    if (d_model < 1 || n_layers < 1 || n_heads < 1) {
      throw ConfigError("model: d_model, n_layers and n_heads must be positive");
    }
    if (d_model % n_heads != 0) throw ConfigError("model: d_model must be divisible by n_heads");
    if (max_seq_len < 2) throw ConfigError("model: max_seq_len must be at least 2");
  }

  bool operator==(const ModelConfig&) const = default;
};

template <class T>
struct Block {
  num::Tensor<T> ln1_gain, ln1_shift;
  num::Tensor<T> w_qkv, b_qkv;  // [d, 3d], [3d]
  num::Tensor<T> w_attn_out, b_attn_out;
  num::Tensor<T> ln2_gain, ln2_shift;
  num::Tensor<T> w_fc, b_fc;      // [d, 4d], [4d]
  num::Tensor<T> w_proj, b_proj;  // [4d, d], [d]
};

// Parameters of the causal transformer policy, plus a snapshot of their
// initial values for measuring the distance travelled during training.
template <class T>
class PolicyParams {
 public:
  ModelConfig config;
  num::Tensor<T> token_embedding;     // [V, d]
  num::Tensor<T> position_embedding;  // [max_seq_len, d]
  std::vector<Block<T>> blocks;
  num::Tensor<T> lnf_gain, lnf_shift;
  num::Tensor<T> w_out, b_out;      // [d, V], [V]
  num::Tensor<T> w_value, b_value;  // [d, 1], [1]; only with a value head

  // Every parameter tensor in declaration order.
  std::vector<num::Tensor<T>> all() const {
    std::vector<num::Tensor<T>> out = actor();
    if (config.has_value_head) {
      out.push_back(w_value);
      out.push_back(b_value);
    }
    return out;
  }

  // Parameters that shape the token distribution (everything except the value head).
  std::vector<num::Tensor<T>> actor() const {
    std::vector<num::Tensor<T>> out{token_embedding, position_embedding};
    for (const auto& b : blocks) {
      for (const auto& t : {b.ln1_gain, b.ln1_shift, b.w_qkv, b.b_qkv, b.w_attn_out,
                            b.b_attn_out, b.ln2_gain, b.ln2_shift, b.w_fc, b.b_fc, b.w_proj,
                            b.b_proj}) {
        out.push_back(t);
      }
    }
    for (const auto& t : {lnf_gain, lnf_shift, w_out, b_out}) out.push_back(t);
    return out;
  }

  std::vector<num::Tensor<T>> value_head() const {
    if (!config.has_value_head) return {};
    return {w_value, b_value};
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : all()) n += t.size();
    return n;
  }

  std::vector<T> flatten() const {
    std::vector<T> flat;
    flat.reserve(parameter_count());
    for (const auto& t : all()) flat.insert(flat.end(), t.values().begin(), t.values().end());
    return flat;
  }

  void assign_flat(std::span<const T> flat) {
    if (flat.size() != parameter_count()) {
      throw DimensionError("assign_flat: expected " + std::to_string(parameter_count()) +
                           " values, got " + std::to_string(flat.size()));
    }
    std::size_t k = 0;
    for (auto t : all()) {
      auto v = t.mutable_values();
      for (auto& x : v) x = flat[k++];
    }
  }

  // Marks the current parameters as the reference point for param_l2_from_init.
  void reset_reference() {
    const auto flat = flatten();
    reference_.assign(flat.begin(), flat.end());
  }

  // Euclidean distance between the current and reference parameters.
  double param_l2_from_init() const {
    const auto flat = flatten();
    if (reference_.size() != flat.size()) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < flat.size(); ++i) {
      const double d = static_cast<double>(flat[i]) - reference_[i];
      s += d * d;
    }
    return std::sqrt(s);
  }

  // Deep copy: independent storage, same reference point.
  PolicyParams clone() const { return cast<T>(); }

  template <class U>
  PolicyParams<U> cast() const {
    PolicyParams<U> out = PolicyParams<U>::allocate(config);
    const auto flat = flatten();
    std::vector<U> converted(flat.begin(), flat.end());
    out.assign_flat(converted);
    out.reference_ = reference_;
    return out;
  }

  // Zero-filled parameters with the shapes implied by `config`.
  static PolicyParams allocate(const ModelConfig& config) {
    config.validate();
    const auto v = static_cast<std::size_t>(config.vocab_size);
    const auto d = static_cast<std::size_t>(config.d_model);
    const auto len = static_cast<std::size_t>(config.max_seq_len);
    auto z = [](num::Shape s) { return num::Tensor<T>::zeros(std::move(s), true); };
    PolicyParams p;
    p.config = config;
    p.token_embedding = z({v, d});
    p.position_embedding = z({len, d});
    for (int l = 0; l < config.n_layers; ++l) {
      p.blocks.push_back(Block<T>{z({d}), z({d}), z({d, 3 * d}), z({3 * d}), z({d, d}), z({d}),
                                  z({d}), z({d}), z({d, 4 * d}), z({4 * d}), z({4 * d, d}),
                                  z({d})});
    }
    p.lnf_gain = z({d});
    p.lnf_shift = z({d});
    p.w_out = z({d, v});
    p.b_out = z({v});
    if (config.has_value_head) {
      p.w_value = z({d, 1});
      p.b_value = z({1});
    }
    return p;
  }

 private:
  template <class U>
  friend class PolicyParams;

  std::vector<double> reference_;
};

// Deterministic initialization: weights ~ N(0, 0.02^2), biases 0, norm gains 1.
template <class T>
PolicyParams<T> init(const ModelConfig& config) {
  auto p = PolicyParams<T>::allocate(config);
  Rng rng(derive_seed(config.seed, {0x1b}));
  auto normal = [&rng](num::Tensor<T> t, double stddev) {
    for (auto& x : t.mutable_values()) x = static_cast<T>(stddev * standard_normal(rng));
  };
  auto ones = [](num::Tensor<T> t) {
    for (auto& x : t.mutable_values()) x = T(1);
  };
  constexpr double kStd = 0.02;
  normal(p.token_embedding, kStd);
  normal(p.position_embedding, kStd);
  for (auto& b : p.blocks) {
    ones(b.ln1_gain);
    normal(b.w_qkv, kStd);
    normal(b.w_attn_out, kStd);
    ones(b.ln2_gain);
    normal(b.w_fc, kStd);
    normal(b.w_proj, kStd);
  }
  ones(p.lnf_gain);
  normal(p.w_out, kStd);
  if (config.has_value_head) normal(p.w_value, kStd);
  p.reset_reference();
  return p;
}

template <class T>
struct ForwardOutput {
  num::Tensor<T> logits;  // [N, V]
  num::Tensor<T> values;  // [N]; undefined without a value head
  std::vector<num::Segment> segments;
};

// Runs several sequences through the trunk as one packed batch. Row r of the
// output belongs to the segment containing r; attention never crosses
// segments, so each sequence's outputs equal those of a solo forward up to
// floating-point reassociation in the matrix products.
template <class T>
ForwardOutput<T> forward_packed(const PolicyParams<T>& params,
                                std::span<const TokenSeq> sequences) {
  const auto& cfg = params.config;
  std::vector<TokenId> ids;
  std::vector<TokenId> positions;
  std::vector<num::Segment> segments;
  for (const auto& seq : sequences) {
    if (seq.empty()) throw LengthError("forward: empty sequence");
    if (static_cast<int>(seq.size()) > cfg.max_seq_len) {
      throw LengthError("forward: sequence of length " + std::to_string(seq.size()) +
                        " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
    }
    segments.push_back({ids.size(), seq.size()});
    for (std::size_t t = 0; t < seq.size(); ++t) {
      if (seq[t] < 0 || seq[t] >= cfg.vocab_size) {
        throw VocabError("forward: token id " + std::to_string(seq[t]) + " outside vocab of " +
                         std::to_string(cfg.vocab_size));
      }
      ids.push_back(seq[t]);
      positions.push_back(static_cast<TokenId>(t));
    }
  }
  if (ids.empty()) throw LengthError("forward: no tokens");

  auto x = num::add(num::embedding(params.token_embedding, std::span<const TokenId>(ids)),
                    num::embedding(params.position_embedding, std::span<const TokenId>(positions)));
  const auto heads = static_cast<std::size_t>(cfg.n_heads);
  for (const auto& b : params.blocks) {
    auto h = num::layer_norm(x, b.ln1_gain, b.ln1_shift);
    auto qkv = num::linear(h, b.w_qkv, b.b_qkv);
    auto att = num::causal_attention(qkv, heads, std::span<const num::Segment>(segments));
    x = num::add(x, num::linear(att, b.w_attn_out, b.b_attn_out));
    h = num::layer_norm(x, b.ln2_gain, b.ln2_shift);
    auto mlp = num::linear(num::gelu(num::linear(h, b.w_fc, b.b_fc)), b.w_proj, b.b_proj);
    x = num::add(x, mlp);
  }
  auto hf = num::layer_norm(x, params.lnf_gain, params.lnf_shift);
  ForwardOutput<T> out;
  out.logits = num::linear(hf, params.w_out, params.b_out);
  if (cfg.has_value_head) {
    out.values = num::reshape(num::linear(hf, params.w_value, params.b_value), {hf.dim(0)});
  }
  out.segments = std::move(segments);
  return out;
}

// Single-sequence forward: logits [T, V] (and values [T] with a value head).
template <class T>
ForwardOutput<T> forward(const PolicyParams<T>& params, std::span<const TokenId> tokens) {
  const TokenSeq seq(tokens.begin(), tokens.end());
  return forward_packed(params, std::span<const TokenSeq>(&seq, 1));
}

}  // namespace ibro::model
