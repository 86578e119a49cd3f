#pragma once

#include <cmath>
#include <vector>

#include "ibro/model/transformer.hpp"

namespace ibro::testing {

// A transformer whose next-token logits equal table[last_token] exactly:
// blocks are zeroed, embeddings are one-hot (d_model == vocab_size) and the
// output layer undoes the final layer norm.
template <class T>
model::PolicyParams<T> bigram_policy(const std::vector<std::vector<double>>& table, int max_seq_len = 16) {
  const int v = static_cast<int>(table.size());
  model::ModelConfig c;
  c.vocab_size = v;
  c.d_model = v;
  c.n_layers = 1;
  c.n_heads = 1;
  c.max_seq_len = max_seq_len;
  auto p = model::PolicyParams<T>::allocate(c);
  for (auto& g : p.blocks[0].ln1_gain.mutable_values()) g = T(1);
  for (auto& g : p.blocks[0].ln2_gain.mutable_values()) g = T(1);
  for (auto& g : p.lnf_gain.mutable_values()) g = T(1);
  auto emb = p.token_embedding.mutable_values();
  for (int i = 0; i < v; ++i) emb[static_cast<std::size_t>(i * v + i)] = T(1);
  const double n = v;
  const double var = (1.0 / n) * (1.0 - 1.0 / n);
  const double a = 1.0 / std::sqrt(var + 1e-5);
  auto w = p.w_out.mutable_values();
  auto b = p.b_out.mutable_values();
  for (int j = 0; j < v; ++j) {
    double col = 0.0;
    for (int i = 0; i < v; ++i) {
      w[static_cast<std::size_t>(i * v + j)] = static_cast<T>(table[i][j] / a);
      col += table[i][j];
    }
    b[static_cast<std::size_t>(j)] = static_cast<T>(col / n);
  }
  p.reset_reference();
  return p;
}

}  // namespace ibro::testing
