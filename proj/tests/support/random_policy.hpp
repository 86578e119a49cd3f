#pragma once

#include "ibro/model/transformer.hpp"
#include "ibro/random.hpp"

namespace ibro::testing {

// A small randomly initialized policy with weights spread wide enough that
// next-token distributions are far from uniform.
inline model::PolicyParams<double> random_policy(int vocab, std::uint64_t seed, double spread = 0.6,
                                                 int max_seq_len = 10) {
  model::ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.max_seq_len = max_seq_len;
  c.seed = seed;
  auto p = model::init<double>(c);
  Rng rng(derive_seed(seed, {0x51}));
  for (auto& t : p.all()) {
    for (auto& x : t.mutable_values()) x += spread * standard_normal(rng);
  }
  p.reset_reference();
  return p;
}

}  // namespace ibro::testing
