#pragma once

#include <cmath>
#include <map>
#include <span>
#include <vector>

#include "ibro/infotheory/env.hpp"
#include "ibro/infotheory/measures.hpp"
#include "ibro/model/sampling.hpp"
#include "ibro/model/transformer.hpp"
#include "ibro/numerics/tensor.hpp"
#include "ibro/tasks/tasks.hpp"

namespace ibro::info {

enum class Context { none, q, a, qa };

// Probability of every complete response under one conditioning context.
struct SequenceDistribution {
  std::map<TokenSeq, double> probs;
  Context context = Context::none;

  double total() const {
    double s = 0.0;
    for (const auto& [r, p] : probs) s += p;
    return s;
  }

  double entropy() const {
    double h = 0.0;
    for (const auto& [r, p] : probs) {
      if (p > 0.0) h -= p * std::log(p);
    }
    return h;
  }

  double at(const TokenSeq& r) const {
    const auto it = probs.find(r);
    return it == probs.end() ? 0.0 : it->second;
  }
};

struct PolicyEnumeration {
  std::vector<SequenceDistribution> per_prompt;  // pi(r|q)
  // token_entropy[q][t] = sum over live prefixes o_<t of pi(o_<t|q) H(o_t|o_<t,q);
  // prefixes that already emitted EOS contribute nothing.
  std::vector<std::vector<double>> token_entropy;
};

inline constexpr std::size_t kEnumerationChunk = 512;

// Exact expansion of the sampling tree for every prompt in 64-bit precision.
// EOS is absorbing and sequences reaching max_response_len end there. The
// tree is expanded one level at a time so each level runs as a few packed
// forwards; the result does not depend on the expansion order.
template <class T>
PolicyEnumeration enumerate_policy(const model::PolicyParams<T>& params, const EnumerableEnv& env,
                                   const model::SamplingConfig& sampling = {1.0, 1.0, 0}) {
  env.validate();
  if (params.config.vocab_size != env.vocab_size) {
    throw ConfigError("enumerate_policy: model vocab " + std::to_string(params.config.vocab_size) +
                      " differs from env vocab " + std::to_string(env.vocab_size));
  }
  for (const auto& q : env.prompts) {
    if (static_cast<int>(q.prompt_tokens.size()) + env.max_response_len > params.config.max_seq_len) {
      throw LengthError("enumerate_policy: prompt plus responses exceed the model context");
    }
  }
  const auto p64 = params.template cast<double>();
  num::NoGradGuard no_grad;
  const auto v = static_cast<std::size_t>(env.vocab_size);
  const auto len = static_cast<std::size_t>(env.max_response_len);
  PolicyEnumeration out;
  struct Prefix {
    TokenSeq response;
    double prob;
  };
  for (const auto& inst : env.prompts) {
    SequenceDistribution dist;
    dist.context = Context::q;
    std::vector<double> ent(len, 0.0);
    std::vector<Prefix> frontier{{{}, 1.0}};
    for (std::size_t depth = 0; depth < len && !frontier.empty(); ++depth) {
      std::vector<Prefix> next;
      for (std::size_t begin = 0; begin < frontier.size(); begin += kEnumerationChunk) {
        const std::size_t end = std::min(frontier.size(), begin + kEnumerationChunk);
        std::vector<TokenSeq> seqs;
        for (std::size_t i = begin; i < end; ++i) {
          TokenSeq s = inst.prompt_tokens;
          s.insert(s.end(), frontier[i].response.begin(), frontier[i].response.end());
          seqs.push_back(std::move(s));
        }
        const auto fwd = model::forward_packed(p64, std::span<const TokenSeq>(seqs));
        for (std::size_t i = begin; i < end; ++i) {
          const auto& seg = fwd.segments[i - begin];
          const auto row = fwd.logits.values().subspan((seg.offset + seg.length - 1) * v, v);
          const auto probs = model::sampling_distribution(row, sampling.temperature, sampling.top_p);
          const auto& pre = frontier[i];
          ent[depth] += pre.prob * entropy(probs);
          for (std::size_t tok = 0; tok < v; ++tok) {
            if (probs[tok] <= 0.0) continue;
            Prefix child{pre.response, pre.prob * probs[tok]};
            child.response.push_back(static_cast<TokenId>(tok));
            if (static_cast<TokenId>(tok) == env.eos || depth + 1 == len) {
              dist.probs[child.response] += child.prob;
            } else {
              next.push_back(std::move(child));
            }
          }
        }
      }
      frontier = std::move(next);
    }
    out.per_prompt.push_back(std::move(dist));
    out.token_entropy.push_back(std::move(ent));
  }
  return out;
}

// Exact probability that one sampled response passes the verifier, per prompt.
template <class T>
std::vector<double> success_probability(const model::PolicyParams<T>& params, const EnumerableEnv& env,
                                        const model::SamplingConfig& sampling) {
  const auto en = enumerate_policy(params, env, sampling);
  std::vector<double> out;
  for (std::size_t q = 0; q < env.prompts.size(); ++q) {
    double s = 0.0;
    for (const auto& [r, p] : en.per_prompt[q].probs) {
      if (tasks::verify(r, env.prompts[q]).correct) s += p;
    }
    out.push_back(s);
  }
  return out;
}

}  // namespace ibro::info
