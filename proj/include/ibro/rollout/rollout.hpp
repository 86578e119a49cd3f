#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "ibro/model/decoder.hpp"
#include "ibro/model/sampling.hpp"
#include "ibro/model/transformer.hpp"
#include "ibro/numerics/tensor.hpp"
#include "ibro/random.hpp"
#include "ibro/tasks/tasks.hpp"
#include "json.hpp"

namespace ibro::rollout {

using model::SamplingConfig;
using tasks::PromptInstance;

struct Trajectory {
  std::int64_t instance_id = 0;
  TokenSeq prompt_tokens;
  TokenSeq response_tokens;
  // log pi_old(o_t | o_<t, q) under the raw policy softmax at sampling time.
  std::vector<double> old_logprobs;
  // 1 on generated tokens up to and including EOS.
  std::vector<std::uint8_t> response_mask;
  // Entropy in nats of the raw policy distribution at each sampled position.
  std::vector<double> token_entropy;
  bool terminated_by_eos = false;
  std::optional<double> reward;
  bool correct = false;

  std::size_t length() const { return response_tokens.size(); }
};

struct RolloutGroup {
  PromptInstance instance;
  std::vector<Trajectory> trajectories;
  std::vector<double> group_rewards;
};

// log softmax(row)[token] in double precision.
template <class T>
double token_logprob(std::span<const T> row, TokenId token) {
  double mx = static_cast<double>(row[0]);
  for (T x : row) mx = std::max(mx, static_cast<double>(x));
  double z = 0.0;
  for (T x : row) z += std::exp(static_cast<double>(x) - mx);
  return static_cast<double>(row[static_cast<std::size_t>(token)]) - mx - std::log(z);
}

// Entropy of softmax(row) in nats, double precision.
template <class T>
double row_entropy(std::span<const T> row) {
  double mx = static_cast<double>(row[0]);
  for (T x : row) mx = std::max(mx, static_cast<double>(x));
  double z = 0.0, s = 0.0;
  for (T x : row) {
    const double d = static_cast<double>(x) - mx;
    const double e = std::exp(d);
    z += e;
    s += e * d;
  }
  return std::log(z) - s / z;
}

// Rows per packed forward during generation.
inline constexpr std::size_t kRolloutChunk = 1024;

// Samples one response per instance. Trajectory i draws its tokens from the
// substream derive_seed(seed, {i}). Generation stops at EOS, after
// max_new_tokens, or when the context is full.
template <class T>
std::vector<Trajectory> rollout(const model::PolicyParams<T>& params,
                                std::span<const PromptInstance> instances,
                                const SamplingConfig& sampling, std::uint64_t seed) {
  if (sampling.max_new_tokens < 1) throw ContractError("rollout: max_new_tokens must be >= 1");
  const auto vocab = static_cast<std::size_t>(params.config.vocab_size);
  std::vector<Trajectory> out(instances.size());
  std::vector<Rng> rngs;
  rngs.reserve(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    out[i].instance_id = instances[i].instance_id;
    out[i].prompt_tokens = instances[i].prompt_tokens;
    rngs.emplace_back(derive_seed(seed, {i}));
  }
  for (std::size_t begin = 0; begin < out.size(); begin += kRolloutChunk) {
    const std::size_t end = std::min(out.size(), begin + kRolloutChunk);
    model::IncrementalDecoder<T> decoder(params, end - begin);
    std::vector<std::size_t> active, slots;
    std::vector<TokenSeq> feed;
    for (std::size_t i = begin; i < end; ++i) {
      active.push_back(i);
      slots.push_back(i - begin);
      feed.push_back(out[i].prompt_tokens);
    }
    while (!active.empty()) {
      const auto logits_all =
          decoder.feed(std::span<const std::size_t>(slots), std::span<const TokenSeq>(feed));
      std::vector<std::size_t> still, still_slots;
      std::vector<TokenSeq> next;
      for (std::size_t a = 0; a < active.size(); ++a) {
        const std::size_t i = active[a];
        std::span<const T> logits(logits_all.data() + a * vocab, vocab);
        const TokenId tok = model::sample_token(logits, sampling.temperature, sampling.top_p, rngs[i]);
        auto& tr = out[i];
        tr.response_tokens.push_back(tok);
        tr.old_logprobs.push_back(token_logprob(logits, tok));
        tr.token_entropy.push_back(row_entropy(logits));
        tr.response_mask.push_back(1);
        if (tok == tasks::Vocab::eos) {
          tr.terminated_by_eos = true;
          continue;
        }
        const auto total = tr.prompt_tokens.size() + tr.response_tokens.size();
        if (static_cast<int>(tr.response_tokens.size()) >= sampling.max_new_tokens ||
            static_cast<int>(total) >= params.config.max_seq_len) {
          continue;
        }
        still.push_back(i);
        still_slots.push_back(slots[a]);
        next.push_back({tok});
      }
      active = std::move(still);
      slots = std::move(still_slots);
      feed = std::move(next);
    }
  }
  return out;
}

// G samples for each instance from one packed rollout. Trajectory j of
// instance i uses substream i * G + j, and each group is scored by the verifier.
template <class T>
std::vector<RolloutGroup> rollout_groups(const model::PolicyParams<T>& params,
                                         std::span<const PromptInstance> instances, int group_size,
                                         const SamplingConfig& sampling, std::uint64_t seed,
                                         const std::optional<tasks::OverlongShaping>& shaping = std::nullopt) {
  if (group_size < 2) throw ContractError("group_rollout: group size must be at least 2");
  const auto g = static_cast<std::size_t>(group_size);
  std::vector<PromptInstance> repeated;
  repeated.reserve(instances.size() * g);
  for (const auto& inst : instances) repeated.insert(repeated.end(), g, inst);
  auto trajs = rollout(params, std::span<const PromptInstance>(repeated), sampling, seed);
  std::vector<RolloutGroup> groups(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    auto& group = groups[i];
    group.instance = instances[i];
    for (std::size_t j = 0; j < g; ++j) {
      auto& tr = trajs[i * g + j];
      const auto outcome = tasks::verify(tr.response_tokens, instances[i], shaping);
      tr.reward = outcome.reward;
      tr.correct = outcome.correct;
      group.group_rewards.push_back(outcome.reward);
      group.trajectories.push_back(std::move(tr));
    }
  }
  return groups;
}

// G samples for one prompt, each on its own substream, scored by the verifier.
template <class T>
RolloutGroup group_rollout(const model::PolicyParams<T>& params, const PromptInstance& instance,
                           int group_size, const SamplingConfig& sampling, std::uint64_t seed,
                           const std::optional<tasks::OverlongShaping>& shaping = std::nullopt) {
  return std::move(rollout_groups(params, std::span<const PromptInstance>(&instance, 1), group_size,
                                  sampling, seed, shaping)[0]);
}

// Mean over prompts of the fraction of k samples the verifier accepts.
template <class T>
double eval_avg_at_k(const model::PolicyParams<T>& params, std::span<const PromptInstance> dataset,
                     int k, const SamplingConfig& sampling, std::uint64_t seed) {
  if (dataset.empty()) throw InvalidInput("eval_avg_at_k: empty dataset");
  if (k < 1) throw ContractError("eval_avg_at_k: k must be at least 1");
  std::vector<PromptInstance> repeated;
  repeated.reserve(dataset.size() * static_cast<std::size_t>(k));
  for (const auto& inst : dataset) {
    for (int j = 0; j < k; ++j) repeated.push_back(inst);
  }
  const auto trajs = rollout(params, std::span<const PromptInstance>(repeated), sampling, seed);
  double total = 0.0;
  for (std::size_t p = 0; p < dataset.size(); ++p) {
    int correct = 0;
    for (int j = 0; j < k; ++j) {
      const auto& tr = trajs[p * static_cast<std::size_t>(k) + static_cast<std::size_t>(j)];
      correct += tasks::verify(tr.response_tokens, dataset[p]).correct ? 1 : 0;
    }
    total += static_cast<double>(correct) / k;
  }
  return total / static_cast<double>(dataset.size());
}

// One JSON object per line: instance_id, prompt, response, reward.
inline void write_trajectories(std::ostream& os, std::span<const Trajectory> trajectories) {
  for (const auto& tr : trajectories) {
    nlohmann::json j;
    j["instance_id"] = tr.instance_id;
    j["prompt"] = tr.prompt_tokens;
    j["response"] = tr.response_tokens;
    j["reward"] = tr.reward ? nlohmann::json(*tr.reward) : nlohmann::json(nullptr);
    os << j.dump() << '\n';
  }
}

}  // namespace ibro::rollout
