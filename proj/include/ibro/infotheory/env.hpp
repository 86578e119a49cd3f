#pragma once

#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "ibro/error.hpp"
#include "ibro/kvconfig.hpp"
#include "ibro/random.hpp"
#include "ibro/tasks/tasks.hpp"
#include "ibro/types.hpp"

namespace ibro::info {

inline constexpr int kMaxEnvVocab = 12;
inline constexpr int kMaxEnvResponseLen = 8;
inline constexpr double kMaxEnvStates = 1e7;

// A finite data distribution p(q) p(a|q) small enough to enumerate every
// response a policy can produce.
struct EnumerableEnv {
  std::vector<tasks::PromptInstance> prompts;
  std::vector<double> prior;  // p(q)
  std::vector<TokenSeq> answers;
  std::vector<std::vector<double>> answer_given_prompt;  // [q][a] = p(a|q)
  int vocab_size = 6;
  int max_response_len = 4;
  TokenId eos = tasks::Vocab::eos;  // -1: responses always run to max_response_len

  std::size_t n_prompts() const { return prompts.size(); }
  std::size_t n_answers() const { return answers.size(); }

  // Upper bound on tree nodes: n_prompts * sum_{t <= L} V^t.
  double state_bound() const {
    double per = 0.0;
    for (int t = 0; t <= max_response_len; ++t) per += std::pow(static_cast<double>(vocab_size), t);
    return per * static_cast<double>(prompts.size());
  }

  void validate() const {
    if (prompts.empty()) throw ConfigError("env: no prompts");
    if (vocab_size < 2 || vocab_size > kMaxEnvVocab) {
      throw ConfigError("env: vocab_size must lie in [2, " + std::to_string(kMaxEnvVocab) + "]");
    }
    if (max_response_len < 1 || max_response_len > kMaxEnvResponseLen) {
      throw ConfigError("env: max_response_len must lie in [1, " + std::to_string(kMaxEnvResponseLen) + "]");
    }
    if (eos < -1 || eos >= vocab_size) throw ConfigError("env: eos outside the vocab");
    if (prior.size() != prompts.size()) throw InvalidInput("env: prior length differs from prompt count");
    if (answer_given_prompt.size() != prompts.size()) throw InvalidInput("env: answer map has wrong row count");
    if (answers.empty()) throw InvalidInput("env: no answers");
    double total = 0.0;
    for (double p : prior) {
      if (!(p >= 0.0)) throw InvalidInput("env: negative or NaN prior");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) throw InvalidInput("env: prior does not sum to 1");
    for (const auto& row : answer_given_prompt) {
      if (row.size() != answers.size()) throw InvalidInput("env: answer map has wrong column count");
      double s = 0.0;
      for (double p : row) {
        if (!(p >= 0.0)) throw InvalidInput("env: negative or NaN answer probability");
        s += p;
      }
      if (std::abs(s - 1.0) > 1e-9) throw InvalidInput("env: p(a|q) does not sum to 1");
    }
    for (const auto& q : prompts) {
      if (q.prompt_tokens.empty()) throw InvalidInput("env: empty prompt");
      for (TokenId t : q.prompt_tokens) {
        if (t < 0 || t >= vocab_size) throw VocabError("env: prompt token outside the vocab");
      }
    }
    if (state_bound() > kMaxEnvStates) {
      throw SizeError("env: up to " + std::to_string(static_cast<long long>(state_bound())) +
                      " states exceeds the enumeration limit of 1e7");
    }
  }

  // Uniform prior and the deterministic answers carried by the instances.
  static EnumerableEnv from_instances(std::vector<tasks::PromptInstance> instances, int vocab_size,
                                      int max_response_len) {
    EnumerableEnv env;
    env.vocab_size = vocab_size;
    env.max_response_len = max_response_len;
    const auto n = instances.size();
    env.prior.assign(n, n ? 1.0 / static_cast<double>(n) : 0.0);
    for (const auto& inst : instances) {
      std::size_t a = 0;
      while (a < env.answers.size() && env.answers[a] != inst.answer_tokens) ++a;
      if (a == env.answers.size()) env.answers.push_back(inst.answer_tokens);
    }
    for (const auto& inst : instances) {
      std::vector<double> row(env.answers.size(), 0.0);
      for (std::size_t a = 0; a < env.answers.size(); ++a) {
        if (env.answers[a] == inst.answer_tokens) row[a] = 1.0;
      }
      env.answer_given_prompt.push_back(std::move(row));
    }
    env.prompts = std::move(instances);
    return env;
  }
};

// Parameters of a seeded synthetic environment.
struct EnvConfig {
  std::uint64_t seed = 0;
  int vocab_size = 6;
  int max_response_len = 4;
  int n_prompts = 3;
  int prompt_len = 2;  // tokens after BOS
  int n_answers = 2;
  double answer_noise = 0.0;  // mass spread uniformly over all answers

  void read(KeyValues& kv) {
    seed = kv.get("env.seed", seed);
    vocab_size = kv.get("env.vocab_size", vocab_size);
    max_response_len = kv.get("env.max_response_len", max_response_len);
    n_prompts = kv.get("env.n_prompts", n_prompts);
    prompt_len = kv.get("env.prompt_len", prompt_len);
    n_answers = kv.get("env.n_answers", n_answers);
    answer_noise = kv.get("env.answer_noise", answer_noise);
  }
};

// Prompts are BOS followed by distinct random strings over ids [2, V); the
// base answer of prompt i is answer i mod n_answers, mixed with noise.
inline EnumerableEnv make_random_env(const EnvConfig& cfg) {
  if (cfg.vocab_size < 3) throw ConfigError("env: vocab_size must be at least 3");
  const int symbols = cfg.vocab_size - 2;
  if (cfg.prompt_len < 1) throw ConfigError("env: prompt_len must be positive");
  if (cfg.n_prompts < 1) throw ConfigError("env: n_prompts must be positive");
  if (cfg.n_answers < 1 || cfg.n_answers > symbols) {
    throw ConfigError("env: n_answers must lie in [1, vocab_size - 2]");
  }
  if (cfg.answer_noise < 0.0 || cfg.answer_noise > 1.0) throw ConfigError("env: answer_noise must lie in [0, 1]");
  if (std::pow(static_cast<double>(symbols), cfg.prompt_len) < cfg.n_prompts) {
    throw ConfigError("env: too few distinct prompts for n_prompts");
  }
  Rng rng(derive_seed(cfg.seed, {0xe9}));
  EnumerableEnv env;
  env.vocab_size = cfg.vocab_size;
  env.max_response_len = cfg.max_response_len;
  std::set<TokenSeq> seen;
  while (static_cast<int>(env.prompts.size()) < cfg.n_prompts) {
    TokenSeq q{tasks::Vocab::bos};
    for (int i = 0; i < cfg.prompt_len; ++i) {
      q.push_back(static_cast<TokenId>(2 + rng() % static_cast<std::uint64_t>(symbols)));
    }
    if (!seen.insert(q).second) continue;
    tasks::PromptInstance inst;
    inst.instance_id = static_cast<std::int64_t>(env.prompts.size());
    inst.prompt_tokens = std::move(q);
    env.prompts.push_back(std::move(inst));
  }
  for (int a = 0; a < cfg.n_answers; ++a) env.answers.push_back({static_cast<TokenId>(2 + a)});
  const double n_a = cfg.n_answers;
  for (int q = 0; q < cfg.n_prompts; ++q) {
    std::vector<double> row(static_cast<std::size_t>(cfg.n_answers), cfg.answer_noise / n_a);
    row[static_cast<std::size_t>(q % cfg.n_answers)] += 1.0 - cfg.answer_noise;
    env.prompts[static_cast<std::size_t>(q)].answer_tokens = env.answers[static_cast<std::size_t>(q % cfg.n_answers)];
    env.answer_given_prompt.push_back(std::move(row));
  }
  env.prior.assign(static_cast<std::size_t>(cfg.n_prompts), 1.0 / cfg.n_prompts);
  env.validate();
  return env;
}

}  // namespace ibro::info
