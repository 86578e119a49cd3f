#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "bigram_policy.hpp"
#include "ibro/infotheory/infotheory.hpp"
#include "ibro/numerics/numerics.hpp"
#include "ibro/rlcore/adam.hpp"
#include "random_policy.hpp"

namespace info = ibro::info;
namespace model = ibro::model;
using ibro::TokenId;
using ibro::TokenSeq;

namespace {

info::EnumerableEnv env_with(std::vector<TokenSeq> prompts, std::vector<int> answer_of, int vocab, int len,
                             TokenId eos = 1) {
  std::vector<ibro::tasks::PromptInstance> inst;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    inst.push_back({prompts[i], {static_cast<TokenId>(answer_of[i])}, static_cast<std::int64_t>(i)});
  }
  auto env = info::EnumerableEnv::from_instances(std::move(inst), vocab, len);
  env.eos = eos;
  return env;
}

info::EnumerableEnv seeded_env(std::uint64_t seed, int n_prompts = 3, double noise = 0.0) {
  info::EnvConfig c;
  c.seed = seed;
  c.vocab_size = 5 + static_cast<int>(seed % 2);
  c.max_response_len = 3 + static_cast<int>(seed % 2);
  c.n_prompts = n_prompts;
  c.n_answers = std::min(n_prompts, 2);
  c.answer_noise = noise;
  return info::make_random_env(c);
}

// Deterministic bigram: the last prompt token picks the first response token, then EOS.
model::PolicyParams<double> deterministic_policy(int vocab) {
  std::vector<std::vector<double>> table(static_cast<std::size_t>(vocab), std::vector<double>(vocab, 0.0));
  for (int i = 0; i < vocab; ++i) {
    const int next = (i == 2) ? 4 : (i == 3) ? 5 : 1;
    table[i][next] = 60.0;
  }
  return ibro::testing::bigram_policy<double>(table);
}

model::PolicyParams<double> uniform_policy(int vocab) {
  return ibro::testing::bigram_policy<double>(std::vector<std::vector<double>>(vocab, std::vector<double>(vocab, 0.0)));
}

}  // namespace

TEST(Enumerate, GreedyPolicyGivesOneSequence) {
  auto p = ibro::testing::random_policy(5, 1);
  auto env = env_with({{0, 2}}, {3}, 5, 4);
  auto en = info::enumerate_policy(p, env, model::SamplingConfig{1e-9, 1.0, 0});
  ASSERT_EQ(en.per_prompt[0].probs.size(), 1u);
  EXPECT_EQ(en.per_prompt[0].probs.begin()->second, 1.0);
}

TEST(Enumerate, UniformCountsSequences) {
  auto env = env_with({{0, 2}}, {2}, 3, 2, -1);
  auto en = info::enumerate_policy(uniform_policy(3), env);
  ASSERT_EQ(en.per_prompt[0].probs.size(), 9u);
  for (const auto& [r, p] : en.per_prompt[0].probs) {
    EXPECT_EQ(r.size(), 2u);
    EXPECT_NEAR(p, 1.0 / 9.0, 1e-15);
  }
}

TEST(Enumerate, ProductOfStepsOracle) {
  auto p = ibro::testing::random_policy(4, 7);
  auto env = env_with({{0, 3}, {0, 2}}, {2, 3}, 4, 3);
  auto en = info::enumerate_policy(p, env);
  for (std::size_t q = 0; q < 2; ++q) {
    const auto& d = en.per_prompt[q];
    EXPECT_NEAR(d.total(), 1.0, 1e-12);
    for (const auto& [r, prob] : d.probs) {
      EXPECT_TRUE(r.back() == 1 || r.size() == 3u);
      double logp = 0.0;
      TokenSeq ctx = env.prompts[q].prompt_tokens;
      for (TokenId tok : r) {
        auto logits = model::forward(p, std::span<const TokenId>(ctx)).logits;
        const auto ls = ibro::num::log_softmax(logits);
        logp += ls[(ctx.size() - 1) * 4 + static_cast<std::size_t>(tok)];
        ctx.push_back(tok);
      }
      EXPECT_NEAR(prob, std::exp(logp), 1e-12);
    }
  }
}

TEST(Enumerate, SizeAndVocabErrors) {
  auto env = env_with({{0, 2}}, {2}, 12, 8);
  auto p = ibro::testing::random_policy(12, 1);
  EXPECT_THROW(info::enumerate_policy(p, env), ibro::SizeError);
  auto small = env_with({{0, 2}}, {2}, 5, 3);
  EXPECT_THROW(info::enumerate_policy(p, small), ibro::ConfigError);
}

TEST(MutualInformation, Examples) {
  info::JointTable indep(3, 3);
  for (auto& x : indep.p) x = 1.0 / 9.0;
  EXPECT_NEAR(info::mutual_information(indep), 0.0, 1e-12);
  info::JointTable copy(4, 4);
  for (std::size_t i = 0; i < 4; ++i) copy.at(i, i) = 0.25;
  EXPECT_NEAR(info::mutual_information(copy), std::log(4.0), 1e-12);
  info::JointTable bad(2, 2);
  bad.p = {0.3, 0.3, 0.3, 0.3};
  EXPECT_THROW(info::mutual_information(bad), ibro::InvalidInput);
}

TEST(MutualInformation, EntropyDifferenceIdentity) {
  ibro::Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    info::JointTable j(3, 3);
    double s = 0.0;
    for (auto& x : j.p) s += (x = ibro::uniform01(rng) + (trial % 3 == 0 ? 0.0 : 0.05));
    for (auto& x : j.p) x /= s;
    const auto px = j.row_marginal();
    // H(X) - H(X|Y), with H(X|Y) = H(X,Y) - H(Y).
    const double hx = info::entropy(px);
    const double hxy = info::entropy(j.p);
    const double hy = info::entropy(j.col_marginal());
    EXPECT_NEAR(info::mutual_information(j), hx - (hxy - hy), 1e-12);
    EXPECT_GE(info::mutual_information(j), -1e-12);
  }
}

TEST(Marginals, SinglePromptAndMixture) {
  auto p = ibro::testing::random_policy(5, 3);
  auto single = env_with({{0, 2}}, {2}, 5, 3);
  auto en1 = info::enumerate_policy(p, single);
  auto m1 = info::marginals_and_conditionals(en1, single);
  EXPECT_EQ(m1.pi_r.probs, en1.per_prompt[0].probs);

  auto pair = env_with({{0, 2}, {0, 3}}, {4, 4}, 5, 3);
  auto en2 = info::enumerate_policy(p, pair);
  auto m2 = info::marginals_and_conditionals(en2, pair);
  ASSERT_EQ(m2.pi_r_given_a.size(), 1u);
  for (const auto& r : m2.support) {
    EXPECT_NEAR(m2.pi_r_given_a[0].at(r), 0.5 * en2.per_prompt[0].at(r) + 0.5 * en2.per_prompt[1].at(r), 1e-15);
  }
}

TEST(Marginals, BayesAgainstJointTable) {
  auto env = seeded_env(12, 3, 0.3);
  env.prior = {0.5, 0.3, 0.2};
  auto p = ibro::testing::random_policy(env.vocab_size, 12);
  auto en = info::enumerate_policy(p, env);
  auto m = info::marginals_and_conditionals(en, env);
  EXPECT_NEAR(m.pi_r.total(), 1.0, 1e-9);
  for (std::size_t k = 0; k < m.pi_r_given_a.size(); ++k) {
    EXPECT_NEAR(m.pi_r_given_a[k].total(), 1.0, 1e-9);
    const std::size_t a = m.answer_index[k];
    // Joint p(q, a, r) built directly, then conditioned on a.
    double pa = 0.0;
    for (std::size_t q = 0; q < 3; ++q) pa += env.prior[q] * env.answer_given_prompt[q][a];
    for (const auto& r : m.support) {
      double pra = 0.0;
      for (std::size_t q = 0; q < 3; ++q) {
        pra += env.prior[q] * env.answer_given_prompt[q][a] * en.per_prompt[q].at(r);
      }
      EXPECT_NEAR(m.pi_r_given_a[k].at(r), pra / pa, 1e-12);
    }
  }
}

TEST(Marginals, ZeroMassAnswerIsExcluded) {
  auto env = env_with({{0, 2}, {0, 3}}, {2, 3}, 5, 2);
  env.answers.push_back({4});
  for (auto& row : env.answer_given_prompt) row.push_back(0.0);
  auto m = info::marginals_and_conditionals(info::enumerate_policy(uniform_policy(5), env), env);
  EXPECT_EQ(m.pi_r_given_a.size(), 2u);
  ASSERT_EQ(m.notes.size(), 1u);
}

TEST(Ibro, SinglePromptValue) {
  auto env = env_with({{0, 2}}, {2}, 5, 3);
  auto rep = info::ibro_report(ibro::testing::random_policy(5, 2), env, 2.0);
  EXPECT_NEAR(rep.I_q_r, 0.0, 1e-12);
  EXPECT_NEAR(rep.ibro_value, -2.0 * rep.I_r_a, 1e-12);
  EXPECT_NEAR(rep.H_q_given_a, 0.0, 1e-12);
  EXPECT_NEAR(rep.bound_residual, 0.0, 1e-9);
}

TEST(Ibro, DeterministicDistinctAnswers) {
  auto env = env_with({{0, 2}, {0, 3}}, {2, 3}, 6, 3);
  auto p = deterministic_policy(6);
  for (double beta : {2.0, 4.0}) {
    auto rep = info::ibro_report(p, env, beta);
    EXPECT_NEAR(rep.I_q_r, std::log(2.0), 1e-9);
    EXPECT_NEAR(rep.I_r_a, std::log(2.0), 1e-9);
    EXPECT_NEAR(info::ibro_objective(p, env, beta), (1.0 - beta) * std::log(2.0), 1e-9);
    EXPECT_NEAR(rep.surrogate_value, 0.0, 1e-9);
  }
}

TEST(Ibro, UniformSurrogateClosedForm) {
  auto env = env_with({{0, 2}}, {2}, 3, 2, -1);
  auto s = info::surrogate_objective(uniform_policy(3), env, 2.0);
  EXPECT_NEAR(s.value, 2.0 * std::log(3.0), 1e-12);
  double sum = 0.0;
  for (const auto& e : s.per_token) sum += e.h_q;
  EXPECT_NEAR(sum, 2.0 * std::log(3.0), 1e-12);
}

TEST(Ibro, IdentitiesOnSeededEnvs) {
  for (std::uint64_t seed = 1; seed <= 12; ++seed) {
    auto env = seeded_env(seed, 1 + static_cast<int>(seed % 4), (seed % 3) * 0.2);
    auto p = ibro::testing::random_policy(env.vocab_size, seed);
    auto en = info::enumerate_policy(p, env);
    for (const auto& d : en.per_prompt) EXPECT_NEAR(d.total(), 1.0, 1e-9);
    auto rep = info::ibro_report(en, env, 2.0);
    EXPECT_NEAR(rep.I_q_r, rep.H_r - rep.H_r_given_q, 1e-9);
    EXPECT_NEAR(rep.I_r_a, rep.H_r - rep.H_r_given_a, 1e-9);
    EXPECT_NEAR(rep.ibro_value, (rep.H_r - rep.H_r_given_q) - 2.0 * (rep.H_r - rep.H_r_given_a), 1e-9);
    double chain = 0.0;
    for (const auto& e : rep.per_token) {
      chain += env.prior[e.prompt] * e.h_q;
      EXPECT_LE(e.h_qa, e.h_q + 1e-9);
    }
    EXPECT_NEAR(chain, rep.H_r_given_q, 1e-9);
    for (double beta : {1.0, 2.0, 4.0}) {
      EXPECT_GE(info::verify_theorem1_bound(p, env, beta), -1e-9) << "seed " << seed << " beta " << beta;
    }
  }
}

TEST(Ibro, ResidualEqualsConditionalSlack) {
  // Deterministic answers, several prompts per answer: residual equals
  // beta (H(q|a) - I(q;r|a)), with I(q;r|a) from per-answer joint tables.
  auto env = env_with({{0, 2}, {0, 3}, {0, 4}, {0, 5}}, {2, 2, 3, 3}, 6, 3);
  auto p = ibro::testing::random_policy(6, 44);
  auto en = info::enumerate_policy(p, env);
  auto m = info::marginals_and_conditionals(en, env);
  for (double beta : {1.0, 2.0, 4.0}) {
    auto rep = info::ibro_report(en, env, beta);
    double h_q_a = 0.0, i_qr_a = 0.0;
    for (std::size_t k = 0; k < m.answer_index.size(); ++k) {
      const std::size_t a = m.answer_index[k];
      const double pa = m.answer_prior[k];
      info::JointTable j(env.n_prompts(), m.support.size());
      std::vector<double> q_given_a(env.n_prompts(), 0.0);
      for (std::size_t q = 0; q < env.n_prompts(); ++q) {
        q_given_a[q] = env.prior[q] * env.answer_given_prompt[q][a] / pa;
        for (std::size_t r = 0; r < m.support.size(); ++r) {
          j.at(q, r) = q_given_a[q] * en.per_prompt[q].at(m.support[r]);
        }
      }
      h_q_a += pa * info::entropy(q_given_a);
      i_qr_a += pa * info::mutual_information(j);
    }
    const double slack = beta * (h_q_a - i_qr_a);
    EXPECT_GE(slack, 0.0);
    EXPECT_NEAR(rep.bound_residual, slack, 1e-9);
  }
}

TEST(RangeCheck, ConstructedEndpoints) {
  const std::vector<info::TokenEntropy> table{{0, 0, 0.7, 0.0}, {0, 1, 0.7, 0.7}, {0, 2, 0.0, 0.0}};
  auto rep = info::ib_term_range_check(std::span<const info::TokenEntropy>(table));
  EXPECT_DOUBLE_EQ(rep.entries[0].ell, -0.7);
  EXPECT_DOUBLE_EQ(rep.entries[0].lambda, -1.0);
  EXPECT_DOUBLE_EQ(rep.entries[1].ell, 0.7);
  EXPECT_DOUBLE_EQ(rep.entries[1].lambda, 1.0);
  EXPECT_TRUE(rep.entries[2].skipped);
  EXPECT_EQ(rep.skipped, 1u);
  EXPECT_TRUE(rep.all_in_range);
  EXPECT_THROW(info::ib_term_range_check(std::span<const info::TokenEntropy>(table), 3.0), ibro::ContractError);
  const std::vector<info::TokenEntropy> outside{{0, 0, 0.5, 0.9}};
  EXPECT_FALSE(info::ib_term_range_check(std::span<const info::TokenEntropy>(outside)).all_in_range);
}

TEST(RangeCheck, SeededSweep) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto env = seeded_env(seed, 1 + static_cast<int>(seed % 4), 0.1 * static_cast<double>(seed % 3));
    auto rep = info::ib_term_range_check(ibro::testing::random_policy(env.vocab_size, seed), env);
    EXPECT_TRUE(rep.all_in_range);
    EXPECT_GE(rep.min_lambda, -1.0 - 1e-6);
    EXPECT_LE(rep.max_lambda, 1.0 + 1e-6);
  }
}

TEST(Drift, Diagnostic) {
  auto env = seeded_env(3);
  auto p = ibro::testing::random_policy(env.vocab_size, 3);
  EXPECT_EQ(info::policy_marginal_drift(p, p.clone(), env), 0.0);
  auto other = ibro::testing::random_policy(env.vocab_size, 99, 2.0);
  EXPECT_GT(info::policy_marginal_drift(p, other, env), 1e-3);

  auto stepped = p.clone();
  auto params = stepped.all();
  ibro::rlcore::Adam<double> opt;
  opt.add_group(params, 1e-3);
  const TokenSeq seq{0, 2, 3, 1};
  auto out = model::forward(stepped, std::span<const TokenId>(seq));
  ibro::num::sum(ibro::num::log_softmax(out.logits)).backward();
  opt.step({0});
  const double drift = info::policy_marginal_drift(p, stepped, env);
  EXPECT_GE(drift, 0.0);
  std::printf("one-step drift %.3e\n", drift);
}

TEST(Report, NameValueLines) {
  auto env = seeded_env(5);
  auto rep = info::ibro_report(ibro::testing::random_policy(env.vocab_size, 5), env, 2.0);
  std::stringstream ss;
  rep.write(ss);
  std::string name;
  double value = 0.0;
  std::map<std::string, double> seen;
  std::string line;
  while (std::getline(ss, line)) {
    if (line.rfind("#", 0) == 0) continue;
    std::istringstream ls(line);
    ASSERT_TRUE(static_cast<bool>(ls >> name >> value)) << line;
    seen[name] = value;
  }
  EXPECT_EQ(seen.at("bound_residual"), rep.bound_residual);
  EXPECT_EQ(seen.at("I_q_r"), rep.I_q_r);
  EXPECT_TRUE(seen.count("per_token.q0.t0.H_qa"));
}

TEST(Env, Validation) {
  auto env = seeded_env(1);
  env.prior[0] += 0.1;
  EXPECT_THROW(env.validate(), ibro::InvalidInput);
  info::EnvConfig c;
  c.n_answers = 9;
  EXPECT_THROW(info::make_random_env(c), ibro::ConfigError);
  c = info::EnvConfig{};
  c.vocab_size = 12;
  c.max_response_len = 8;
  EXPECT_THROW(info::make_random_env(c), ibro::SizeError);
}
