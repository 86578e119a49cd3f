#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "ibro/infotheory/enumerate.hpp"
#include "ibro/infotheory/env.hpp"
#include "ibro/infotheory/measures.hpp"

namespace ibro::info {

struct Marginals {
  std::vector<TokenSeq> support;  // every response with mass under some prompt, sorted
  SequenceDistribution pi_r;      // pi(r) = sum_q p(q) pi(r|q)
  // pi(r|a) = sum_q p(q|a) pi(r|q) for every answer with p(a) > 0.
  std::vector<SequenceDistribution> pi_r_given_a;
  std::vector<std::size_t> answer_index;  // env answer behind each pi_r_given_a entry
  std::vector<double> answer_prior;       // p(a) for the same answers
  JointTable joint_qr;                    // [q][r]
  JointTable joint_ra;                    // [r][a], included answers only
  JointTable joint_qa;                    // [q][a], included answers only
  std::vector<std::string> notes;
};

inline Marginals marginals_and_conditionals(const PolicyEnumeration& en, const EnumerableEnv& env) {
  env.validate();
  if (en.per_prompt.size() != env.n_prompts()) throw InvalidInput("marginals: enumeration does not match env");
  Marginals m;
  for (const auto& d : en.per_prompt) {
    if (std::abs(d.total() - 1.0) > kNormTolerance) throw InvalidInput("marginals: pi(r|q) is not normalized");
    for (const auto& [r, p] : d.probs) m.support.push_back(r);
  }
  std::sort(m.support.begin(), m.support.end());
  m.support.erase(std::unique(m.support.begin(), m.support.end()), m.support.end());
  const std::size_t nq = env.n_prompts();
  const std::size_t nr = m.support.size();

  for (std::size_t a = 0; a < env.n_answers(); ++a) {
    double pa = 0.0;
    for (std::size_t q = 0; q < nq; ++q) pa += env.prior[q] * env.answer_given_prompt[q][a];
    if (pa > 0.0) {
      m.answer_index.push_back(a);
      m.answer_prior.push_back(pa);
    } else {
      m.notes.push_back("answer " + std::to_string(a) + " has zero marginal probability and is excluded");
    }
  }
  const std::size_t na = m.answer_index.size();

  m.joint_qr = JointTable(nq, nr);
  m.joint_ra = JointTable(nr, na);
  m.joint_qa = JointTable(nq, na);
  m.pi_r.context = Context::none;
  for (std::size_t q = 0; q < nq; ++q) {
    for (std::size_t k = 0; k < na; ++k) {
      m.joint_qa.at(q, k) = env.prior[q] * env.answer_given_prompt[q][m.answer_index[k]];
    }
    for (std::size_t ri = 0; ri < nr; ++ri) {
      const double pr = en.per_prompt[q].at(m.support[ri]);
      m.joint_qr.at(q, ri) = env.prior[q] * pr;
      for (std::size_t k = 0; k < na; ++k) m.joint_ra.at(ri, k) += m.joint_qa.at(q, k) * pr;
    }
  }
  for (std::size_t ri = 0; ri < nr; ++ri) {
    double s = 0.0;
    for (std::size_t q = 0; q < nq; ++q) s += m.joint_qr.at(q, ri);
    if (s > 0.0) m.pi_r.probs[m.support[ri]] = s;
  }
  for (std::size_t k = 0; k < na; ++k) {
    SequenceDistribution d;
    d.context = Context::a;
    for (std::size_t ri = 0; ri < nr; ++ri) {
      const double p = m.joint_ra.at(ri, k) / m.answer_prior[k];
      if (p > 0.0) d.probs[m.support[ri]] = p;
    }
    m.pi_r_given_a.push_back(std::move(d));
  }
  return m;
}

struct TokenEntropy {
  std::size_t prompt = 0;
  std::size_t t = 0;
  double h_q = 0.0;   // H(o_t | o_<t, q)
  double h_qa = 0.0;  // H(o_t | o_<t, q, a), averaged over p(a|q)
};

// Exact information quantities for one policy on one environment.
struct IbroReport {
  double beta = 2.0;
  double H_r = 0.0;
  double H_r_given_q = 0.0;
  double H_r_given_a = 0.0;
  double H_r_given_qa = 0.0;
  double H_q_given_a = 0.0;
  double I_q_r = 0.0;
  double I_r_a = 0.0;
  std::vector<TokenEntropy> per_token;
  double ibro_value = 0.0;       // I(q;r) - beta I(r;a)
  double surrogate_value = 0.0;  // sum_t E[beta H(o_t|o_<t,q,a) - H(o_t|o_<t,q)]
  double bound_residual = 0.0;
  std::vector<std::string> notes;

  // One `name value` record per line; notes follow as '#' comments.
  void write(std::ostream& os) const {
    auto put = [&os](const std::string& name, double v) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.17g", v);
      os << name << ' ' << buf << '\n';
    };
    put("beta", beta);
    put("H_r", H_r);
    put("H_r_given_q", H_r_given_q);
    put("H_r_given_a", H_r_given_a);
    put("H_r_given_qa", H_r_given_qa);
    put("H_q_given_a", H_q_given_a);
    put("I_q_r", I_q_r);
    put("I_r_a", I_r_a);
    put("ibro_value", ibro_value);
    put("surrogate_value", surrogate_value);
    put("bound_residual", bound_residual);
    for (const auto& e : per_token) {
      const std::string key = "per_token.q" + std::to_string(e.prompt) + ".t" + std::to_string(e.t);
      put(key + ".H_q", e.h_q);
      put(key + ".H_qa", e.h_qa);
    }
    for (const auto& n : notes) os << "# " << n << '\n';
  }
};

// Per-(q, t) conditional entropies. Under the Markov chain a - q - r the
// answer carries no information about r beyond q, so the (q, a) table is the
// q table averaged over p(a|q).
inline std::vector<TokenEntropy> per_token_entropies(const PolicyEnumeration& en, const EnumerableEnv& env) {
  std::vector<TokenEntropy> out;
  for (std::size_t q = 0; q < env.n_prompts(); ++q) {
    for (std::size_t t = 0; t < en.token_entropy[q].size(); ++t) {
      TokenEntropy e;
      e.prompt = q;
      e.t = t;
      e.h_q = en.token_entropy[q][t];
      for (std::size_t a = 0; a < env.n_answers(); ++a) {
        e.h_qa += env.answer_given_prompt[q][a] * en.token_entropy[q][t];
      }
      out.push_back(e);
    }
  }
  return out;
}

inline IbroReport ibro_report(const PolicyEnumeration& en, const EnumerableEnv& env, double beta) {
  if (!(beta > 0.0)) throw ContractError("ibro: beta must be positive");
  const auto m = marginals_and_conditionals(en, env);
  IbroReport rep;
  rep.beta = beta;
  rep.notes = m.notes;
  rep.H_r = m.pi_r.entropy();
  for (std::size_t q = 0; q < env.n_prompts(); ++q) {
    const double h = en.per_prompt[q].entropy();
    rep.H_r_given_q += env.prior[q] * h;
    for (std::size_t a = 0; a < env.n_answers(); ++a) {
      rep.H_r_given_qa += env.prior[q] * env.answer_given_prompt[q][a] * h;
    }
  }
  for (std::size_t k = 0; k < m.pi_r_given_a.size(); ++k) {
    rep.H_r_given_a += m.answer_prior[k] * m.pi_r_given_a[k].entropy();
  }
  // H(q|a) with a on the rows.
  JointTable aq(m.joint_qa.cols, m.joint_qa.rows);
  for (std::size_t q = 0; q < aq.cols; ++q) {
    for (std::size_t k = 0; k < aq.rows; ++k) aq.at(k, q) = m.joint_qa.at(q, k);
  }
  rep.H_q_given_a = conditional_entropy_of_cols(aq);
  rep.I_q_r = mutual_information(m.joint_qr);
  rep.I_r_a = mutual_information(m.joint_ra);
  rep.ibro_value = rep.I_q_r - beta * rep.I_r_a;
  rep.per_token = per_token_entropies(en, env);
  for (const auto& e : rep.per_token) {
    rep.surrogate_value += env.prior[e.prompt] * (beta * e.h_qa - e.h_q);
  }
  rep.bound_residual =
      (1.0 - beta) * rep.H_r + beta * rep.H_q_given_a + rep.surrogate_value - rep.ibro_value;
  return rep;
}

template <class T>
IbroReport ibro_report(const model::PolicyParams<T>& params, const EnumerableEnv& env, double beta) {
  return ibro_report(enumerate_policy(params, env), env, beta);
}

// I(q;r) - beta I(r;a).
template <class T>
double ibro_objective(const model::PolicyParams<T>& params, const EnumerableEnv& env, double beta) {
  return ibro_report(params, env, beta).ibro_value;
}

struct Surrogate {
  double value = 0.0;
  std::vector<TokenEntropy> per_token;
};

template <class T>
Surrogate surrogate_objective(const model::PolicyParams<T>& params, const EnumerableEnv& env, double beta) {
  const auto rep = ibro_report(params, env, beta);
  return {rep.surrogate_value, rep.per_token};
}

// [(1 - beta) H(r) + beta H(q|a) + surrogate] - IBRO, non-negative when the
// upper bound holds.
template <class T>
double verify_theorem1_bound(const model::PolicyParams<T>& params, const EnumerableEnv& env, double beta) {
  if (beta < 1.0) throw ContractError("verify_theorem1_bound: beta must be at least 1");
  return ibro_report(params, env, beta).bound_residual;
}

struct LambdaEntry {
  std::size_t prompt = 0;
  std::size_t t = 0;
  double h_t = 0.0;
  double h_qa = 0.0;
  double ell = 0.0;     // 2 H(o_t|o_<t,q,a) - H(o_t|o_<t,q)
  double lambda = 0.0;  // ell / H_t
  bool skipped = false;
  bool in_range = true;
};

struct RangeReport {
  std::vector<LambdaEntry> entries;
  std::size_t skipped = 0;
  bool all_in_range = true;
  double min_lambda = 0.0;
  double max_lambda = 0.0;
  std::vector<std::string> notes;
};

inline constexpr double kEntropyFloor = 1e-9;
inline constexpr double kLambdaSlack = 1e-6;

// Checks that the per-token IB term lies in [-H_t, H_t] and lambda_t in [-1, 1].
inline RangeReport ib_term_range_check(std::span<const TokenEntropy> table, double beta = 2.0) {
  if (beta != 2.0) throw ContractError("ib_term_range_check: requires beta = 2");
  RangeReport rep;
  bool first = true;
  for (const auto& e : table) {
    LambdaEntry le;
    le.prompt = e.prompt;
    le.t = e.t;
    le.h_t = e.h_q;
    le.h_qa = e.h_qa;
    le.ell = beta * e.h_qa - e.h_q;
    if (e.h_q <= kEntropyFloor) {
      le.skipped = true;
      ++rep.skipped;
      rep.notes.push_back("q" + std::to_string(e.prompt) + " t" + std::to_string(e.t) +
                          ": H_t below 1e-9, skipped");
      rep.entries.push_back(le);
      continue;
    }
    le.lambda = le.ell / e.h_q;
    le.in_range = le.ell >= -e.h_q - kEntropyFloor && le.ell <= e.h_q + kEntropyFloor &&
                  le.lambda >= -1.0 - kLambdaSlack && le.lambda <= 1.0 + kLambdaSlack;
    rep.all_in_range = rep.all_in_range && le.in_range;
    rep.min_lambda = first ? le.lambda : std::min(rep.min_lambda, le.lambda);
    rep.max_lambda = first ? le.lambda : std::max(rep.max_lambda, le.lambda);
    first = false;
    rep.entries.push_back(le);
  }
  return rep;
}

template <class T>
RangeReport ib_term_range_check(const model::PolicyParams<T>& params, const EnumerableEnv& env,
                                double beta = 2.0) {
  const auto table = per_token_entropies(enumerate_policy(params, env), env);
  return ib_term_range_check(std::span<const TokenEntropy>(table), beta);
}

// |H(r)_after - H(r)_before|; a diagnostic for the invariance of pi(r).
template <class T>
double policy_marginal_drift(const model::PolicyParams<T>& before, const model::PolicyParams<T>& after,
                             const EnumerableEnv& env) {
  auto h = [&env](const model::PolicyParams<T>& p) {
    return marginals_and_conditionals(enumerate_policy(p, env), env).pi_r.entropy();
  };
  return std::abs(h(after) - h(before));
}

}  // namespace ibro::info
