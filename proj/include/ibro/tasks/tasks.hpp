#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ibro/error.hpp"
#include "ibro/random.hpp"
#include "ibro/types.hpp"

namespace ibro::tasks {

enum class TaskKind { modular_sum, reverse_copy, parity };

inline std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::modular_sum: return "modular_sum";
    case TaskKind::reverse_copy: return "reverse_copy";
    case TaskKind::parity: return "parity";
  }
  return "?";
}

inline TaskKind parse_task_kind(const std::string& s) {
  if (s == "modular_sum") return TaskKind::modular_sum;
  if (s == "reverse_copy") return TaskKind::reverse_copy;
  if (s == "parity") return TaskKind::parity;
  throw ConfigError("unknown task kind '" + s + "'");
}

// Token layout shared by every task: five special tokens followed by an
// alphabet of symbols. The first ten alphabet symbols double as digits 0-9.
struct Vocab {
  static constexpr TokenId bos = 0;
  static constexpr TokenId eos = 1;
  static constexpr TokenId sep = 2;  // answer separator
  static constexpr TokenId even = 3;
  static constexpr TokenId odd = 4;
  static constexpr TokenId alphabet_start = 5;

  int size = 32;

  int alphabet_size() const { return size - alphabet_start; }
  TokenId symbol(int i) const { return alphabet_start + i; }
  TokenId digit(int d) const { return symbol(d); }
  bool is_symbol(TokenId t) const { return t >= alphabet_start && t < size; }
  int symbol_index(TokenId t) const { return t - alphabet_start; }
};

struct TaskSpec {
  TaskKind kind = TaskKind::modular_sum;
  int min_prompt_symbols = 3;
  int max_prompt_symbols = 6;
  int vocab_size = 32;
  std::uint64_t seed = 0;

  Vocab vocab() const { return Vocab{vocab_size}; }

  // Number of alphabet symbols the prompt draws from.
  int symbols_used() const {
    switch (kind) {
      case TaskKind::modular_sum: return 10;
      case TaskKind::parity: return 2;
      case TaskKind::reverse_copy: return vocab().alphabet_size();
    }
    return 0;
  }

  // Longest answer span in tokens.
  int max_answer_length() const {
    return kind == TaskKind::reverse_copy ? max_prompt_symbols : 1;
  }

  // Prompts are BOS followed by the symbols, so they span 1 + max_prompt_symbols.
  void validate(int max_seq_len, int response_budget) const {
    if (min_prompt_symbols < 1 || max_prompt_symbols < min_prompt_symbols) {
      throw ConfigError("task: invalid prompt length range");
    }
    const int needed = kind == TaskKind::reverse_copy ? 2 : symbols_used();
    if (vocab().alphabet_size() < needed) {
      throw ConfigError("task: vocab of " + std::to_string(vocab_size) + " is too small for " +
                        to_string(kind) + " (needs " +
                        std::to_string(Vocab::alphabet_start + needed) + ")");
    }
    if (1 + max_prompt_symbols + response_budget > max_seq_len) {
      throw ConfigError("task: prompt plus response budget exceeds max_seq_len");
    }
  }
};

struct PromptInstance {
  TokenSeq prompt_tokens;  // BOS x_1 ... x_n
  TokenSeq answer_tokens;
  std::int64_t instance_id = 0;

  bool operator==(const PromptInstance&) const = default;
};

struct RewardOutcome {
  double reward = 0.0;  // base reward plus overlong penalty
  bool correct = false;
  std::optional<TokenSeq> extracted_answer;
  double overlong_penalty = 0.0;
};

// Reference answer for a prompt; prompt_tokens include the leading BOS.
inline TokenSeq answer_for(const TaskSpec& spec, std::span<const TokenId> prompt_tokens) {
  const Vocab vocab = spec.vocab();
  std::vector<int> symbols;
  for (std::size_t i = 1; i < prompt_tokens.size(); ++i) {
    symbols.push_back(vocab.symbol_index(prompt_tokens[i]));
  }
  switch (spec.kind) {
    case TaskKind::modular_sum: {
      int s = 0;
      for (int d : symbols) s += d;
      return {vocab.digit(s % 10)};
    }
    case TaskKind::parity: {
      const auto ones = std::count(symbols.begin(), symbols.end(), 1);
      return {ones % 2 ? Vocab::odd : Vocab::even};
    }
    case TaskKind::reverse_copy: {
      TokenSeq out(prompt_tokens.begin() + 1, prompt_tokens.end());
      std::reverse(out.begin(), out.end());
      return out;
    }
  }
  return {};
}

// Deterministic in spec.seed; instances are unique by prompt.
inline std::vector<PromptInstance> generate_dataset(const TaskSpec& spec, int m) {
  if (m < 1) throw ConfigError("generate_dataset: m must be at least 1");
  const int needed = spec.kind == TaskKind::reverse_copy ? 2 : spec.symbols_used();
  if (spec.vocab().alphabet_size() < needed) {
    throw ConfigError("generate_dataset: vocab too small for " + to_string(spec.kind));
  }
  if (spec.min_prompt_symbols < 1 || spec.max_prompt_symbols < spec.min_prompt_symbols) {
    throw ConfigError("generate_dataset: invalid prompt length range");
  }
  const int alphabet = spec.symbols_used();
  double space = 0.0;
  for (int n = spec.min_prompt_symbols; n <= spec.max_prompt_symbols; ++n) {
    space += std::pow(static_cast<double>(alphabet), n);
  }
  if (static_cast<double>(m) > space) {
    throw ConfigError("generate_dataset: only " + std::to_string(static_cast<long long>(space)) +
                      " distinct prompts exist");
  }
  const Vocab vocab = spec.vocab();
  Rng rng(derive_seed(spec.seed, {0x7a5c}));
  std::set<TokenSeq> seen;
  std::vector<PromptInstance> out;
  out.reserve(static_cast<std::size_t>(m));
  const auto span_len = static_cast<std::uint64_t>(spec.max_prompt_symbols - spec.min_prompt_symbols + 1);
  while (static_cast<int>(out.size()) < m) {
    const int n = spec.min_prompt_symbols + static_cast<int>(rng() % span_len);
    TokenSeq prompt{Vocab::bos};
    for (int i = 0; i < n; ++i) {
      prompt.push_back(vocab.symbol(static_cast<int>(rng() % static_cast<std::uint64_t>(alphabet))));
    }
    if (!seen.insert(prompt).second) continue;
    PromptInstance inst;
    inst.answer_tokens = answer_for(spec, prompt);
    inst.prompt_tokens = std::move(prompt);
    inst.instance_id = static_cast<std::int64_t>(out.size());
    out.push_back(std::move(inst));
  }
  return out;
}

// The canonical well-formed response for an answer: SEP answer EOS.
inline TokenSeq format_answer(std::span<const TokenId> answer) {
  TokenSeq out{Vocab::sep};
  out.insert(out.end(), answer.begin(), answer.end());
  out.push_back(Vocab::eos);
  return out;
}

// Soft length penalty: 0 up to max_len - buffer, then a linear ramp reaching
// -max_penalty at max_len.
inline double overlong_penalty(int response_len, int max_len, int buffer, double max_penalty) {
  if (buffer <= 0 || buffer > max_len) throw ContractError("overlong_penalty: need 0 < buffer <= max_len");
  if (max_penalty < 0) throw ContractError("overlong_penalty: max_penalty must be non-negative");
  const int start = max_len - buffer;
  if (response_len <= start) return 0.0;
  if (response_len >= max_len) return -max_penalty;
  return -max_penalty * static_cast<double>(response_len - start) / static_cast<double>(buffer);
}

struct OverlongShaping {
  int max_len = 16;
  int buffer = 4;
  double penalty = 1.0;
};

// Rule-based check. The answer is the span after the last separator that
// precedes the first EOS; it must equal the reference exactly. A response
// without EOS or without a separator before it is incorrect. Anything may
// precede the separator.
inline RewardOutcome verify(std::span<const TokenId> response, const PromptInstance& instance,
                            const std::optional<OverlongShaping>& shaping = std::nullopt) {
  RewardOutcome out;
  const auto eos = std::find(response.begin(), response.end(), Vocab::eos);
  if (eos != response.end()) {
    const auto rsep = std::find(std::make_reverse_iterator(eos), response.rend(), Vocab::sep);
    if (rsep != response.rend()) {
      const auto start = rsep.base();  // one past the separator
      out.extracted_answer = TokenSeq(start, eos);
      out.correct = *out.extracted_answer == instance.answer_tokens;
    }
  }
  if (shaping) {
    out.overlong_penalty = overlong_penalty(static_cast<int>(response.size()), shaping->max_len,
                                            shaping->buffer, shaping->penalty);
  }
  out.reward = (out.correct ? 1.0 : 0.0) + out.overlong_penalty;
  return out;
}

// Line format: instance_id <TAB> prompt ids <TAB> answer ids, ids decimal and
// space-separated.
inline void write_dataset(std::ostream& os, std::span<const PromptInstance> instances) {
  auto join = [&os](const TokenSeq& seq) {
    for (std::size_t i = 0; i < seq.size(); ++i) os << (i ? " " : "") << seq[i];
  };
  for (const auto& inst : instances) {
    os << inst.instance_id << '\t';
    join(inst.prompt_tokens);
    os << '\t';
    join(inst.answer_tokens);
    os << '\n';
  }
}

inline std::vector<PromptInstance> read_dataset(std::istream& is) {
  std::vector<PromptInstance> out;
  std::string line;
  int line_no = 0;
  auto parse_ids = [&line_no](const std::string& field) {
    TokenSeq ids;
    std::istringstream ss(field);
    long long v;
    while (ss >> v) ids.push_back(static_cast<TokenId>(v));
    if (!ss.eof()) throw FormatError("dataset: bad token id on line " + std::to_string(line_no));
    return ids;
  };
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) {
      throw FormatError("dataset: expected 3 tab-separated fields on line " + std::to_string(line_no));
    }
    PromptInstance inst;
    try {
      inst.instance_id = std::stoll(line.substr(0, t1));
    } catch (const std::exception&) {
      throw FormatError("dataset: bad instance id on line " + std::to_string(line_no));
    }
    inst.prompt_tokens = parse_ids(line.substr(t1 + 1, t2 - t1 - 1));
    inst.answer_tokens = parse_ids(line.substr(t2 + 1));
    if (inst.prompt_tokens.empty()) throw FormatError("dataset: empty prompt on line " + std::to_string(line_no));
    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace ibro::tasks
