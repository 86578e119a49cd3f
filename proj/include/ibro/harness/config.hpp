#pragma once

#include <cstdint>
#include <optional>
#include <sstream>
#include <string>

#include "ibro/error.hpp"
#include "ibro/kvconfig.hpp"
#include "ibro/model/transformer.hpp"
#include "ibro/rlcore/losses.hpp"
#include "ibro/tasks/tasks.hpp"

namespace ibro::harness {

enum class Algorithm { ppo, grpo_dapo };

inline std::string to_string(Algorithm a) { return a == Algorithm::ppo ? "ppo" : "grpo_dapo"; }

inline Algorithm parse_algorithm(const std::string& s) {
  if (s == "ppo") return Algorithm::ppo;
  if (s == "grpo_dapo" || s == "grpo" || s == "dapo") return Algorithm::grpo_dapo;
  throw ConfigError("unknown algorithm '" + s + "'");
}

struct TrainSettings {
  int group_size = 8;
  int batch_size = 0;  // prompts (ppo) or groups (grpo_dapo); 0 picks 64 / 16
  int mini_batch_size = 16;
  int oversample = 3;  // generation rounds allowed to refill a filtered batch
  double temperature = 1.0;
  double top_p = 1.0;
  int max_new_tokens = 16;
  double gamma = 1.0;
  double lam = 1.0;
  double actor_lr = 3e-4;
  double critic_lr = 1e-3;
  int lr_warmup = 10;
  int critic_warmup = 5;
  double grad_clip = 1.0;
  bool dynamic_sampling = true;
  bool overlong = true;
  int overlong_buffer = 4;
  double overlong_penalty = 1.0;
  int total_steps = 3000;
  int epochs = 1;
  double value_coeff = 0.5;
  double value_clip = 0.0;  // 0 disables the clipped value loss
  bool whiten_advantages = false;
};

struct EvalSettings {
  int every = 100;
  int k = 32;
  double temperature = 1.0;
  double top_p = 0.7;
  double stop_at = 0.0;  // stop once avg@k reaches this (0 never stops)
};

struct ExperimentConfig {
  Algorithm algorithm = Algorithm::grpo_dapo;
  std::uint64_t seed = 0;
  model::ModelConfig model;
  tasks::TaskSpec task;
  int train_size = 2000;
  int eval_size = 64;
  rlcore::ClipConfig clip;
  rlcore::RegularizerMode reg;
  TrainSettings train;
  EvalSettings eval;
  // Coefficients the comparison uses for each regularizer mode.
  double compare_alpha_naive = 0.001;
  double compare_alpha_ib = 0.005;

  int batch_size() const {
    if (train.batch_size > 0) return train.batch_size;
    return algorithm == Algorithm::ppo ? 64 : 16;
  }

  std::optional<tasks::OverlongShaping> shaping() const {
    if (!train.overlong) return std::nullopt;
    return tasks::OverlongShaping{train.max_new_tokens, train.overlong_buffer, train.overlong_penalty};
  }

  void validate() const {
    model.validate();
    if (model.has_value_head != (algorithm == Algorithm::ppo)) {
      throw ConfigError("config: the value head is required for ppo and unused otherwise");
    }
    if (task.vocab_size != model.vocab_size) throw ConfigError("config: task and model vocab sizes differ");
    task.validate(model.max_seq_len, train.max_new_tokens);
    clip.validate();
    if (reg.alpha < 0) throw ConfigError("config: reg.alpha must be non-negative");
    if (algorithm == Algorithm::grpo_dapo && train.group_size < 2) {
      throw ConfigError("config: train.group_size must be at least 2");
    }
    const int b = batch_size();
    if (train.mini_batch_size < 1 || b % train.mini_batch_size != 0) {
      throw ConfigError("config: train.mini_batch_size must divide the batch size");
    }
    if (train.oversample < 1) throw ConfigError("config: train.oversample must be at least 1");
    if (train.max_new_tokens < 1) throw ConfigError("config: train.max_new_tokens must be at least 1");
    if (!(train.temperature > 0) || !(train.top_p > 0) || train.top_p > 1) {
      throw ConfigError("config: invalid train sampling settings");
    }
    if (!(eval.temperature > 0) || !(eval.top_p > 0) || eval.top_p > 1) {
      throw ConfigError("config: invalid eval sampling settings");
    }
    if (train.gamma < 0 || train.gamma > 1 || train.lam < 0 || train.lam > 1) {
      throw ConfigError("config: train.gamma and train.lam must lie in [0, 1]");
    }
    if (train.overlong && (train.overlong_buffer < 1 || train.overlong_buffer > train.max_new_tokens ||
                           train.overlong_penalty < 0)) {
      throw ConfigError("config: invalid overlong buffer settings");
    }
    if (train.total_steps < 1 || train.epochs < 1) throw ConfigError("config: steps and epochs must be positive");
    if (train.actor_lr < 0 || train.critic_lr < 0 || train.lr_warmup < 0 || train.critic_warmup < 0) {
      throw ConfigError("config: learning rates and warmups must be non-negative");
    }
    if (eval.k < 1) throw ConfigError("config: eval.k must be at least 1");
    if (eval.every < 1) throw ConfigError("config: eval.every must be at least 1");
    if (train_size < batch_size() || eval_size < 1) throw ConfigError("config: dataset sizes too small");
  }

  // Reads every known key; unknown keys raise a ConfigError.
  static ExperimentConfig from_kv(KeyValues& kv) {
    ExperimentConfig c;
    c.algorithm = parse_algorithm(kv.get("algorithm", std::string("grpo_dapo")));
    c.seed = kv.get("seed", c.seed);
    auto& m = c.model;
    m.vocab_size = kv.get("model.vocab_size", m.vocab_size);
    m.d_model = kv.get("model.d_model", m.d_model);
    m.n_layers = kv.get("model.n_layers", m.n_layers);
    m.n_heads = kv.get("model.n_heads", m.n_heads);
    m.max_seq_len = kv.get("model.max_seq_len", m.max_seq_len);
    m.has_value_head = c.algorithm == Algorithm::ppo;
    auto& t = c.task;
    t.kind = tasks::parse_task_kind(kv.get("task.kind", std::string("modular_sum")));
    t.min_prompt_symbols = kv.get("task.min_symbols", t.min_prompt_symbols);
    t.max_prompt_symbols = kv.get("task.max_symbols", t.max_prompt_symbols);
    t.seed = kv.get("task.seed", t.seed);
    t.vocab_size = m.vocab_size;
    c.train_size = kv.get("task.train_size", c.train_size);
    c.eval_size = kv.get("task.eval_size", c.eval_size);
    c.clip.eps_low = kv.get("clip.low", c.clip.eps_low);
    c.clip.eps_high = kv.get("clip.high", c.clip.eps_high);
    c.reg.kind = rlcore::parse_regularizer_kind(kv.get("reg.kind", std::string("none")));
    c.reg.alpha = kv.get("reg.alpha", c.reg.alpha);
    c.reg.eta = kv.get("reg.eta", c.reg.eta);
    c.reg.clip_advantage_to_unit = kv.get("reg.clip_advantage", c.reg.clip_advantage_to_unit);
    auto& tr = c.train;
    tr.group_size = kv.get("train.group_size", tr.group_size);
    tr.batch_size = kv.get("train.batch_size", tr.batch_size);
    tr.mini_batch_size = kv.get("train.mini_batch_size", tr.mini_batch_size);
    tr.oversample = kv.get("train.oversample", tr.oversample);
    tr.temperature = kv.get("train.temperature", tr.temperature);
    tr.top_p = kv.get("train.top_p", tr.top_p);
    tr.max_new_tokens = kv.get("train.max_new_tokens", tr.max_new_tokens);
    tr.gamma = kv.get("train.gamma", tr.gamma);
    tr.lam = kv.get("train.lam", tr.lam);
    tr.actor_lr = kv.get("train.actor_lr", tr.actor_lr);
    tr.critic_lr = kv.get("train.critic_lr", tr.critic_lr);
    tr.lr_warmup = kv.get("train.lr_warmup", tr.lr_warmup);
    tr.critic_warmup = kv.get("train.critic_warmup", tr.critic_warmup);
    tr.grad_clip = kv.get("train.grad_clip", tr.grad_clip);
    tr.dynamic_sampling = kv.get("train.dynamic_sampling", tr.dynamic_sampling);
    tr.overlong = kv.get("train.overlong", tr.overlong);
    tr.overlong_buffer = kv.get("train.overlong_buffer", tr.overlong_buffer);
    tr.overlong_penalty = kv.get("train.overlong_penalty", tr.overlong_penalty);
    tr.total_steps = kv.get("train.total_steps", tr.total_steps);
    tr.epochs = kv.get("train.epochs", tr.epochs);
    tr.value_coeff = kv.get("train.value_coeff", tr.value_coeff);
    tr.value_clip = kv.get("train.value_clip", tr.value_clip);
    tr.whiten_advantages = kv.get("train.whiten_advantages", tr.whiten_advantages);
    auto& ev = c.eval;
    ev.every = kv.get("eval.every", ev.every);
    ev.k = kv.get("eval.k", ev.k);
    ev.temperature = kv.get("eval.temperature", ev.temperature);
    ev.top_p = kv.get("eval.top_p", ev.top_p);
    ev.stop_at = kv.get("eval.stop_at", ev.stop_at);
    c.compare_alpha_naive = kv.get("compare.alpha_naive", c.compare_alpha_naive);
    c.compare_alpha_ib = kv.get("compare.alpha_ib", c.compare_alpha_ib);
    kv.finish();
    c.model.seed = c.seed;
    c.validate();
    return c;
  }

  static ExperimentConfig from_text(const std::string& text) {
    std::istringstream is(text);
    auto kv = KeyValues::parse(is);
    return from_kv(kv);
  }

  // The resolved configuration in the same key = value format.
  std::string to_text() const {
    std::ostringstream os;
    os.precision(17);
    os << "algorithm = " << to_string(algorithm) << '\n'
       << "seed = " << seed << '\n'
       << "model.vocab_size = " << model.vocab_size << '\n'
       << "model.d_model = " << model.d_model << '\n'
       << "model.n_layers = " << model.n_layers << '\n'
       << "model.n_heads = " << model.n_heads << '\n'
       << "model.max_seq_len = " << model.max_seq_len << '\n'
       << "task.kind = " << tasks::to_string(task.kind) << '\n'
       << "task.min_symbols = " << task.min_prompt_symbols << '\n'
       << "task.max_symbols = " << task.max_prompt_symbols << '\n'
       << "task.seed = " << task.seed << '\n'
       << "task.train_size = " << train_size << '\n'
       << "task.eval_size = " << eval_size << '\n'
       << "clip.low = " << clip.eps_low << '\n'
       << "clip.high = " << clip.eps_high << '\n'
       << "reg.kind = " << rlcore::to_string(reg.kind) << '\n'
       << "reg.alpha = " << reg.alpha << '\n'
       << "reg.eta = " << reg.eta << '\n'
       << "reg.clip_advantage = " << (reg.clip_advantage_to_unit ? "true" : "false") << '\n'
       << "train.group_size = " << train.group_size << '\n'
       << "train.batch_size = " << batch_size() << '\n'
       << "train.mini_batch_size = " << train.mini_batch_size << '\n'
       << "train.oversample = " << train.oversample << '\n'
       << "train.temperature = " << train.temperature << '\n'
       << "train.top_p = " << train.top_p << '\n'
       << "train.max_new_tokens = " << train.max_new_tokens << '\n'
       << "train.gamma = " << train.gamma << '\n'
       << "train.lam = " << train.lam << '\n'
       << "train.actor_lr = " << train.actor_lr << '\n'
       << "train.critic_lr = " << train.critic_lr << '\n'
       << "train.lr_warmup = " << train.lr_warmup << '\n'
       << "train.critic_warmup = " << train.critic_warmup << '\n'
       << "train.grad_clip = " << train.grad_clip << '\n'
       << "train.dynamic_sampling = " << (train.dynamic_sampling ? "true" : "false") << '\n'
       << "train.overlong = " << (train.overlong ? "true" : "false") << '\n'
       << "train.overlong_buffer = " << train.overlong_buffer << '\n'
       << "train.overlong_penalty = " << train.overlong_penalty << '\n'
       << "train.total_steps = " << train.total_steps << '\n'
       << "train.epochs = " << train.epochs << '\n'
       << "train.value_coeff = " << train.value_coeff << '\n'
       << "train.value_clip = " << train.value_clip << '\n'
       << "train.whiten_advantages = " << (train.whiten_advantages ? "true" : "false") << '\n'
       << "eval.every = " << eval.every << '\n'
       << "eval.k = " << eval.k << '\n'
       << "eval.temperature = " << eval.temperature << '\n'
       << "eval.top_p = " << eval.top_p << '\n'
       << "eval.stop_at = " << eval.stop_at << '\n'
       << "compare.alpha_naive = " << compare_alpha_naive << '\n'
       << "compare.alpha_ib = " << compare_alpha_ib << '\n';
    return os.str();
  }
};

}  // namespace ibro::harness
