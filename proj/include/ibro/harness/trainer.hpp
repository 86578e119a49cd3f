#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ibro/error.hpp"
#include "ibro/harness/batch.hpp"
#include "ibro/harness/config.hpp"
#include "ibro/harness/metrics.hpp"
#include "ibro/model/checkpoint.hpp"
#include "ibro/model/transformer.hpp"
#include "ibro/random.hpp"
#include "ibro/rlcore/adam.hpp"
#include "ibro/rlcore/advantages.hpp"
#include "ibro/rollout/rollout.hpp"
#include "ibro/tasks/tasks.hpp"
#include "json.hpp"

namespace ibro::harness {

namespace fs = std::filesystem;

struct EvalStats {
  double avg_at_k = 0.0;
  double mean_token_entropy = 0.0;
  double mean_response_length = 0.0;
};

// avg@k plus the entropy and length of the sampled responses.
template <class T>
EvalStats evaluate(const model::PolicyParams<T>& params, std::span<const tasks::PromptInstance> dataset, int k,
                   const model::SamplingConfig& sampling, std::uint64_t seed) {
  if (dataset.empty()) throw InvalidInput("evaluate: empty dataset");
  if (k < 1) throw ContractError("evaluate: k must be at least 1");
  std::vector<tasks::PromptInstance> repeated;
  for (const auto& inst : dataset) repeated.insert(repeated.end(), static_cast<std::size_t>(k), inst);
  const auto trajs = rollout::rollout(params, std::span<const tasks::PromptInstance>(repeated), sampling, seed);
  EvalStats s;
  double ent = 0.0, len = 0.0;
  std::size_t tokens = 0;
  for (std::size_t p = 0; p < dataset.size(); ++p) {
    int correct = 0;
    for (int j = 0; j < k; ++j) {
      const auto& tr = trajs[p * static_cast<std::size_t>(k) + static_cast<std::size_t>(j)];
      correct += tasks::verify(tr.response_tokens, dataset[p]).correct ? 1 : 0;
      for (double h : tr.token_entropy) ent += h;
      tokens += tr.token_entropy.size();
      len += static_cast<double>(tr.length());
    }
    s.avg_at_k += static_cast<double>(correct) / k;
  }
  s.avg_at_k /= static_cast<double>(dataset.size());
  s.mean_token_entropy = tokens ? ent / static_cast<double>(tokens) : 0.0;
  s.mean_response_length = len / static_cast<double>(trajs.size());
  return s;
}

struct Datasets {
  std::vector<tasks::PromptInstance> train, eval;
};

// One pool of unique prompts split into disjoint train and eval sets.
inline Datasets make_datasets(const ExperimentConfig& cfg) {
  auto all = tasks::generate_dataset(cfg.task, cfg.train_size + cfg.eval_size);
  Datasets d;
  d.train.assign(all.begin(), all.begin() + cfg.train_size);
  d.eval.assign(all.begin() + cfg.train_size, all.end());
  for (std::size_t i = 0; i < d.eval.size(); ++i) d.eval[i].instance_id = static_cast<std::int64_t>(i);
  return d;
}

struct StepResult {
  MetricsRecord record;
  bool optimized = false;  // false when no group survived filtering
};

// Training state for one run. Everything random is drawn from substreams of
// config.seed, so a run is a pure function of its configuration.
template <class T>
class Trainer {
 public:
  explicit Trainer(ExperimentConfig cfg)
      : cfg_(std::move(cfg)),
        data_(make_datasets(cfg_)),
        params_(model::init<T>(cfg_.model)),
        adam_(rlcore::AdamConfig{0.9, 0.999, 1e-8, cfg_.train.lr_warmup, cfg_.train.grad_clip}) {
    cfg_.validate();
    actor_group_ = adam_.add_group(params_.actor(), cfg_.train.actor_lr);
    if (cfg_.algorithm == Algorithm::ppo) {
      critic_group_ = adam_.add_group(params_.value_head(), cfg_.train.critic_lr);
    }
  }

  const ExperimentConfig& config() const { return cfg_; }
  const Datasets& datasets() const { return data_; }
  model::PolicyParams<T>& params() { return params_; }
  const model::PolicyParams<T>& params() const { return params_; }
  long steps_done() const { return step_; }
  // Groups (or single-trajectory batches for ppo) that entered the last update.
  const std::vector<rollout::RolloutGroup>& last_update_groups() const { return last_groups_; }
  // Written when a non-finite loss aborts the run.
  void set_dump_path(std::string path) { dump_path_ = std::move(path); }

  model::SamplingConfig train_sampling() const {
    return {cfg_.train.temperature, cfg_.train.top_p, cfg_.train.max_new_tokens};
  }
  model::SamplingConfig eval_sampling() const {
    return {cfg_.eval.temperature, cfg_.eval.top_p, cfg_.train.max_new_tokens};
  }

  // The same eval substream at every evaluation point.
  EvalStats evaluate_now() const {
    return evaluate(params_, std::span<const tasks::PromptInstance>(data_.eval), cfg_.eval.k, eval_sampling(),
                    derive_seed(cfg_.seed, {0xe7a1}));
  }

  StepResult step() {
    ++step_;
    return cfg_.algorithm == Algorithm::ppo ? ppo_step() : grpo_step();
  }

 private:
  std::vector<tasks::PromptInstance> sample_prompts(int n, std::uint64_t round) const {
    Rng rng(derive_seed(cfg_.seed, {0x5a, static_cast<std::uint64_t>(step_), round}));
    std::vector<std::size_t> idx(data_.train.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::vector<tasks::PromptInstance> out;
    for (int i = 0; i < n; ++i) {
      const auto left = idx.size() - static_cast<std::size_t>(i);
      const auto j = static_cast<std::size_t>(i) + static_cast<std::size_t>(rng() % left);
      std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
      out.push_back(data_.train[idx[static_cast<std::size_t>(i)]]);
    }
    return out;
  }

  std::uint64_t rollout_seed(std::uint64_t round) const {
    return derive_seed(cfg_.seed, {0x70, static_cast<std::uint64_t>(step_), round});
  }

  static void add_rollout_stats(MetricsRecord& rec, const std::vector<rollout::RolloutGroup>& groups) {
    double ent = 0.0, len = 0.0, reward = 0.0;
    std::size_t tokens = 0, n = 0;
    for (const auto& g : groups) {
      for (const auto& tr : g.trajectories) {
        for (double h : tr.token_entropy) ent += h;
        tokens += tr.token_entropy.size();
        len += static_cast<double>(tr.length());
        reward += tr.reward.value_or(0.0);
        ++n;
      }
    }
    rec.mean_token_entropy = tokens ? ent / static_cast<double>(tokens) : 0.0;
    rec.mean_response_length = n ? len / static_cast<double>(n) : 0.0;
    rec.train_reward_mean = n ? reward / static_cast<double>(n) : 0.0;
  }

  // Runs epochs x mini-batches of updates; returns the mean loss report.
  rlcore::LossReport optimize(const std::vector<UpdateBatch>& minis, const std::vector<std::size_t>& groups) {
    rlcore::LossReport mean;
    int count = 0;
    const double vcoeff = cfg_.algorithm == Algorithm::ppo ? cfg_.train.value_coeff : 0.0;
    const std::optional<double> vclip =
        cfg_.train.value_clip > 0 ? std::optional<double>(cfg_.train.value_clip) : std::nullopt;
    for (int e = 0; e < cfg_.train.epochs; ++e) {
      for (const auto& mb : minis) {
        if (mb.tokens() == 0) continue;
        adam_.zero_grad();
        auto loss = batch_loss(params_, mb, cfg_.clip, cfg_.reg, vcoeff, vclip);
        if (!std::isfinite(loss.report.total_loss)) abort_non_finite(mb, loss.report);
        loss.total.backward();
        adam_.step(groups);
        mean.pg_loss += loss.report.pg_loss;
        mean.entropy_reg_value += loss.report.entropy_reg_value;
        mean.value_loss += loss.report.value_loss;
        mean.total_loss += loss.report.total_loss;
        mean.mean_token_entropy += loss.report.mean_token_entropy;
        mean.clip_fraction += loss.report.clip_fraction;
        ++count;
      }
    }
    if (count) {
      const double inv = 1.0 / count;
      mean.pg_loss *= inv;
      mean.entropy_reg_value *= inv;
      mean.value_loss *= inv;
      mean.total_loss *= inv;
      mean.mean_token_entropy *= inv;
      mean.clip_fraction *= inv;
    }
    return mean;
  }

  [[noreturn]] void abort_non_finite(const UpdateBatch& mb, const rlcore::LossReport& rep) const {
    std::string where;
    if (!dump_path_.empty()) {
      nlohmann::json j;
      j["step"] = step_;
      j["pg_loss"] = rep.pg_loss;
      j["entropy_reg_value"] = rep.entropy_reg_value;
      j["value_loss"] = rep.value_loss;
      j["sequences"] = mb.seqs;
      j["targets"] = mb.targets;
      j["old_logp"] = mb.old_logp;
      j["advantages"] = mb.advantages;
      j["returns"] = mb.returns;
      std::ofstream f(dump_path_);
      f << j.dump(1) << '\n';
      where = "; batch written to " + dump_path_;
    }
    throw Error("non-finite loss at step " + std::to_string(step_) + where);
  }

  void finish_record(MetricsRecord& rec, const rlcore::LossReport& rep) const {
    rec.step = step_;
    rec.pg_loss = rep.pg_loss;
    rec.entropy_reg_value = rep.entropy_reg_value;
    rec.value_loss = rep.value_loss;
    rec.clip_fraction = rep.clip_fraction;
    rec.param_l2_from_init = params_.param_l2_from_init();
  }

  StepResult grpo_step() {
    const int want = cfg_.batch_size();
    const auto shaping = cfg_.shaping();
    std::vector<rollout::RolloutGroup> kept;
    MetricsRecord rec;
    const int rounds = cfg_.train.dynamic_sampling ? cfg_.train.oversample : 1;
    for (int round = 0; round < rounds && static_cast<int>(kept.size()) < want; ++round) {
      const auto prompts = sample_prompts(want, static_cast<std::uint64_t>(round));
      auto groups = rollout::rollout_groups(params_, std::span<const tasks::PromptInstance>(prompts),
                                            cfg_.train.group_size, train_sampling(),
                                            rollout_seed(static_cast<std::uint64_t>(round)), shaping);
      // Logged statistics describe the first, unfiltered sample of the policy.
      if (round == 0) add_rollout_stats(rec, groups);
      if (cfg_.train.dynamic_sampling) {
        std::size_t dropped = 0;
        groups = rlcore::filter_zero_variance_groups(std::move(groups), &dropped);
        rec.groups_dropped += static_cast<long>(dropped);
      }
      for (auto& g : groups) {
        if (static_cast<int>(kept.size()) == want) break;
        kept.push_back(std::move(g));
      }
    }
    std::vector<UpdateBatch> minis;
    const auto mbs = static_cast<std::size_t>(cfg_.train.mini_batch_size);
    for (std::size_t i = 0; i < kept.size(); ++i) {
      if (i % mbs == 0) minis.emplace_back();
      const auto adv = rlcore::group_normalized_advantages(kept[i].group_rewards);
      for (std::size_t j = 0; j < kept[i].trajectories.size(); ++j) {
        const auto& tr = kept[i].trajectories[j];
        const std::vector<double> a(tr.length(), adv.advantages[j]);
        minis.back().add(tr, a);
      }
    }
    if (cfg_.train.whiten_advantages) {
      for (auto& mb : minis) rlcore::whiten(std::span<double>(mb.advantages));
    }
    last_groups_ = std::move(kept);
    StepResult res;
    res.optimized = !minis.empty();
    rlcore::LossReport rep;
    if (res.optimized) rep = optimize(minis, {actor_group_});
    finish_record(rec, rep);
    res.record = rec;
    return res;
  }

  StepResult ppo_step() {
    const int want = cfg_.batch_size();
    const auto prompts = sample_prompts(want, 0);
    auto trajs = rollout::rollout(params_, std::span<const tasks::PromptInstance>(prompts), train_sampling(),
                                  rollout_seed(0));
    const auto shaping = cfg_.shaping();
    std::vector<rollout::RolloutGroup> groups(trajs.size());
    for (std::size_t i = 0; i < trajs.size(); ++i) {
      const auto outcome = tasks::verify(trajs[i].response_tokens, prompts[i], shaping);
      trajs[i].reward = outcome.reward;
      trajs[i].correct = outcome.correct;
      groups[i].instance = prompts[i];
      groups[i].group_rewards = {outcome.reward};
      groups[i].trajectories.push_back(std::move(trajs[i]));
    }
    MetricsRecord rec;
    add_rollout_stats(rec, groups);

    // Values of the pre-update critic at every response position.
    std::vector<TokenSeq> seqs;
    for (const auto& g : groups) {
      const auto& tr = g.trajectories[0];
      TokenSeq s = tr.prompt_tokens;
      s.insert(s.end(), tr.response_tokens.begin(), tr.response_tokens.end());
      seqs.push_back(std::move(s));
    }
    std::vector<std::vector<double>> values(groups.size());
    {
      num::NoGradGuard guard;
      const auto out = model::forward_packed(params_, std::span<const TokenSeq>(seqs));
      for (std::size_t i = 0; i < groups.size(); ++i) {
        const auto& tr = groups[i].trajectories[0];
        const std::size_t base = out.segments[i].offset + tr.prompt_tokens.size() - 1;
        for (std::size_t t = 0; t < tr.length(); ++t) values[i].push_back(static_cast<double>(out.values[base + t]));
      }
    }

    std::vector<UpdateBatch> minis;
    const auto mbs = static_cast<std::size_t>(cfg_.train.mini_batch_size);
    for (std::size_t i = 0; i < groups.size(); ++i) {
      if (i % mbs == 0) minis.emplace_back();
      const auto& tr = groups[i].trajectories[0];
      std::vector<double> rewards(tr.length(), 0.0);
      rewards.back() = tr.reward.value_or(0.0);
      const auto gae = rlcore::gae_advantages(rewards, values[i], cfg_.train.gamma, cfg_.train.lam);
      auto& mb = minis.back();
      mb.add(tr, gae.advantages.values);
      mb.returns.insert(mb.returns.end(), gae.returns.begin(), gae.returns.end());
      mb.old_values.insert(mb.old_values.end(), values[i].begin(), values[i].end());
    }
    if (cfg_.train.whiten_advantages) {
      for (auto& mb : minis) rlcore::whiten(std::span<double>(mb.advantages));
    }
    last_groups_ = std::move(groups);
    // During critic warmup only the value head moves.
    std::vector<std::size_t> which{critic_group_};
    if (step_ > cfg_.train.critic_warmup) which.insert(which.begin(), actor_group_);
    const auto rep = optimize(minis, which);
    finish_record(rec, rep);
    StepResult res;
    res.optimized = true;
    res.record = rec;
    return res;
  }

  ExperimentConfig cfg_;
  Datasets data_;
  model::PolicyParams<T> params_;
  rlcore::Adam<T> adam_;
  std::size_t actor_group_ = 0;
  std::size_t critic_group_ = 0;
  long step_ = 0;
  std::vector<rollout::RolloutGroup> last_groups_;
  std::string dump_path_;
};

struct RunSummary {
  std::string run_dir;
  double wall_seconds = 0.0;
  long steps = 0;
  bool stopped_early = false;
  double initial_eval = 0.0;
  double final_eval = 0.0;
  double best_eval = 0.0;
  long best_step = 0;
  std::vector<MetricsRecord> records;
};

using ProgressFn = std::function<void(const MetricsRecord&)>;

// Full training run into `run_dir`:
//   config.txt, train.tsv, eval.tsv, metrics.jsonl, curves.csv,
//   checkpoint.bin (latest eval point), best.bin, summary.json.
// Wall time goes only into summary.json, so the metrics files of two runs
// with equal configs are byte-identical.
// Step 0 carries the evaluation of the initial policy; its entropy and
// length come from the evaluation samples.
template <class T>
RunSummary train(const ExperimentConfig& cfg, const std::string& run_dir, const ProgressFn& progress = {}) {
  cfg.validate();
  const auto started = std::chrono::steady_clock::now();
  fs::create_directories(run_dir);
  const auto path = [&run_dir](const char* name) { return (fs::path(run_dir) / name).string(); };
  {
    std::ofstream f(path("config.txt"));
    f << cfg.to_text();
  }
  Trainer<T> trainer(cfg);
  trainer.set_dump_path(path("nan_batch.json"));
  {
    std::ofstream tr(path("train.tsv")), ev(path("eval.tsv"));
    tasks::write_dataset(tr, std::span<const tasks::PromptInstance>(trainer.datasets().train));
    tasks::write_dataset(ev, std::span<const tasks::PromptInstance>(trainer.datasets().eval));
  }
  MetricsWriter writer(path("metrics.jsonl"), path("curves.csv"));
  RunSummary summary;
  summary.run_dir = run_dir;

  const auto record_eval = [&](MetricsRecord& rec) {
    const auto ev = trainer.evaluate_now();
    rec.eval_avg_at_k = ev.avg_at_k;
    model::save_checkpoint(path("checkpoint.bin"), trainer.params());
    if (rec.step == 0 || ev.avg_at_k > summary.best_eval) {
      summary.best_eval = ev.avg_at_k;
      summary.best_step = rec.step;
      model::save_checkpoint(path("best.bin"), trainer.params());
    }
    summary.final_eval = ev.avg_at_k;
    return ev;
  };

  MetricsRecord first;
  const auto ev0 = record_eval(first);
  first.mean_token_entropy = ev0.mean_token_entropy;
  first.mean_response_length = ev0.mean_response_length;
  first.train_reward_mean = ev0.avg_at_k;
  summary.initial_eval = ev0.avg_at_k;
  writer.append(first);
  summary.records.push_back(first);
  if (progress) progress(first);

  for (int s = 1; s <= cfg.train.total_steps; ++s) {
    auto rec = trainer.step().record;
    const bool last = s == cfg.train.total_steps;
    if (s % cfg.eval.every == 0 || last) {
      const auto ev = record_eval(rec);
      if (cfg.eval.stop_at > 0 && ev.avg_at_k >= cfg.eval.stop_at) summary.stopped_early = !last;
    }
    writer.append(rec);
    summary.records.push_back(rec);
    if (progress) progress(rec);
    summary.steps = s;
    if (summary.stopped_early) break;
  }

  summary.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  nlohmann::json j;
  j["steps"] = summary.steps;
  j["stopped_early"] = summary.stopped_early;
  j["initial_eval_avg_at_k"] = summary.initial_eval;
  j["final_eval_avg_at_k"] = summary.final_eval;
  j["best_eval_avg_at_k"] = summary.best_eval;
  j["best_step"] = summary.best_step;
  j["wall_seconds"] = summary.wall_seconds;
  std::ofstream f(path("summary.json"));
  f << j.dump(2) << '\n';
  return summary;
}

// The summary of a finished run in `run_dir` when its config.txt equals
// `cfg`, otherwise nullopt.
inline std::optional<RunSummary> load_finished_run(const ExperimentConfig& cfg, const std::string& run_dir) {
  const fs::path dir(run_dir);
  if (!fs::exists(dir / "summary.json") || !fs::exists(dir / "config.txt")) return std::nullopt;
  std::ifstream c(dir / "config.txt");
  const std::string text((std::istreambuf_iterator<char>(c)), std::istreambuf_iterator<char>());
  if (text != cfg.to_text()) return std::nullopt;
  std::ifstream f(dir / "summary.json");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;
  }
  RunSummary s;
  s.run_dir = run_dir;
  s.steps = j.value("steps", 0L);
  s.stopped_early = j.value("stopped_early", false);
  s.initial_eval = j.value("initial_eval_avg_at_k", 0.0);
  s.final_eval = j.value("final_eval_avg_at_k", 0.0);
  s.best_eval = j.value("best_eval_avg_at_k", 0.0);
  s.best_step = j.value("best_step", 0L);
  s.wall_seconds = j.value("wall_seconds", 0.0);
  s.records = read_metrics((dir / "metrics.jsonl").string());
  return s;
}

}  // namespace ibro::harness
