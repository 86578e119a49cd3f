#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ibro/harness/config.hpp"
#include "ibro/harness/metrics.hpp"
#include "ibro/harness/trainer.hpp"
#include "ibro/rlcore/losses.hpp"

namespace ibro::harness {

// Fraction of the run, counted from the end, that "final" statistics average over.
inline constexpr double kFinalWindow = 0.1;

struct RunStats {
  rlcore::RegularizerKind mode = rlcore::RegularizerKind::none;
  std::uint64_t seed = 0;
  double final_eval = 0.0;
  double best_eval = 0.0;
  double final_entropy = 0.0;
  double final_resp_len = 0.0;
  double initial_eval = 0.0;
  double wall_seconds = 0.0;
  std::vector<double> entropy;   // per logged step
  std::vector<double> resp_len;  // per logged step
};

struct ComparisonRow {
  rlcore::RegularizerKind mode = rlcore::RegularizerKind::none;
  int seeds = 0;
  double final_eval = 0.0;
  double best_eval = 0.0;
  double final_entropy = 0.0;
  double final_resp_len = 0.0;
};

struct Comparison {
  std::vector<RunStats> runs;
  std::vector<ComparisonRow> rows;
};

// Means of entropy and length over the last kFinalWindow of the training
// steps (at least one step); step 0 is excluded.
inline RunStats run_stats(const std::vector<MetricsRecord>& records) {
  RunStats s;
  for (const auto& r : records) {
    s.entropy.push_back(r.mean_token_entropy);
    s.resp_len.push_back(r.mean_response_length);
    if (r.eval_avg_at_k) {
      s.final_eval = *r.eval_avg_at_k;
      s.best_eval = std::max(s.best_eval, *r.eval_avg_at_k);
    }
  }
  const std::size_t steps = records.size() > 1 ? records.size() - 1 : records.size();
  const std::size_t window = std::max<std::size_t>(1, static_cast<std::size_t>(kFinalWindow * steps));
  double e = 0.0, l = 0.0;
  for (std::size_t i = records.size() - window; i < records.size(); ++i) {
    e += records[i].mean_token_entropy;
    l += records[i].mean_response_length;
  }
  s.final_entropy = e / static_cast<double>(window);
  s.final_resp_len = l / static_cast<double>(window);
  return s;
}

inline double mode_alpha(const ExperimentConfig& base, rlcore::RegularizerKind mode) {
  switch (mode) {
    case rlcore::RegularizerKind::none: return 0.0;
    case rlcore::RegularizerKind::naive: return base.compare_alpha_naive;
    case rlcore::RegularizerKind::ib:
    case rlcore::RegularizerKind::generalized_ib: return base.compare_alpha_ib;
  }
  return 0.0;
}

// Trains every mode on seeds base.seed, base.seed + 1, ... into
// out_dir/<mode>_seed<k> and writes comparison.csv (one row per mode),
// runs.csv (one row per run) and trajectories.csv (seed-mean curves).
// With `reuse`, a run directory that already holds a finished run of the
// same resolved config is read back instead of retrained.
template <class T>
Comparison compare(const ExperimentConfig& base, const std::vector<rlcore::RegularizerKind>& modes, int n_seeds,
                   const std::string& out_dir, const ProgressFn& progress = {}, bool reuse = false) {
  if (n_seeds < 1) throw ConfigError("compare: need at least one seed");
  if (modes.empty()) throw ConfigError("compare: no modes given");
  std::filesystem::create_directories(out_dir);
  Comparison cmp;
  std::map<int, std::vector<const RunStats*>> by_mode;
  for (auto mode : modes) {
    for (int k = 0; k < n_seeds; ++k) {
      ExperimentConfig cfg = base;
      cfg.seed = base.seed + static_cast<std::uint64_t>(k);
      cfg.model.seed = cfg.seed;
      cfg.reg.kind = mode;
      cfg.reg.alpha = mode_alpha(base, mode);
      const auto dir = (std::filesystem::path(out_dir) / (rlcore::to_string(mode) + "_seed" + std::to_string(k))).string();
      std::optional<RunSummary> done;
      if (reuse) done = load_finished_run(cfg, dir);
      const auto summary = done ? *done : train<T>(cfg, dir, progress);
      auto stats = run_stats(summary.records);
      stats.initial_eval = summary.initial_eval;
      stats.wall_seconds = summary.wall_seconds;
      stats.mode = mode;
      stats.seed = cfg.seed;
      cmp.runs.push_back(std::move(stats));
    }
  }
  for (const auto& r : cmp.runs) by_mode[static_cast<int>(r.mode)].push_back(&r);

  std::ofstream rows((std::filesystem::path(out_dir) / "comparison.csv").string());
  rows << "mode,seeds,final_avg_at_k,best_avg_at_k,final_entropy,final_resp_len\n";
  std::ofstream runs((std::filesystem::path(out_dir) / "runs.csv").string());
  runs << "mode,seed,final_avg_at_k,best_avg_at_k,final_entropy,final_resp_len\n";
  std::ofstream traj((std::filesystem::path(out_dir) / "trajectories.csv").string());
  traj << "mode,step,entropy,resp_len\n";
  for (const auto& r : cmp.runs) {
    runs << rlcore::to_string(r.mode) << ',' << r.seed << ',' << format_real(r.final_eval) << ','
         << format_real(r.best_eval) << ',' << format_real(r.final_entropy) << ',' << format_real(r.final_resp_len)
         << '\n';
  }
  for (auto mode : modes) {
    const auto& list = by_mode[static_cast<int>(mode)];
    ComparisonRow row;
    row.mode = mode;
    row.seeds = static_cast<int>(list.size());
    for (const auto* r : list) {
      row.final_eval += r->final_eval;
      row.best_eval += r->best_eval;
      row.final_entropy += r->final_entropy;
      row.final_resp_len += r->final_resp_len;
    }
    const double inv = 1.0 / row.seeds;
    row.final_eval *= inv;
    row.best_eval *= inv;
    row.final_entropy *= inv;
    row.final_resp_len *= inv;
    cmp.rows.push_back(row);
    rows << rlcore::to_string(mode) << ',' << row.seeds << ',' << format_real(row.final_eval) << ','
         << format_real(row.best_eval) << ',' << format_real(row.final_entropy) << ','
         << format_real(row.final_resp_len) << '\n';
    // Runs stopped early have shorter curves; average over those still running.
    std::size_t longest = 0;
    for (const auto* r : list) longest = std::max(longest, r->entropy.size());
    for (std::size_t s = 0; s < longest; ++s) {
      double e = 0.0, l = 0.0;
      int n = 0;
      for (const auto* r : list) {
        if (s >= r->entropy.size()) continue;
        e += r->entropy[s];
        l += r->resp_len[s];
        ++n;
      }
      traj << rlcore::to_string(mode) << ',' << s << ',' << format_real(e / n) << ',' << format_real(l / n) << '\n';
    }
  }
  return cmp;
}

}  // namespace ibro::harness
