#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ibro/ibro.hpp"

namespace {

using namespace ibro;

harness::ExperimentConfig load_config(const std::string& path, std::optional<std::uint64_t> seed,
                                      std::optional<int> steps) {
  auto kv = KeyValues::load(path);
  auto cfg = harness::ExperimentConfig::from_kv(kv);
  if (seed) {
    cfg.seed = *seed;
    cfg.model.seed = *seed;
  }
  if (steps) cfg.train.total_steps = *steps;
  cfg.validate();
  return cfg;
}

harness::ProgressFn progress_printer(bool quiet, const std::string& label) {
  if (quiet) return {};
  return [label](const harness::MetricsRecord& r) {
    if (!r.eval_avg_at_k) return;
    std::fprintf(stderr, "%sstep %ld  avg@k %.4f  entropy %.4f  resp_len %.2f  reward %.4f\n", label.c_str(), r.step,
                 *r.eval_avg_at_k, r.mean_token_entropy, r.mean_response_length, r.train_reward_mean);
  };
}

int run_train(const std::string& config, std::optional<std::uint64_t> seed, std::optional<int> steps,
              const std::string& out, bool quiet) {
  const auto cfg = load_config(config, seed, steps);
  const auto summary = harness::train<float>(cfg, out, progress_printer(quiet, ""));
  std::printf("run %s\nsteps %ld\ninitial_avg_at_k %.6f\nfinal_avg_at_k %.6f\nbest_avg_at_k %.6f\n",
              summary.run_dir.c_str(), summary.steps, summary.initial_eval, summary.final_eval, summary.best_eval);
  return 0;
}

int run_eval(const std::string& checkpoint, const std::string& dataset_path, int k, double temperature, double top_p,
             int max_new_tokens, std::uint64_t seed) {
  const auto params = model::load_checkpoint<float>(checkpoint);
  std::ifstream f(dataset_path);
  if (!f) throw FormatError("cannot open dataset " + dataset_path);
  const auto dataset = tasks::read_dataset(f);
  const model::SamplingConfig sampling{temperature, top_p, max_new_tokens};
  const auto stats = harness::evaluate(params, std::span<const tasks::PromptInstance>(dataset), k, sampling, seed);
  std::printf("avg@%d %.6f\nprompts %zu\nmean_response_length %.4f\nmean_token_entropy %.6f\n", k, stats.avg_at_k,
              dataset.size(), stats.mean_response_length, stats.mean_token_entropy);
  return 0;
}

int run_oracle(const std::string& source, const std::string& env_path, double beta, std::optional<std::uint64_t> seed,
               const std::string& out) {
  auto kv = KeyValues::load(env_path);
  info::EnvConfig ec;
  ec.read(kv);
  if (seed) ec.seed = *seed;
  model::ModelConfig mc;
  mc.vocab_size = ec.vocab_size;
  mc.d_model = kv.get("model.d_model", 8);
  mc.n_layers = kv.get("model.n_layers", 1);
  mc.n_heads = kv.get("model.n_heads", 2);
  mc.max_seq_len = kv.get("model.max_seq_len", 1 + ec.prompt_len + ec.max_response_len);
  const double spread = kv.get("model.init_spread", 0.6);
  kv.finish();
  const auto env = info::make_random_env(ec);
  model::PolicyParams<double> params;
  if (source == "random") {
    mc.seed = derive_seed(ec.seed, {0x0ac1e});
    params = model::init<double>(mc);
    Rng rng(derive_seed(mc.seed, {1}));
    for (auto& t : params.all()) {
      for (auto& x : t.mutable_values()) x += spread * standard_normal(rng);
    }
    params.reset_reference();
  } else {
    params = model::load_checkpoint<double>(source);
  }
  const auto report = info::ibro_report(params, env, beta);
  if (out.empty()) {
    report.write(std::cout);
  } else {
    std::ofstream f(out);
    if (!f) throw FormatError("cannot open " + out);
    report.write(f);
    std::printf("bound_residual %.17g\n", report.bound_residual);
  }
  return 0;
}

int run_gradcheck(std::uint64_t seed, bool verbose) {
  const auto reports = harness::run_gradcheck_suite(seed);
  if (verbose) {
    for (const auto& r : reports) std::printf("%-32s %.3e\n", r.name.c_str(), r.report.max_relative_error);
  }
  const double worst = harness::max_relative_error(reports);
  std::printf("max_relative_error %.6e\n", worst);
  return worst < harness::kGradCheckTolerance ? 0 : 1;
}

std::vector<rlcore::RegularizerKind> parse_modes(const std::string& list) {
  std::vector<rlcore::RegularizerKind> modes;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) modes.push_back(rlcore::parse_regularizer_kind(item));
  }
  return modes;
}

int run_compare(const std::string& config, std::optional<std::uint64_t> seed, std::optional<int> steps,
                const std::string& modes, int seeds, const std::string& out, bool quiet, bool reuse) {
  const auto cfg = load_config(config, seed, steps);
  const auto cmp = harness::compare<float>(cfg, parse_modes(modes), seeds, out, progress_printer(quiet, "  "), reuse);
  std::printf("mode,seeds,final_avg_at_k,best_avg_at_k,final_entropy,final_resp_len\n");
  for (const auto& r : cmp.rows) {
    std::printf("%s,%d,%.6f,%.6f,%.6f,%.4f\n", rlcore::to_string(r.mode).c_str(), r.seeds, r.final_eval, r.best_eval,
                r.final_entropy, r.final_resp_len);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ibrolab: small-scale RL post-training experiments with entropy regularizers"};
  app.require_subcommand(1);
  std::optional<std::uint64_t> seed;
  std::optional<int> steps;
  bool quiet = false;

  std::string config, out;
  auto* train = app.add_subcommand("train", "train a policy from a config file");
  train->add_option("config", config, "config file")->required()->check(CLI::ExistingFile);
  train->add_option("--seed", seed, "override the config seed");
  train->add_option("--steps", steps, "override train.total_steps");
  train->add_option("--out", out, "run directory")->default_val("runs/train");
  train->add_flag("--quiet", quiet, "no progress lines");

  std::string checkpoint, dataset;
  int k = 32, max_new_tokens = 16;
  double temperature = 1.0, top_p = 0.7;
  std::uint64_t eval_seed = 0;
  auto* eval = app.add_subcommand("eval", "avg@k of a checkpoint on a dataset file");
  eval->add_option("checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  eval->add_option("dataset", dataset)->required()->check(CLI::ExistingFile);
  eval->add_option("--k", k, "samples per prompt")->default_val(32)->check(CLI::PositiveNumber);
  eval->add_option("--temperature", temperature)->default_val(1.0);
  eval->add_option("--top-p", top_p)->default_val(0.7);
  eval->add_option("--max-new-tokens", max_new_tokens)->default_val(16);
  eval->add_option("--seed", eval_seed, "sampling seed")->default_val(0);

  std::string source, env_config, oracle_out;
  double beta = 2.0;
  auto* oracle = app.add_subcommand("oracle", "exact information measures of a policy on an enumerable env");
  oracle->add_option("policy", source, "checkpoint file or 'random'")->required();
  oracle->add_option("env", env_config, "env config file")->required()->check(CLI::ExistingFile);
  oracle->add_option("--beta", beta)->default_val(2.0);
  oracle->add_option("--seed", seed, "override env.seed");
  oracle->add_option("--out", oracle_out, "write the report here instead of stdout");

  std::uint64_t gc_seed = 0;
  bool verbose = false;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every gradient");
  gradcheck->add_option("--seed", gc_seed)->default_val(0);
  gradcheck->add_flag("-v,--verbose", verbose, "print every check");

  std::string modes = "none,naive,ib";
  int seeds = 3;
  auto* compare = app.add_subcommand("compare", "train each regularizer mode over several seeds");
  compare->add_option("config", config, "config file")->required()->check(CLI::ExistingFile);
  compare->add_option("--modes", modes, "comma-separated modes")->default_val("none,naive,ib");
  compare->add_option("--seeds", seeds, "number of seeds")->default_val(3)->check(CLI::PositiveNumber);
  compare->add_option("--seed", seed, "first seed");
  compare->add_option("--steps", steps, "override train.total_steps");
  compare->add_option("--out", out, "output directory")->default_val("runs/compare");
  compare->add_flag("--quiet", quiet, "no progress lines");
  bool reuse = false;
  compare->add_flag("--reuse", reuse, "read back finished runs with the same config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*train) return run_train(config, seed, steps, out, quiet);
    if (*eval) return run_eval(checkpoint, dataset, k, temperature, top_p, max_new_tokens, eval_seed);
    if (*oracle) return run_oracle(source, env_config, beta, seed, oracle_out);
    if (*gradcheck) return run_gradcheck(gc_seed, verbose);
    if (*compare) return run_compare(config, seed, steps, modes, seeds, out, quiet, reuse);
  } catch (const ibro::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
