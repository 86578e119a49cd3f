#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "ibro/error.hpp"
#include "json.hpp"

namespace ibro::harness {

struct MetricsRecord {
  long step = 0;
  double mean_token_entropy = 0.0;    // nats
  double mean_response_length = 0.0;  // tokens
  double train_reward_mean = 0.0;
  std::optional<double> eval_avg_at_k;
  double pg_loss = 0.0;
  double entropy_reg_value = 0.0;
  double value_loss = 0.0;
  double clip_fraction = 0.0;
  double param_l2_from_init = 0.0;
  long groups_dropped = 0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["step"] = step;
    j["mean_token_entropy"] = mean_token_entropy;
    j["mean_response_length"] = mean_response_length;
    j["train_reward_mean"] = train_reward_mean;
    j["eval_avg_at_k"] = eval_avg_at_k ? nlohmann::json(*eval_avg_at_k) : nlohmann::json(nullptr);
    j["pg_loss"] = pg_loss;
    j["entropy_reg_value"] = entropy_reg_value;
    j["value_loss"] = value_loss;
    j["clip_fraction"] = clip_fraction;
    j["param_l2_from_init"] = param_l2_from_init;
    j["groups_dropped"] = groups_dropped;
    return j;
  }

  static MetricsRecord from_json(const nlohmann::json& j) {
    MetricsRecord r;
    r.step = j.at("step").get<long>();
    r.mean_token_entropy = j.at("mean_token_entropy").get<double>();
    r.mean_response_length = j.at("mean_response_length").get<double>();
    r.train_reward_mean = j.at("train_reward_mean").get<double>();
    if (!j.at("eval_avg_at_k").is_null()) r.eval_avg_at_k = j.at("eval_avg_at_k").get<double>();
    r.pg_loss = j.at("pg_loss").get<double>();
    r.entropy_reg_value = j.at("entropy_reg_value").get<double>();
    r.value_loss = j.at("value_loss").get<double>();
    r.clip_fraction = j.at("clip_fraction").get<double>();
    r.param_l2_from_init = j.at("param_l2_from_init").get<double>();
    r.groups_dropped = j.at("groups_dropped").get<long>();
    return r;
  }
};

inline std::string format_real(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

// Single owner of a run's metrics.jsonl and curves.csv. Both files are
// appended and flushed once per record.
class MetricsWriter {
 public:
  MetricsWriter(const std::string& jsonl_path, const std::string& csv_path)
      : jsonl_(jsonl_path, std::ios::trunc), csv_(csv_path, std::ios::trunc) {
    if (!jsonl_ || !csv_) throw Error("metrics: cannot open output files");
    csv_ << "step,entropy,resp_len,reward,avg_at_k\n";
    csv_.flush();
  }

  void append(const MetricsRecord& r) {
    if (last_step_ && r.step <= *last_step_) throw ContractError("metrics: steps must increase");
    last_step_ = r.step;
    jsonl_ << r.to_json().dump() << '\n';
    jsonl_.flush();
    csv_ << r.step << ',' << format_real(r.mean_token_entropy) << ',' << format_real(r.mean_response_length)
         << ',' << format_real(r.train_reward_mean) << ','
         << (r.eval_avg_at_k ? format_real(*r.eval_avg_at_k) : std::string()) << '\n';
    csv_.flush();
  }

 private:
  std::ofstream jsonl_, csv_;
  std::optional<long> last_step_;
};

inline std::vector<MetricsRecord> read_metrics(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("metrics: cannot open " + path);
  std::vector<MetricsRecord> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(MetricsRecord::from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("metrics: bad record in " + path + ": " + e.what());
    }
  }
  return out;
}

}  // namespace ibro::harness
