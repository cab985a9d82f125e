#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "intuit/reasoner.hpp"
#include "intuit/rewards.hpp"
#include "intuit/stages.hpp"
#include "intuit/tensor.hpp"
#include "intuit/worldgen.hpp"

namespace intuit {

struct RunPaths {
  std::string data_dir = "runs/data";
  std::string checkpoint_dir = "runs/checkpoints";
  std::string report_dir = "runs/reports";
};

struct RunConfig {
  WorldConfig world;
  Hyperparams hyper;
  RewardConfig rewards;
  SamplerConfig sampler;
  SplitSizes splits;
  RunPaths paths;

  void validate() const {
    world.validate();
    hyper.validate();
    rewards.validate();
    sampler.validate();
    if (splits.cold_start <= 0 || splits.grpo <= 0 ||
        splits.calibration <= 0 || splits.eval <= 0)
      throw ParameterError("config: split sizes must be positive");
  }
};

namespace detail_config {

inline std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

inline std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace detail_config

// Every field, in a fixed order. This is both the config-file format and the
// canonical form the run hash is computed from.
inline std::vector<std::pair<std::string, std::string>> config_items(
    const RunConfig& c) {
  using detail_config::fmt_double;
  using detail_config::join_ints;
  return {
      {"world.num_classes", std::to_string(c.world.num_classes)},
      {"world.evidence_tokens_per_class",
       std::to_string(c.world.evidence_tokens_per_class)},
      {"world.num_filler_tokens", std::to_string(c.world.num_filler_tokens)},
      {"world.sequence_length", std::to_string(c.world.sequence_length)},
      {"world.train_templates", join_ints(c.world.train_templates)},
      {"world.eval_templates", join_ints(c.world.eval_templates)},
      {"world.teacher_noise_rate", fmt_double(c.world.teacher_noise_rate)},
      {"world.seed", std::to_string(c.world.seed)},
      {"hyper.batch_size", std::to_string(c.hyper.batch_size)},
      {"hyper.lr", fmt_double(c.hyper.lr)},
      {"hyper.grpo_lr", fmt_double(c.hyper.grpo_lr)},
      {"hyper.group_size", std::to_string(c.hyper.K)},
      {"hyper.tau", fmt_double(c.hyper.tau)},
      {"hyper.calibration_rollouts",
       std::to_string(c.hyper.calibration_rollouts)},
      {"hyper.cold_start_epochs", std::to_string(c.hyper.cold_start_epochs)},
      {"hyper.grpo_rounds", std::to_string(c.hyper.grpo_rounds)},
      {"hyper.calibration_epochs",
       std::to_string(c.hyper.calibration_epochs)},
      {"hyper.seed", std::to_string(c.hyper.seed)},
      {"rewards.w_format", fmt_double(c.rewards.w_format)},
      {"rewards.w_correct", fmt_double(c.rewards.w_correct)},
      {"rewards.w_consistency", fmt_double(c.rewards.w_consistency)},
      {"sampler.temperature", fmt_double(c.sampler.temperature)},
      {"sampler.max_trace_tokens",
       std::to_string(c.sampler.max_trace_tokens)},
      {"splits.cold_start", std::to_string(c.splits.cold_start)},
      {"splits.grpo", std::to_string(c.splits.grpo)},
      {"splits.calibration", std::to_string(c.splits.calibration)},
      {"splits.eval", std::to_string(c.splits.eval)},
      {"paths.data_dir", c.paths.data_dir},
      {"paths.checkpoint_dir", c.paths.checkpoint_dir},
      {"paths.report_dir", c.paths.report_dir},
  };
}

inline void config_set(RunConfig& c, const std::string& key,
                       const std::string& value) {
  using detail_config::split_ints;
  if (key == "world.num_classes") c.world.num_classes = std::stoi(value);
  else if (key == "world.evidence_tokens_per_class")
    c.world.evidence_tokens_per_class = std::stoi(value);
  else if (key == "world.num_filler_tokens")
    c.world.num_filler_tokens = std::stoi(value);
  else if (key == "world.sequence_length")
    c.world.sequence_length = std::stoi(value);
  else if (key == "world.train_templates")
    c.world.train_templates = split_ints(value);
  else if (key == "world.eval_templates")
    c.world.eval_templates = split_ints(value);
  else if (key == "world.teacher_noise_rate")
    c.world.teacher_noise_rate = std::stod(value);
  else if (key == "world.seed") c.world.seed = std::stoull(value);
  else if (key == "hyper.batch_size") c.hyper.batch_size = std::stoi(value);
  else if (key == "hyper.lr") c.hyper.lr = std::stod(value);
  else if (key == "hyper.grpo_lr") c.hyper.grpo_lr = std::stod(value);
  else if (key == "hyper.group_size") c.hyper.K = std::stoi(value);
  else if (key == "hyper.tau") c.hyper.tau = std::stod(value);
  else if (key == "hyper.calibration_rollouts")
    c.hyper.calibration_rollouts = std::stoi(value);
  else if (key == "hyper.cold_start_epochs")
    c.hyper.cold_start_epochs = std::stoi(value);
  else if (key == "hyper.grpo_rounds") c.hyper.grpo_rounds = std::stoi(value);
  else if (key == "hyper.calibration_epochs")
    c.hyper.calibration_epochs = std::stoi(value);
  else if (key == "hyper.seed") c.hyper.seed = std::stoull(value);
  else if (key == "rewards.w_format") c.rewards.w_format = std::stod(value);
  else if (key == "rewards.w_correct") c.rewards.w_correct = std::stod(value);
  else if (key == "rewards.w_consistency")
    c.rewards.w_consistency = std::stod(value);
  else if (key == "sampler.temperature")
    c.sampler.temperature = std::stod(value);
  else if (key == "sampler.max_trace_tokens")
    c.sampler.max_trace_tokens = std::stoi(value);
  else if (key == "splits.cold_start") c.splits.cold_start = std::stoi(value);
  else if (key == "splits.grpo") c.splits.grpo = std::stoi(value);
  else if (key == "splits.calibration")
    c.splits.calibration = std::stoi(value);
  else if (key == "splits.eval") c.splits.eval = std::stoi(value);
  else if (key == "paths.data_dir") c.paths.data_dir = value;
  else if (key == "paths.checkpoint_dir") c.paths.checkpoint_dir = value;
  else if (key == "paths.report_dir") c.paths.report_dir = value;
  else
    throw ParameterError("config: unknown key '" + key + "'");
}

inline std::string serialize_config(const RunConfig& c) {
  std::string out;
  for (const auto& [k, v] : config_items(c)) out += k + " = " + v + "\n";
  return out;
}

inline void apply_config_line(RunConfig& c, const std::string& raw_line) {
  using detail_config::trim;
  std::string line = raw_line;
  std::size_t hash = line.find('#');
  if (hash != std::string::npos) line = line.substr(0, hash);
  line = trim(line);
  if (line.empty()) return;
  std::size_t eq = line.find('=');
  if (eq == std::string::npos)
    throw ParameterError("config: expected 'key = value', got '" + line + "'");
  config_set(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw TensorError("config: cannot open " + path);
  RunConfig c;
  std::string line;
  while (std::getline(f, line)) apply_config_line(c, line);
  return c;
}

// FNV-1a over the canonical serialization, excluding paths: moving output
// directories must not change a run's identity.
inline std::uint64_t config_hash(const RunConfig& c) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& [k, v] : config_items(c)) {
    if (k.rfind("paths.", 0) == 0) continue;
    for (const std::string* s : {&k, &v})
      for (char ch : *s) {
        h ^= static_cast<unsigned char>(ch);
        h *= 1099511628211ULL;
      }
  }
  return h;
}

inline std::string config_hash_hex(const RunConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(config_hash(c)));
  return buf;
}

inline std::string tool_revision() {
  std::string out = "unknown";
  if (FILE* p = popen("git describe --always --dirty 2>/dev/null", "r")) {
    char buf[128];
    if (fgets(buf, sizeof(buf), p)) {
      out = detail_config::trim(buf);
      if (out.empty()) out = "unknown";
    }
    pclose(p);
  }
  return out;
}

inline nlohmann::json run_manifest(const std::string& stage,
                                   const RunConfig& c) {
  nlohmann::json j;
  j["stage"] = stage;
  j["config_hash"] = config_hash_hex(c);
  j["seed"] = c.hyper.seed;
  j["revision"] = tool_revision();
  return j;
}

}  // namespace intuit
