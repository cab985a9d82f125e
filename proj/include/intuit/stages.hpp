#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "intuit/adam.hpp"
#include "intuit/reasoner.hpp"
#include "intuit/rewards.hpp"
#include "intuit/rng.hpp"
#include "intuit/tensor.hpp"
#include "intuit/worldgen.hpp"

namespace intuit {

struct Hyperparams {
  int batch_size = 64;
  double lr = 2e-5;
  double grpo_lr = 0.0;  // 0 = reuse lr for the refinement stage
  int K = 8;  // rollouts per instance in a policy-refinement group
  double tau = 1.0;
  int calibration_rollouts = 4;
  int cold_start_epochs = 3;
  int grpo_rounds = 40;
  int calibration_epochs = 10;
  std::uint64_t seed = 1;

  void validate() const {
    if (batch_size <= 0) throw ParameterError("hyperparams: batch_size");
    if (lr <= 0.0) throw ParameterError("hyperparams: lr must be positive");
    if (grpo_lr < 0.0)
      throw ParameterError("hyperparams: grpo_lr must be nonnegative");
    if (K < 1) throw ParameterError("hyperparams: K must be >= 1");
    if (tau <= 0.0) throw ParameterError("hyperparams: tau must be positive");
    if (calibration_rollouts <= 0)
      throw ParameterError("hyperparams: calibration_rollouts");
    if (cold_start_epochs < 0 || grpo_rounds < 0 || calibration_epochs < 0)
      throw ParameterError("hyperparams: epoch counts must be nonnegative");
  }

  AdamConfig adam() const {
    AdamConfig a;
    a.lr = lr;
    return a;
  }
  AdamConfig grpo_adam() const {
    AdamConfig a;
    a.lr = grpo_lr > 0.0 ? grpo_lr : lr;
    return a;
  }
};

// ---- stage 1: supervised alignment on teacher traces -----------------------

// Minimizes mean trajectory NLL over the teacher dataset with Adam. Returns
// the per-epoch mean NLL per generated token.
inline std::vector<double> train_cold_start(
    PolicyModel& model, const std::vector<TeacherExample>& data,
    const WorldConfig& world, const Hyperparams& hp) {
  hp.validate();
  if (data.empty()) throw ContractError("train_cold_start: empty dataset");
  Vocab v = world.vocab();

  struct Prepared {
    const std::vector<int>* x;
    std::vector<int> wrapped;
    double tokens;
  };
  std::vector<Prepared> prepared;
  prepared.reserve(data.size());
  for (const TeacherExample& ex : data) {
    Prepared p;
    p.x = &ex.instance.tokens;
    p.wrapped =
        serialize_trace(ex.trace.trace_tokens, ex.trace.provisional, v);
    if (!parse_trajectory(p.wrapped, v))
      throw ContractError("train_cold_start: teacher trace does not parse");
    p.tokens = static_cast<double>(p.wrapped.size()) - 1.0;  // after <think>
    prepared.push_back(std::move(p));
  }

  std::vector<Tensor> params = model.params();
  AdamState opt;
  opt.init_for(params);
  AdamConfig acfg = hp.adam();

  std::vector<double> curve;
  std::vector<std::size_t> order(prepared.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < hp.cold_start_epochs; ++epoch) {
    Rng shuf = Rng::stream(hp.seed, 0x51a6e100ULL + static_cast<std::uint64_t>(epoch));
    shuf.shuffle(order);
    double nll_sum = 0.0, token_sum = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(hp.batch_size)) {
      std::size_t end = std::min(order.size(),
                                 start + static_cast<std::size_t>(hp.batch_size));
      double inv = 1.0 / static_cast<double>(end - start);
      for (Tensor& p : params) p.zero_grad();
      for (std::size_t i = start; i < end; ++i) {
        const Prepared& ex = prepared[order[i]];
        Tape tape;
        Tensor nll = trajectory_nll(tape, model, *ex.x, ex.wrapped);
        double val = nll.item();
        if (!std::isfinite(val))
          throw TensorError("train_cold_start: non-finite loss at epoch " +
                            std::to_string(epoch));
        nll_sum += val;
        token_sum += ex.tokens;
        tape.backward(scale(tape, nll, inv));
      }
      adam_step(params, opt, acfg);
    }
    curve.push_back(nll_sum / token_sum);
  }
  return curve;
}

// ---- stage 2: group-weighted policy refinement -----------------------------

// Softmax of the group's rewards at temperature tau.
inline std::vector<double> group_weights(const std::vector<double>& rewards,
                                         double tau) {
  if (rewards.empty()) throw ContractError("group_weights: empty group");
  if (tau <= 0.0) throw ParameterError("group_weights: tau must be positive");
  double mx = rewards[0];
  for (double r : rewards) mx = std::max(mx, r);
  std::vector<double> w(rewards.size());
  double z = 0.0;
  for (std::size_t k = 0; k < rewards.size(); ++k) {
    w[k] = std::exp((rewards[k] - mx) / tau);
    z += w[k];
  }
  for (double& x : w) x /= z;
  return w;
}

inline std::vector<Trajectory> sample_group(const PolicyModel& model,
                                            const Vocab& v,
                                            const std::vector<int>& x, int k,
                                            const SamplerConfig& cfg,
                                            Rng& rng) {
  std::vector<Trajectory> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i)
    out.push_back(sample_trajectory(model, v, x, cfg, rng));
  return out;
}

// Accumulates gradients of sum_k weights[k] * nll(x, traj_k) * inv_batch into
// the model's parameter grads. Returns the loss contribution.
inline double grpo_accumulate(PolicyModel& model, const std::vector<int>& x,
                              const std::vector<Trajectory>& group,
                              const std::vector<double>& weights,
                              double inv_batch) {
  if (group.size() != weights.size())
    throw ContractError("grpo_accumulate: group/weight size mismatch");
  double loss = 0.0;
  for (std::size_t k = 0; k < group.size(); ++k) {
    Tape tape;
    Tensor nll = trajectory_nll(tape, model, x, group[k]);
    double val = nll.item();
    if (!std::isfinite(val))
      throw TensorError("grpo_accumulate: non-finite trajectory loss");
    loss += weights[k] * val * inv_batch;
    tape.backward(scale(tape, nll, weights[k] * inv_batch));
  }
  return loss;
}

struct GrpoStats {
  double loss = 0.0;
  double mean_reward = 0.0;
  double reward_variance = 0.0;
  double malformed_rate = 0.0;
  double mean_correct = 0.0;
  bool all_malformed_warning = false;
};

// One sampling round: K rollouts per instance from the current policy,
// softmax group weights over total rewards, a single optimizer step on the
// weighted NLL. No importance ratios, no clipping; every update is on-policy.
inline GrpoStats grpo_round(PolicyModel& model, AdamState& opt,
                            const std::vector<Instance>& batch,
                            const WorldConfig& world, const Hyperparams& hp,
                            const RewardConfig& rc, const SamplerConfig& sampler,
                            Rng& rng) {
  hp.validate();
  if (batch.empty()) throw ContractError("grpo_round: empty batch");
  Vocab v = world.vocab();
  std::vector<Tensor> params = model.params();
  for (Tensor& p : params) p.zero_grad();

  GrpoStats st;
  double inv = 1.0 / static_cast<double>(batch.size());
  long n_traj = 0, n_malformed = 0, n_correct = 0;
  double r_sum = 0.0, r_sq = 0.0;
  bool any_parsed = false;
  for (const Instance& inst : batch) {
    std::vector<Trajectory> group =
        sample_group(model, v, inst.tokens, hp.K, sampler, rng);
    std::vector<double> rewards;
    rewards.reserve(group.size());
    for (const Trajectory& t : group) {
      RewardBreakdown b = score_trajectory(t, inst, world, rc);
      rewards.push_back(b.total);
      r_sum += b.total;
      r_sq += b.total * b.total;
      n_traj += 1;
      if (t.malformed())
        n_malformed += 1;
      else
        any_parsed = true;
      if (t.provisional == inst.label) n_correct += 1;
    }
    st.loss += grpo_accumulate(model, inst.tokens, group,
                               group_weights(rewards, hp.tau), inv);
  }
  adam_step(params, opt, hp.grpo_adam());

  double n = static_cast<double>(n_traj);
  st.mean_reward = r_sum / n;
  st.reward_variance = r_sq / n - st.mean_reward * st.mean_reward;
  st.malformed_rate = static_cast<double>(n_malformed) / n;
  st.mean_correct = static_cast<double>(n_correct) / n;
  st.all_malformed_warning = !any_parsed;
  return st;
}

// ---- stage 3 input: calibration dataset ------------------------------------

struct CalibrationRecord {
  long instance_id = -1;
  std::vector<int> x;
  std::vector<int> trace;  // R, empty when malformed
  int provisional = kMalformed;
  int gold = 0;
  Trajectory::Source source = Trajectory::Source::rollout;
};

// Multi-rollout generation with the frozen policy, then resampling:
// identical trajectories are deduplicated per instance, and per gold class
// the majority side of the provisional-correctness split is downsampled to
// at most a 3:1 ratio so both trust and correction cases survive.
inline std::vector<CalibrationRecord> build_calibration_dataset(
    const PolicyModel& model, const std::vector<Instance>& instances,
    const WorldConfig& world, const Hyperparams& hp,
    const SamplerConfig& sampler, Rng& rng) {
  hp.validate();
  Vocab v = world.vocab();
  std::vector<CalibrationRecord> records;
  for (const Instance& inst : instances) {
    std::vector<std::vector<int>> seen;
    for (int r = 0; r < hp.calibration_rollouts; ++r) {
      Trajectory t = sample_trajectory(model, v, inst.tokens, sampler, rng);
      if (std::find(seen.begin(), seen.end(), t.tokens) != seen.end())
        continue;
      seen.push_back(t.tokens);
      CalibrationRecord rec;
      rec.instance_id = inst.id;
      rec.x = inst.tokens;
      rec.trace = t.reasoning;
      rec.provisional = t.provisional;
      rec.gold = inst.label;
      records.push_back(std::move(rec));
    }
  }

  // stratify by (gold class, provisional correctness) and cap the majority
  std::vector<char> keep(records.size(), 1);
  std::map<int, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>>
      strata;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& s = strata[records[i].gold];
    if (records[i].provisional == records[i].gold)
      s.first.push_back(i);
    else
      s.second.push_back(i);
  }
  for (auto& [cls, s] : strata) {
    auto& [correct, wrong] = s;
    if (correct.empty() || wrong.empty()) continue;
    auto cap = [&](std::vector<std::size_t>& major, std::size_t limit) {
      if (major.size() <= limit) return;
      rng.shuffle(major);
      for (std::size_t i = limit; i < major.size(); ++i) keep[major[i]] = 0;
    };
    cap(correct, 3 * wrong.size());
    cap(wrong, 3 * correct.size());
  }
  std::vector<CalibrationRecord> out;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (keep[i]) out.push_back(std::move(records[i]));
  return out;
}

inline void write_calibration_jsonl(const std::string& path,
                                    const std::vector<CalibrationRecord>& recs) {
  std::ofstream f(path);
  if (!f) throw TensorError("cannot open " + path + " for writing");
  for (const CalibrationRecord& r : recs) {
    nlohmann::json j;
    j["instance_id"] = r.instance_id;
    j["tokens"] = r.x;
    j["trace_tokens"] = r.trace;
    j["provisional"] = r.provisional;
    j["gold"] = r.gold;
    j["source"] =
        r.source == Trajectory::Source::rollout ? "rollout" : "teacher";
    f << j.dump() << "\n";
  }
}

inline std::vector<CalibrationRecord> read_calibration_jsonl(
    const std::string& path) {
  std::ifstream f(path);
  if (!f) throw TensorError("cannot open " + path);
  std::vector<CalibrationRecord> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    CalibrationRecord r;
    r.instance_id = j.at("instance_id").get<long>();
    r.x = j.at("tokens").get<std::vector<int>>();
    r.trace = j.at("trace_tokens").get<std::vector<int>>();
    r.provisional = j.at("provisional").get<int>();
    r.gold = j.at("gold").get<int>();
    r.source = j.at("source").get<std::string>() == "teacher"
                   ? Trajectory::Source::teacher
                   : Trajectory::Source::rollout;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace intuit
