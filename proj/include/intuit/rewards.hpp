#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "intuit/reasoner.hpp"
#include "intuit/tensor.hpp"
#include "intuit/vocab.hpp"
#include "intuit/worldgen.hpp"

namespace intuit {

struct RewardConfig {
  double w_format = 0.2;
  double w_correct = 0.6;
  double w_consistency = 0.2;

  void validate() const {
    if (w_format < 0.0 || w_correct < 0.0 || w_consistency < 0.0)
      throw ParameterError("rewards: weights must be nonnegative");
    if (std::fabs(w_format + w_correct + w_consistency - 1.0) > 1e-12)
      throw ParameterError("rewards: weights must sum to 1");
  }
};

struct RewardBreakdown {
  double format = 0.0;       // {0,1}
  double correct = 0.0;      // {0,1}
  double consistency = 0.0;  // [0,1]
  double total = 0.0;
};

// 1 iff the trajectory parses; content of the think block is irrelevant.
inline double format_reward(const Trajectory& traj) {
  return traj.malformed() ? 0.0 : 1.0;
}

// 1 iff the provisional prediction matches gold; malformed counts as 0.
inline double correctness_reward(int provisional, int gold) {
  return provisional == gold ? 1.0 : 0.0;
}

// Fraction of per-class counts stated in the trace that match the label
// rule's effective counts. A trace stating no counts scores 0. The first
// statement per class wins when a class is stated more than once.
inline double consistency_reward(const Trajectory& traj, const Instance& inst,
                                 const WorldConfig& cfg) {
  Vocab v = cfg.vocab();
  LabelResult lr = label_rule(inst.tokens, cfg);
  std::vector<int> stated(static_cast<std::size_t>(cfg.num_classes), -1);
  const std::vector<int>& r = traj.reasoning;
  int n_stated = 0, n_match = 0;
  for (std::size_t i = 0; i + 1 < r.size(); ++i) {
    if (v.is_answer(r[i]) && v.is_count(r[i + 1])) {
      int cls = v.answer_class(r[i]);
      if (stated[static_cast<std::size_t>(cls)] != -1) continue;
      stated[static_cast<std::size_t>(cls)] = v.count_value(r[i + 1]);
      n_stated += 1;
      if (stated[static_cast<std::size_t>(cls)] ==
          lr.counts[static_cast<std::size_t>(cls)])
        n_match += 1;
    }
  }
  if (n_stated == 0) return 0.0;
  return static_cast<double>(n_match) / static_cast<double>(n_stated);
}

inline double total_reward(const RewardBreakdown& b, const RewardConfig& cfg) {
  return cfg.w_format * b.format + cfg.w_correct * b.correct +
         cfg.w_consistency * b.consistency;
}

inline RewardBreakdown score_trajectory(const Trajectory& traj,
                                        const Instance& inst,
                                        const WorldConfig& world,
                                        const RewardConfig& cfg) {
  RewardBreakdown b;
  b.format = format_reward(traj);
  b.correct = correctness_reward(traj.provisional, inst.label);
  b.consistency = consistency_reward(traj, inst, world);
  b.total = total_reward(b, cfg);
  return b;
}

}  // namespace intuit
