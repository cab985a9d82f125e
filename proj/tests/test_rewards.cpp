#include <catch2/catch_amalgamated.hpp>

#include "intuit/rewards.hpp"

using namespace intuit;

namespace {

WorldConfig world() { return WorldConfig{}; }

Instance make_instance(const WorldConfig& cfg) {
  return generate_instances(cfg, cfg.train_templates, 1, Split::grpo, 0)[0];
}

Trajectory trace_for(const Instance& inst, const WorldConfig& cfg,
                     bool correct_counts, bool correct_answer) {
  Vocab v = cfg.vocab();
  LabelResult lr = label_rule(inst.tokens, cfg);
  Trajectory t;
  for (int c = 0; c < cfg.num_classes; ++c) {
    t.reasoning.push_back(v.answer(c));
    int n = lr.counts[static_cast<std::size_t>(c)];
    if (!correct_counts && c == 0) n += 1;
    t.reasoning.push_back(v.count(n));
  }
  t.provisional = correct_answer ? inst.label
                                 : (inst.label + 1) % cfg.num_classes;
  t.tokens = serialize_trace(t.reasoning, t.provisional, v);
  t.trace_len = static_cast<int>(t.reasoning.size());
  return t;
}

Trajectory malformed_trace(const WorldConfig& cfg) {
  Vocab v = cfg.vocab();
  Trajectory t;
  t.tokens = {v.think_open(), v.evidence(0, 0)};  // never closed
  t.provisional = kMalformed;
  return t;
}

}  // namespace

TEST_CASE("format reward depends only on parseability") {
  WorldConfig cfg = world();
  Instance inst = make_instance(cfg);
  REQUIRE(format_reward(trace_for(inst, cfg, true, true)) == 1.0);
  REQUIRE(format_reward(trace_for(inst, cfg, true, false)) == 1.0);
  REQUIRE(format_reward(malformed_trace(cfg)) == 0.0);
}

TEST_CASE("correctness reward") {
  REQUIRE(correctness_reward(2, 2) == 1.0);
  REQUIRE(correctness_reward(1, 2) == 0.0);
  REQUIRE(correctness_reward(kMalformed, 2) == 0.0);
}

TEST_CASE("consistency reward is the matched-count fraction") {
  WorldConfig cfg = world();
  Vocab v = cfg.vocab();
  Instance inst = make_instance(cfg);

  REQUIRE(consistency_reward(trace_for(inst, cfg, true, true), inst, cfg) ==
          1.0);
  // one of four stated counts wrong
  REQUIRE(consistency_reward(trace_for(inst, cfg, false, true), inst, cfg) ==
          0.75);

  Trajectory countless;
  countless.reasoning = {v.evidence(0, 0), v.evidence(1, 0)};
  countless.provisional = inst.label;
  REQUIRE(consistency_reward(countless, inst, cfg) == 0.0);
}

TEST_CASE("total reward composition and bounds") {
  WorldConfig cfg = world();
  RewardConfig rc;
  rc.validate();
  Instance inst = make_instance(cfg);

  RewardBreakdown good = score_trajectory(trace_for(inst, cfg, true, true),
                                          inst, cfg, rc);
  REQUIRE_THAT(good.total, Catch::Matchers::WithinAbs(1.0, 1e-12));

  RewardBreakdown bad = score_trajectory(malformed_trace(cfg), inst, cfg, rc);
  REQUIRE(bad.total == 0.0);

  RewardBreakdown wrong = score_trajectory(trace_for(inst, cfg, true, false),
                                           inst, cfg, rc);
  REQUIRE_THAT(wrong.total, Catch::Matchers::WithinAbs(0.4, 1e-12));

  // monotone in each component
  RewardBreakdown b;
  b.format = 1;
  b.correct = 0;
  b.consistency = 0.5;
  double base = total_reward(b, rc);
  b.correct = 1;
  REQUIRE(total_reward(b, rc) > base);
  b.consistency = 0.9;
  REQUIRE(total_reward(b, rc) > base);
}

TEST_CASE("reward config validation") {
  RewardConfig rc;
  rc.w_format = 0.5;
  REQUIRE_THROWS_AS(rc.validate(), ParameterError);
  rc = RewardConfig{};
  rc.w_correct = -0.1;
  REQUIRE_THROWS_AS(rc.validate(), ParameterError);
}

TEST_CASE("rewards are pure") {
  WorldConfig cfg = world();
  RewardConfig rc;
  Instance inst = make_instance(cfg);
  Trajectory t = trace_for(inst, cfg, false, true);
  RewardBreakdown a = score_trajectory(t, inst, cfg, rc);
  RewardBreakdown b = score_trajectory(t, inst, cfg, rc);
  REQUIRE(a.total == b.total);
  REQUIRE(a.consistency == b.consistency);
}
