#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <set>

#include "intuit/worldgen.hpp"

using namespace intuit;

namespace {
WorldConfig default_world() { return WorldConfig{}; }
}  // namespace

TEST_CASE("label_rule hand cases") {
  WorldConfig cfg = default_world();
  Vocab v = cfg.vocab();
  int e0 = v.evidence(0, 0), e1 = v.evidence(1, 0), fill = v.filler(3);

  LabelResult a = label_rule({e0, e0, e1, fill}, cfg);
  REQUIRE(a.counts == std::vector<int>{2, 1, 0, 0});
  REQUIRE(a.label == 0);

  LabelResult b = label_rule({e0, v.negation(), e1}, cfg);
  REQUIRE(b.counts == std::vector<int>{0, 1, 0, 0});
  REQUIRE(b.label == 1);

  LabelResult c = label_rule({fill, v.filler(0), fill}, cfg);
  REQUIRE(c.counts == std::vector<int>{0, 0, 0, 0});
  REQUIRE(c.label == 0);  // tie-break toward the smallest class

  REQUIRE_THROWS_AS(label_rule({v.think_open()}, cfg), VocabularyError);
}

TEST_CASE("generate_splits sizes, disjointness, balance, determinism") {
  WorldConfig cfg = default_world();
  SplitSizes sizes{100, 300, 400, 200};
  Datasets d1 = generate_splits(cfg, sizes);
  Datasets d2 = generate_splits(cfg, sizes);

  REQUIRE(d1.cold_start.size() == 100);
  REQUIRE(d1.grpo.size() == 300);
  REQUIRE(d1.calibration.size() == 400);
  REQUIRE(d1.eval.size() == 200);

  std::set<long> ids;
  std::set<int> train_tids, eval_tids;
  auto visit = [&](const std::vector<Instance>& split, bool is_eval) {
    std::vector<int> class_counts(cfg.num_classes, 0);
    for (const Instance& in : split) {
      REQUIRE(ids.insert(in.id).second);  // ids pairwise disjoint
      REQUIRE(label_rule(in.tokens, cfg).label == in.label);
      REQUIRE(static_cast<int>(in.tokens.size()) == cfg.sequence_length);
      (is_eval ? eval_tids : train_tids).insert(in.template_id);
      class_counts[static_cast<std::size_t>(in.label)] += 1;
    }
    int mx = *std::max_element(class_counts.begin(), class_counts.end());
    int mn = *std::min_element(class_counts.begin(), class_counts.end());
    REQUIRE(mx - mn <= 1);  // class balance within one
  };
  visit(d1.cold_start, false);
  visit(d1.grpo, false);
  visit(d1.calibration, false);
  visit(d1.eval, true);

  for (int t : eval_tids) REQUIRE(train_tids.count(t) == 0);

  // determinism: identical token sequences across runs
  for (std::size_t i = 0; i < d1.eval.size(); ++i)
    REQUIRE(d1.eval[i].tokens == d2.eval[i].tokens);
}

TEST_CASE("generate_splits rejects bad sizes and bad configs") {
  WorldConfig cfg = default_world();
  REQUIRE_THROWS_AS(generate_splits(cfg, SplitSizes{0, 1, 1, 1}),
                    ParameterError);
  WorldConfig overlap = cfg;
  overlap.eval_templates = {3, 4};
  REQUIRE_THROWS_AS(generate_splits(overlap, SplitSizes{1, 1, 1, 1}),
                    ParameterError);
  WorldConfig bad = cfg;
  bad.teacher_noise_rate = 1.0;
  REQUIRE_THROWS_AS(bad.validate(), ParameterError);
}

TEST_CASE("teacher noiseless and fully-noisy limits") {
  WorldConfig cfg = default_world();
  std::vector<Instance> insts =
      generate_instances(cfg, cfg.train_templates, 200, Split::cold_start, 0);
  for (const Instance& in : insts) {
    Rng r = Rng::stream(5, static_cast<std::uint64_t>(in.id));
    TeacherTrace t = teacher_reason(in, cfg, 0.0, r);
    REQUIRE_FALSE(t.is_corrupted);
    REQUIRE(t.provisional == in.label);

    Rng r2 = Rng::stream(6, static_cast<std::uint64_t>(in.id));
    TeacherTrace t2 = teacher_reason(in, cfg, 1.0, r2);
    REQUIRE(t2.is_corrupted);
  }
}

TEST_CASE("uncorrupted teacher traces restate the label rule counts") {
  WorldConfig cfg = default_world();
  Vocab v = cfg.vocab();
  std::vector<Instance> insts =
      generate_instances(cfg, cfg.train_templates, 500, Split::cold_start, 0);
  for (const Instance& in : insts) {
    Rng r = Rng::stream(7, static_cast<std::uint64_t>(in.id));
    TeacherTrace t = teacher_reason(in, cfg, 0.0, r);
    LabelResult lr = label_rule(in.tokens, cfg);
    std::size_t L = static_cast<std::size_t>(cfg.sequence_length);
    REQUIRE(t.trace_tokens.size() ==
            L + static_cast<std::size_t>(2 * cfg.num_classes));
    // Enumeration section: one token per input position, locally determined.
    for (std::size_t j = 0; j < L; ++j) {
      if (v.is_evidence(in.tokens[j])) {
        bool cancelled = j + 1 < L && in.tokens[j + 1] == v.negation();
        REQUIRE(t.trace_tokens[j] == (cancelled ? v.negation() : in.tokens[j]));
      } else {
        REQUIRE(t.trace_tokens[j] == v.count(0));
      }
    }
    for (int c = 0; c < cfg.num_classes; ++c) {
      REQUIRE(t.trace_tokens[L + 2 * static_cast<std::size_t>(c)] ==
              v.answer(c));
      REQUIRE(v.count_value(
                  t.trace_tokens[L + 2 * static_cast<std::size_t>(c) + 1]) ==
              lr.counts[static_cast<std::size_t>(c)]);
    }
  }
}

TEST_CASE("teacher corruption rate concentrates around eps_t") {
  WorldConfig cfg = default_world();
  std::vector<Instance> insts =
      generate_instances(cfg, cfg.train_templates, 10000, Split::cold_start, 0);
  std::vector<TeacherExample> data = make_teacher_dataset(cfg, insts, 0.1);
  int corrupted = 0;
  for (const TeacherExample& ex : data)
    if (ex.trace.is_corrupted) corrupted += 1;
  double frac = static_cast<double>(corrupted) / 10000.0;
  REQUIRE(frac > 0.09);
  REQUIRE(frac < 0.11);
}

TEST_CASE("corrupted traces perturb a stated count, not just the label") {
  WorldConfig cfg = default_world();
  Vocab v = cfg.vocab();
  std::vector<Instance> insts =
      generate_instances(cfg, cfg.train_templates, 300, Split::cold_start, 0);
  std::vector<TeacherExample> data = make_teacher_dataset(cfg, insts, 1.0);
  int changed = 0;
  std::size_t L = static_cast<std::size_t>(cfg.sequence_length);
  for (const TeacherExample& ex : data) {
    LabelResult lr = label_rule(ex.instance.tokens, cfg);
    for (int c = 0; c < cfg.num_classes; ++c)
      if (v.count_value(ex.trace.trace_tokens[L +
                                              2 * static_cast<std::size_t>(c) +
                                              1]) != lr.counts[c])
        changed += 1;
  }
  REQUIRE(changed == 300);  // exactly one count differs per corrupted trace
}

TEST_CASE("jsonl round trips") {
  WorldConfig cfg = default_world();
  Datasets d = generate_splits(cfg, SplitSizes{20, 20, 20, 20});
  std::string path = "test_instances.jsonl";
  write_instances_jsonl(path, d.eval);
  std::vector<Instance> back = read_instances_jsonl(path);
  REQUIRE(back.size() == d.eval.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    REQUIRE(back[i].id == d.eval[i].id);
    REQUIRE(back[i].tokens == d.eval[i].tokens);
    REQUIRE(back[i].label == d.eval[i].label);
    REQUIRE(back[i].template_id == d.eval[i].template_id);
    REQUIRE(back[i].split == d.eval[i].split);
  }

  std::vector<TeacherExample> teach = make_teacher_dataset(cfg, d.cold_start, 0.1);
  std::string tpath = "test_teacher.jsonl";
  write_teacher_jsonl(tpath, teach);
  std::vector<TeacherExample> tback = read_teacher_jsonl(tpath);
  REQUIRE(tback.size() == teach.size());
  for (std::size_t i = 0; i < tback.size(); ++i) {
    REQUIRE(tback[i].trace.trace_tokens == teach[i].trace.trace_tokens);
    REQUIRE(tback[i].trace.provisional == teach[i].trace.provisional);
    REQUIRE(tback[i].trace.is_corrupted == teach[i].trace.is_corrupted);
  }
  std::remove(path.c_str());
  std::remove(tpath.c_str());
}
