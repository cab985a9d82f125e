#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "intuit/calibrator.hpp"
#include "intuit/config.hpp"
#include "intuit/metrics.hpp"
#include "intuit/probe.hpp"
#include "intuit/stages.hpp"

namespace intuit {

inline ModelDims model_dims_for(const WorldConfig& world) {
  ModelDims dims;
  dims.vocab = world.vocab().size();
  return dims;
}

inline void copy_backbone(Backbone& from, Backbone& to) {
  auto a = from.named_params();
  auto b = to.named_params();
  for (std::size_t i = 0; i < a.size(); ++i)
    b[i].second.values() = a[i].second.values();
}

struct EvalOutcome {
  MetricsReport report;
  double malformed_rate = 0.0;
};

// Greedy-decode each instance and score the provisional answer. A malformed
// trajectory predicts no label; it is scored as an error by mapping it off
// the gold class.
inline EvalOutcome evaluate_provisional(const PolicyModel& policy,
                                        const std::vector<Instance>& data,
                                        const Vocab& v, int num_classes,
                                        const SamplerConfig& sampler) {
  EvalOutcome out;
  std::vector<int> pred, gold;
  long malformed = 0;
  for (const Instance& inst : data) {
    Trajectory t = greedy_decode(policy, v, inst.tokens, sampler);
    int p = t.provisional;
    if (t.malformed()) {
      malformed += 1;
      p = (inst.label + 1) % num_classes;
    }
    pred.push_back(p);
    gold.push_back(inst.label);
  }
  out.report = confusion_and_scores(pred, gold, num_classes);
  out.malformed_rate =
      data.empty() ? 0.0
                   : static_cast<double>(malformed) /
                         static_cast<double>(data.size());
  return out;
}

// Full inference path: frozen policy rollout, then the calibrator's decision.
// Confidence is the calibrated probability of the predicted class.
inline EvalOutcome evaluate_calibrated(const PolicyModel& policy,
                                       const CalibratorModel& calibrator,
                                       const std::vector<Instance>& data,
                                       const Vocab& v, int num_classes,
                                       const SamplerConfig& sampler) {
  EvalOutcome out;
  std::vector<int> pred, gold;
  std::vector<double> conf;
  std::vector<bool> correct;
  long malformed = 0;
  for (const Instance& inst : data) {
    InferenceResult r = full_inference(policy, calibrator, inst.tokens, v,
                                       sampler);
    if (r.traj.malformed()) malformed += 1;
    pred.push_back(r.prediction);
    gold.push_back(inst.label);
    conf.push_back(r.probs[static_cast<std::size_t>(r.prediction)]);
    correct.push_back(r.prediction == inst.label);
  }
  out.report = confusion_and_scores(pred, gold, num_classes);
  out.report.ece = expected_calibration_error(conf, correct);
  out.malformed_rate =
      data.empty() ? 0.0
                   : static_cast<double>(malformed) /
                         static_cast<double>(data.size());
  return out;
}

struct PipelineResult {
  PolicyModel stage1, stage2;
  CalibratorModel calibrator;
  std::vector<double> cold_start_curve;
  std::vector<GrpoStats> grpo_curve;
  std::vector<double> calibration_curve;
  std::size_t calibration_records = 0;
  EvalOutcome stage1_prov, stage2_prov, stage3_cal;
};

inline std::vector<Instance> round_batch(const std::vector<Instance>& pool,
                                         int round, int batch_size) {
  std::vector<Instance> out;
  out.reserve(static_cast<std::size_t>(batch_size));
  std::size_t start =
      (static_cast<std::size_t>(round) * static_cast<std::size_t>(batch_size)) %
      pool.size();
  for (int i = 0; i < batch_size; ++i)
    out.push_back(pool[(start + static_cast<std::size_t>(i)) % pool.size()]);
  return out;
}

// The three-stage protocol end to end: supervised alignment on teacher
// traces, group-weighted policy refinement, then the decision model trained
// on the refined policy's own rollouts.
inline PipelineResult run_pipeline(const RunConfig& cfg) {
  cfg.validate();
  const WorldConfig& world = cfg.world;
  Vocab v = world.vocab();
  ModelDims dims = model_dims_for(world);
  Datasets data = generate_splits(world, cfg.splits);
  std::vector<TeacherExample> teacher =
      make_teacher_dataset(world, data.cold_start, world.teacher_noise_rate);

  PipelineResult out;

  // stage 1
  {
    Rng rng(cfg.hyper.seed);
    out.stage1 = PolicyModel::init(dims, rng);
  }
  out.cold_start_curve =
      train_cold_start(out.stage1, teacher, world, cfg.hyper);
  out.stage1_prov = evaluate_provisional(out.stage1, data.eval, v,
                                         world.num_classes, cfg.sampler);

  // stage 2
  {
    Rng rng(cfg.hyper.seed);
    out.stage2 = PolicyModel::init(dims, rng);
  }
  copy_backbone(out.stage1.bb, out.stage2.bb);
  out.stage2.w_out.values() = out.stage1.w_out.values();
  out.stage2.b_out.values() = out.stage1.b_out.values();
  {
    AdamState opt;
    opt.init_for(out.stage2.params());
    Rng rng = Rng::stream(cfg.hyper.seed, 0x9d201ULL);
    for (int round = 0; round < cfg.hyper.grpo_rounds; ++round) {
      std::vector<Instance> batch =
          round_batch(data.grpo, round, cfg.hyper.batch_size);
      out.grpo_curve.push_back(grpo_round(out.stage2, opt, batch, world,
                                          cfg.hyper, cfg.rewards, cfg.sampler,
                                          rng));
    }
  }
  out.stage2_prov = evaluate_provisional(out.stage2, data.eval, v,
                                         world.num_classes, cfg.sampler);

  // stage 3
  std::vector<CalibrationRecord> cal_data;
  {
    Rng rng = Rng::stream(cfg.hyper.seed, 0xca1da7aULL);
    cal_data = build_calibration_dataset(out.stage2, data.calibration, world,
                                         cfg.hyper, cfg.sampler, rng);
  }
  out.calibration_records = cal_data.size();
  {
    Rng rng = Rng::stream(cfg.hyper.seed, 0xca1ULL);
    out.calibrator = CalibratorModel::init(dims, world.num_classes, rng);
  }
  copy_backbone(out.stage2.bb, out.calibrator.bb);
  out.calibration_curve =
      train_calibration(out.calibrator, cal_data, v, cfg.hyper);
  out.stage3_cal = evaluate_calibrated(out.stage2, out.calibrator, data.eval,
                                       v, world.num_classes, cfg.sampler);
  return out;
}

// ---- ablation harness ------------------------------------------------------

struct AblationRow {
  std::string stage;
  std::string trace_source;
  int trace_budget = 0;
  std::string backbone_tag;
  double imitation_f1 = 0.0;
  double calibration_f1 = 0.0;
  std::string config_hash;
  std::uint64_t seed = 0;
};

inline std::string ablation_csv_header() {
  return "stage,trace_source,trace_budget,backbone_tag,imitation_f1,"
         "calibration_f1,config_hash,seed";
}

inline std::string ablation_csv_row(const AblationRow& r) {
  char buf[64];
  std::string out = r.stage + "," + r.trace_source + "," +
                    std::to_string(r.trace_budget) + "," + r.backbone_tag;
  std::snprintf(buf, sizeof(buf), ",%.6f,%.6f,", r.imitation_f1,
                r.calibration_f1);
  out += buf;
  out += r.config_hash + "," + std::to_string(r.seed);
  return out;
}

inline void write_ablation_csv(const std::string& path,
                               const std::vector<AblationRow>& rows) {
  std::ofstream f(path);
  if (!f) throw TensorError("cannot open " + path + " for writing");
  f << ablation_csv_header() << "\n";
  for (const AblationRow& r : rows) f << ablation_csv_row(r) << "\n";
}

// Decision model trained on self-generated traces vs. traces from the
// scripted teacher, both judged with the refined policy's own rollouts.
inline std::vector<AblationRow> source_ablation_rows(const RunConfig& cfg,
                                                     PipelineResult& pipe) {
  const WorldConfig& world = cfg.world;
  Vocab v = world.vocab();
  ModelDims dims = model_dims_for(world);
  Datasets data = generate_splits(world, cfg.splits);

  std::vector<CalibrationRecord> teacher_data;
  for (const TeacherExample& ex : make_teacher_dataset(
           world, data.calibration, world.teacher_noise_rate)) {
    CalibrationRecord r;
    r.instance_id = ex.instance.id;
    r.x = ex.instance.tokens;
    r.trace = ex.trace.trace_tokens;
    r.provisional = ex.trace.provisional;
    r.gold = ex.instance.label;
    r.source = Trajectory::Source::teacher;
    teacher_data.push_back(std::move(r));
  }
  CalibratorModel teacher_cal;
  {
    Rng rng = Rng::stream(cfg.hyper.seed, 0xca1ULL);
    teacher_cal = CalibratorModel::init(dims, world.num_classes, rng);
  }
  copy_backbone(pipe.stage2.bb, teacher_cal.bb);
  train_calibration(teacher_cal, teacher_data, v, cfg.hyper);
  EvalOutcome teacher_eval =
      evaluate_calibrated(pipe.stage2, teacher_cal, data.eval, v,
                          world.num_classes, cfg.sampler);

  std::string hash = config_hash_hex(cfg);
  AblationRow self{"stage3",   "self",
                   cfg.sampler.max_trace_tokens,
                   "stage2",   pipe.stage2_prov.report.macro_f1,
                   pipe.stage3_cal.report.macro_f1,
                   hash,       cfg.hyper.seed};
  AblationRow teach{"stage3",  "teacher",
                    cfg.sampler.max_trace_tokens,
                    "stage2",  pipe.stage2_prov.report.macro_f1,
                    teacher_eval.report.macro_f1,
                    hash,      cfg.hyper.seed};
  return {self, teach};
}

inline std::vector<AblationRow> run_source_ablation(const RunConfig& cfg) {
  PipelineResult pipe = run_pipeline(cfg);
  return source_ablation_rows(cfg, pipe);
}

// Reasoning-budget sweep. The whole system — both policy stages and the
// decision model — is trained once with the config's own budget; each row
// then evaluates that fixed system while capping how much reasoning the
// policy may emit at inference time. The sweep therefore isolates the value
// of the emitted reasoning itself: at budget 0 every rollout is malformed
// and the decision model sees only the input sequence.
inline std::vector<AblationRow> length_sweep_rows(
    const RunConfig& cfg, PipelineResult& pipe,
    const std::vector<int>& budgets) {
  const WorldConfig& world = cfg.world;
  Vocab v = world.vocab();
  Datasets data = generate_splits(world, cfg.splits);

  std::vector<AblationRow> rows;
  for (int budget : budgets) {
    RunConfig c = cfg;
    c.sampler.max_trace_tokens = budget;
    EvalOutcome ev =
        evaluate_calibrated(pipe.stage2, pipe.calibrator, data.eval, v,
                            world.num_classes, c.sampler);
    rows.push_back({"stage3", "self", budget, "stage2",
                    pipe.stage2_prov.report.macro_f1, ev.report.macro_f1,
                    config_hash_hex(c), c.hyper.seed});
  }
  return rows;
}

inline std::vector<AblationRow> run_length_sweep(
    const RunConfig& cfg, const std::vector<int>& budgets) {
  PipelineResult pipe = run_pipeline(cfg);
  return length_sweep_rows(cfg, pipe, budgets);
}

// Provisional ("imitation") vs. calibrated macro-F1 for the stage-1 and
// stage-2 policies, each paired with a decision model trained on its own
// rollouts.
inline std::vector<AblationRow> run_imitation_vs_calibration(
    const RunConfig& cfg) {
  PipelineResult pipe = run_pipeline(cfg);
  const WorldConfig& world = cfg.world;
  Vocab v = world.vocab();
  ModelDims dims = model_dims_for(world);
  Datasets data = generate_splits(world, cfg.splits);

  std::vector<CalibrationRecord> cal1_data;
  {
    Rng rng = Rng::stream(cfg.hyper.seed, 0xca1da7aULL);
    cal1_data = build_calibration_dataset(pipe.stage1, data.calibration,
                                          world, cfg.hyper, cfg.sampler, rng);
  }
  CalibratorModel cal1;
  {
    Rng rng = Rng::stream(cfg.hyper.seed, 0xca1ULL);
    cal1 = CalibratorModel::init(dims, world.num_classes, rng);
  }
  copy_backbone(pipe.stage1.bb, cal1.bb);
  train_calibration(cal1, cal1_data, v, cfg.hyper);
  EvalOutcome cal1_eval = evaluate_calibrated(
      pipe.stage1, cal1, data.eval, v, world.num_classes, cfg.sampler);

  std::string hash = config_hash_hex(cfg);
  return {{"stage1", "self", cfg.sampler.max_trace_tokens, "stage1",
           pipe.stage1_prov.report.macro_f1, cal1_eval.report.macro_f1, hash,
           cfg.hyper.seed},
          {"stage2", "self", cfg.sampler.max_trace_tokens, "stage2",
           pipe.stage2_prov.report.macro_f1,
           pipe.stage3_cal.report.macro_f1, hash, cfg.hyper.seed}};
}

inline std::vector<AblationRow> run_tau_sweep(const RunConfig& cfg,
                                              const std::vector<double>& taus) {
  std::vector<AblationRow> rows;
  for (double tau : taus) {
    RunConfig c = cfg;
    c.hyper.tau = tau;
    PipelineResult pipe = run_pipeline(c);
    char tag[32];
    std::snprintf(tag, sizeof(tag), "tau=%g", tau);
    rows.push_back({"stage3", "self", c.sampler.max_trace_tokens, tag,
                    pipe.stage2_prov.report.macro_f1,
                    pipe.stage3_cal.report.macro_f1, config_hash_hex(c),
                    c.hyper.seed});
  }
  return rows;
}

// Criterion harness for the surface-statistics gap: the probe is trained on
// train-template instances and scored on fresh instances from both families.
struct ProbeGapResult {
  double train_family_f1 = 0.0;
  double eval_family_f1 = 0.0;
  double gap() const { return train_family_f1 - eval_family_f1; }
};

inline ProbeGapResult run_probe_gap(const WorldConfig& world, int train_n,
                                    int test_n) {
  Vocab v = world.vocab();
  std::vector<Instance> train = generate_instances(
      world, world.train_templates, train_n, Split::cold_start, 1000000);
  std::vector<Instance> held_train = generate_instances(
      world, world.train_templates, test_n, Split::eval, 2000000);
  std::vector<Instance> held_eval = generate_instances(
      world, world.eval_templates, test_n, Split::eval, 3000000);
  ProbeModel probe =
      train_probe(train, v.size(), world.num_classes, 300, 0.1, world.seed);
  ProbeGapResult out;
  out.train_family_f1 = evaluate_probe(probe, held_train).macro_f1;
  out.eval_family_f1 = evaluate_probe(probe, held_eval).macro_f1;
  return out;
}

}  // namespace intuit
