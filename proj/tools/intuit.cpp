#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "intuit/checks.hpp"
#include "intuit/pipeline.hpp"

namespace fs = std::filesystem;
using namespace intuit;

namespace {

struct Cli {
  std::string config_path;
  std::vector<std::string> sets;
  bool force = false;
};

RunConfig build_config(const Cli& cli) {
  RunConfig cfg;
  if (!cli.config_path.empty()) cfg = load_config(cli.config_path);
  for (const std::string& s : cli.sets) apply_config_line(cfg, s);
  if (const char* dir = std::getenv("INTUIT_REPORT_DIR"))
    cfg.paths.report_dir = dir;
  cfg.validate();
  return cfg;
}

std::string ckpt_path(const RunConfig& cfg, const std::string& stage) {
  return cfg.paths.checkpoint_dir + "/" + stage + ".ckpt";
}
std::string manifest_path(const RunConfig& cfg, const std::string& stage) {
  return cfg.paths.checkpoint_dir + "/" + stage + ".manifest.json";
}

void write_manifest(const RunConfig& cfg, const std::string& stage) {
  std::ofstream f(manifest_path(cfg, stage));
  f << run_manifest(stage, cfg).dump(2) << "\n";
}

// Strict stage ordering: the input checkpoint must exist and its manifest
// must carry the same config hash, unless --force.
void require_stage(const RunConfig& cfg, const std::string& stage,
                   bool force) {
  if (!fs::exists(ckpt_path(cfg, stage)))
    throw TensorError("stage '" + stage + "' has not produced " +
                      ckpt_path(cfg, stage) + " (run it first or use --force)");
  if (force) return;
  std::ifstream f(manifest_path(cfg, stage));
  if (!f)
    throw TensorError("missing manifest for stage '" + stage +
                      "' (use --force to override)");
  nlohmann::json m = nlohmann::json::parse(f);
  if (m.value("config_hash", "") != config_hash_hex(cfg))
    throw TensorError("config hash mismatch with stage '" + stage +
                      "' manifest (use --force to override)");
}

std::string teacher_path(const RunConfig& cfg) {
  return cfg.paths.data_dir + "/teacher.jsonl";
}
std::string split_path(const RunConfig& cfg, Split s) {
  return cfg.paths.data_dir + "/" + split_name(s) + ".jsonl";
}

int cmd_gen_data(const RunConfig& cfg) {
  fs::create_directories(cfg.paths.data_dir);
  Datasets d = generate_splits(cfg.world, cfg.splits);
  write_instances_jsonl(split_path(cfg, Split::cold_start), d.cold_start);
  write_instances_jsonl(split_path(cfg, Split::grpo), d.grpo);
  write_instances_jsonl(split_path(cfg, Split::calibration), d.calibration);
  write_instances_jsonl(split_path(cfg, Split::eval), d.eval);
  write_teacher_jsonl(teacher_path(cfg),
                      make_teacher_dataset(cfg.world, d.cold_start,
                                           cfg.world.teacher_noise_rate));
  std::ofstream f(cfg.paths.data_dir + "/manifest.json");
  f << run_manifest("gen-data", cfg).dump(2) << "\n";
  std::printf("wrote %d/%d/%d/%d instances to %s (config %s)\n",
              cfg.splits.cold_start, cfg.splits.grpo, cfg.splits.calibration,
              cfg.splits.eval, cfg.paths.data_dir.c_str(),
              config_hash_hex(cfg).c_str());
  return 0;
}

int cmd_train_cold_start(const RunConfig& cfg) {
  fs::create_directories(cfg.paths.checkpoint_dir);
  std::vector<TeacherExample> teacher = read_teacher_jsonl(teacher_path(cfg));
  ModelDims dims = model_dims_for(cfg.world);
  Rng rng(cfg.hyper.seed);
  PolicyModel model = PolicyModel::init(dims, rng);
  std::vector<double> curve =
      train_cold_start(model, teacher, cfg.world, cfg.hyper);
  checkpoint::save(ckpt_path(cfg, "cold_start"), model.named_params());
  write_manifest(cfg, "cold_start");
  std::printf("cold-start: %zu epochs, final NLL/token %.4f -> %s\n",
              curve.size(), curve.empty() ? 0.0 : curve.back(),
              ckpt_path(cfg, "cold_start").c_str());
  return 0;
}

int cmd_train_grpo(const RunConfig& cfg, bool force) {
  require_stage(cfg, "cold_start", force);
  std::vector<Instance> pool = read_instances_jsonl(split_path(cfg, Split::grpo));
  ModelDims dims = model_dims_for(cfg.world);
  Rng init_rng(cfg.hyper.seed);
  PolicyModel model = PolicyModel::init(dims, init_rng);
  checkpoint::restore(model.named_params(),
                      checkpoint::load(ckpt_path(cfg, "cold_start")));
  AdamState opt;
  opt.init_for(model.params());
  Rng rng = Rng::stream(cfg.hyper.seed, 0x9d201ULL);
  std::string stats_path = cfg.paths.checkpoint_dir + "/grpo_stats.csv";
  std::ofstream stats(stats_path);
  stats << "round,loss,mean_reward,reward_variance,malformed_rate,"
           "mean_correct\n";
  for (int round = 0; round < cfg.hyper.grpo_rounds; ++round) {
    GrpoStats st = grpo_round(model, opt,
                              round_batch(pool, round, cfg.hyper.batch_size),
                              cfg.world, cfg.hyper, cfg.rewards, cfg.sampler,
                              rng);
    stats << round << "," << st.loss << "," << st.mean_reward << ","
          << st.reward_variance << "," << st.malformed_rate << ","
          << st.mean_correct << "\n";
    if (st.all_malformed_warning)
      std::fprintf(stderr, "warning: round %d sampled only malformed "
                           "trajectories\n", round);
  }
  checkpoint::save(ckpt_path(cfg, "grpo"), model.named_params());
  write_manifest(cfg, "grpo");
  std::printf("grpo: %d rounds, stats in %s -> %s\n", cfg.hyper.grpo_rounds,
              stats_path.c_str(), ckpt_path(cfg, "grpo").c_str());
  return 0;
}

int cmd_build_cal_data(const RunConfig& cfg, bool force) {
  require_stage(cfg, "grpo", force);
  std::vector<Instance> pool =
      read_instances_jsonl(split_path(cfg, Split::calibration));
  ModelDims dims = model_dims_for(cfg.world);
  Rng init_rng(cfg.hyper.seed);
  PolicyModel model = PolicyModel::init(dims, init_rng);
  checkpoint::restore(model.named_params(),
                      checkpoint::load(ckpt_path(cfg, "grpo")));
  Rng rng = Rng::stream(cfg.hyper.seed, 0xca1da7aULL);
  std::vector<CalibrationRecord> recs = build_calibration_dataset(
      model, pool, cfg.world, cfg.hyper, cfg.sampler, rng);
  std::string path = cfg.paths.data_dir + "/calibration_records.jsonl";
  write_calibration_jsonl(path, recs);
  std::printf("calibration data: %zu records -> %s\n", recs.size(),
              path.c_str());
  return 0;
}

int cmd_train_calibration(const RunConfig& cfg, bool force) {
  require_stage(cfg, "grpo", force);
  std::string data_path = cfg.paths.data_dir + "/calibration_records.jsonl";
  std::vector<CalibrationRecord> recs = read_calibration_jsonl(data_path);
  ModelDims dims = model_dims_for(cfg.world);
  Rng rng = Rng::stream(cfg.hyper.seed, 0xca1ULL);
  CalibratorModel model = CalibratorModel::init_from_policy(
      dims, cfg.world.num_classes, checkpoint::load(ckpt_path(cfg, "grpo")),
      rng);
  std::vector<double> curve =
      train_calibration(model, recs, cfg.world.vocab(), cfg.hyper);
  checkpoint::save(ckpt_path(cfg, "calibrator"), model.named_params(),
                   {static_cast<std::uint32_t>(dims.d_model),
                    static_cast<std::uint32_t>(cfg.world.num_classes)});
  write_manifest(cfg, "calibrator");
  std::printf("calibration: %zu records, final loss %.4f -> %s\n",
              recs.size(), curve.empty() ? 0.0 : curve.back(),
              ckpt_path(cfg, "calibrator").c_str());
  return 0;
}

int cmd_eval(const RunConfig& cfg, bool force) {
  require_stage(cfg, "grpo", force);
  require_stage(cfg, "calibrator", force);
  fs::create_directories(cfg.paths.report_dir);
  std::vector<Instance> eval_set =
      read_instances_jsonl(split_path(cfg, Split::eval));
  Vocab v = cfg.world.vocab();
  ModelDims dims = model_dims_for(cfg.world);

  Rng r1(cfg.hyper.seed);
  PolicyModel policy = PolicyModel::init(dims, r1);
  checkpoint::restore(policy.named_params(),
                      checkpoint::load(ckpt_path(cfg, "grpo")));
  Rng r2 = Rng::stream(cfg.hyper.seed, 0xca1ULL);
  CalibratorModel calibrator = CalibratorModel::init_from_policy(
      dims, cfg.world.num_classes, checkpoint::load(ckpt_path(cfg, "grpo")),
      r2);
  checkpoint::restore(calibrator.named_params(),
                      checkpoint::load(ckpt_path(cfg, "calibrator")));

  EvalOutcome prov = evaluate_provisional(policy, eval_set, v,
                                          cfg.world.num_classes, cfg.sampler);
  EvalOutcome cal = evaluate_calibrated(policy, calibrator, eval_set, v,
                                        cfg.world.num_classes, cfg.sampler);
  nlohmann::json j;
  j["manifest"] = run_manifest("eval", cfg);
  j["provisional"] = prov.report.to_json();
  j["provisional"]["malformed_rate"] = prov.malformed_rate;
  j["calibrated"] = cal.report.to_json();
  std::string path = cfg.paths.report_dir + "/metrics.json";
  std::ofstream f(path);
  f << j.dump(2) << "\n";
  std::printf("eval: provisional macro-F1 %.4f, calibrated macro-F1 %.4f "
              "(ece %.4f) -> %s\n",
              prov.report.macro_f1, cal.report.macro_f1, cal.report.ece,
              path.c_str());
  return 0;
}

int cmd_ablate(const RunConfig& cfg, const std::string& which) {
  fs::create_directories(cfg.paths.report_dir);
  std::vector<AblationRow> rows;
  if (which == "length-sweep")
    rows = run_length_sweep(cfg, {0, 16, 48, 128});
  else if (which == "source")
    rows = run_source_ablation(cfg);
  else if (which == "imitation-vs-calibration")
    rows = run_imitation_vs_calibration(cfg);
  else if (which == "tau-sweep")
    rows = run_tau_sweep(cfg, {0.25, 0.5, 1.0, 2.0});
  else
    throw ParameterError("unknown ablation '" + which + "'");
  std::string path = cfg.paths.report_dir + "/ablation_" + which + ".csv";
  write_ablation_csv(path, rows);
  std::printf("%s\n", ablation_csv_header().c_str());
  for (const AblationRow& r : rows)
    std::printf("%s\n", ablation_csv_row(r).c_str());
  std::printf("-> %s\n", path.c_str());
  return 0;
}

int cmd_verify() {
  struct Named {
    const char* name;
    CheckResult result;
  };
  std::vector<Named> checks{
      {"autodiff", check_autodiff()},
      {"group-identities", check_group_identities()},
      {"metric-oracle", check_metric_oracle()},
      {"round-trips", check_round_trips()},
  };
  bool ok = true;
  for (const Named& c : checks) {
    std::printf("%-18s %s (%s)\n", c.name, c.result.ok ? "pass" : "FAIL",
                c.result.detail.c_str());
    ok = ok && c.result.ok;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"three-stage reasoning/calibration laboratory"};
  app.require_subcommand(1);
  Cli cli;
  app.add_option("-c,--config", cli.config_path, "key = value config file");
  app.add_option("--set", cli.sets, "override, e.g. --set hyper.lr=0.003");
  app.add_flag("--force", cli.force, "skip stage-ordering manifest checks");

  auto* gen = app.add_subcommand("gen-data", "generate dataset splits");
  auto* train = app.add_subcommand("train", "run a training stage");
  train->require_subcommand(1);
  auto* cs = train->add_subcommand("cold-start", "supervised alignment");
  auto* gr = train->add_subcommand("grpo", "group-weighted refinement");
  auto* ca = train->add_subcommand("calibration", "decision model");
  auto* cal_data =
      app.add_subcommand("build-cal-data", "rollout calibration records");
  auto* ev = app.add_subcommand("eval", "evaluate on the held-out family");
  auto* ab = app.add_subcommand("ablate", "run an ablation table");
  std::string which;
  ab->add_option("which", which,
                 "length-sweep | source | imitation-vs-calibration | tau-sweep")
      ->required();
  auto* ver = app.add_subcommand("verify", "fast invariant suite");

  CLI11_PARSE(app, argc, argv);

  try {
    if (ver->parsed()) return cmd_verify();
    RunConfig cfg = build_config(cli);
    if (gen->parsed()) return cmd_gen_data(cfg);
    if (cs->parsed()) return cmd_train_cold_start(cfg);
    if (gr->parsed()) return cmd_train_grpo(cfg, cli.force);
    if (ca->parsed()) return cmd_train_calibration(cfg, cli.force);
    if (cal_data->parsed()) return cmd_build_cal_data(cfg, cli.force);
    if (ev->parsed()) return cmd_eval(cfg, cli.force);
    if (ab->parsed()) return cmd_ablate(cfg, which);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
