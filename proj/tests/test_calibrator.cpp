#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <vector>

#include "intuit/calibrator.hpp"

using namespace intuit;

namespace {

WorldConfig small_world() {
  WorldConfig cfg;
  cfg.seed = 13;
  return cfg;
}

ModelDims small_dims(const WorldConfig& cfg) {
  ModelDims dims;
  dims.vocab = cfg.vocab().size();
  dims.d_model = 16;
  dims.n_heads = 2;
  dims.d_ff = 32;
  return dims;
}

}  // namespace

TEST_CASE("encoding layout and round trip") {
  WorldConfig cfg = small_world();
  Vocab v = cfg.vocab();
  std::vector<int> x{v.evidence(0, 0), v.filler(1), v.evidence(1, 2)};
  std::vector<int> r{v.answer(0), v.count(2), v.answer(1), v.count(1)};

  EncodedInput enc = encode_calibration_input(x, r, 1, v, 160);
  REQUIRE_FALSE(enc.truncated);
  REQUIRE(enc.tokens.size() == x.size() + r.size() + 3);
  // decode: x up to the first <sep>, R up to the second, then the answer
  std::size_t s1 = 0;
  while (enc.tokens[s1] != v.sep()) s1++;
  REQUIRE(std::vector<int>(enc.tokens.begin(),
                           enc.tokens.begin() + static_cast<long>(s1)) == x);
  std::size_t s2 = s1 + 1;
  while (enc.tokens[s2] != v.sep()) s2++;
  REQUIRE(std::vector<int>(enc.tokens.begin() + static_cast<long>(s1) + 1,
                           enc.tokens.begin() + static_cast<long>(s2)) == r);
  REQUIRE(enc.tokens.back() == v.answer(1));

  // degenerate empty trace
  EncodedInput empty = encode_calibration_input(x, {}, 2, v, 160);
  REQUIRE(empty.tokens.size() == x.size() + 3);
  REQUIRE(empty.tokens[x.size()] == v.sep());
  REQUIRE(empty.tokens[x.size() + 1] == v.sep());
  REQUIRE(empty.tokens.back() == v.answer(2));

  // malformed provisional uses the dedicated token
  EncodedInput mal = encode_calibration_input(x, r, kMalformed, v, 160);
  REQUIRE(mal.tokens.back() == v.malformed());
}

TEST_CASE("overlong traces truncate from the left") {
  WorldConfig cfg = small_world();
  Vocab v = cfg.vocab();
  std::vector<int> x{v.evidence(0, 0), v.evidence(1, 0)};
  std::vector<int> r;
  for (int i = 0; i < 50; ++i) r.push_back(v.filler(i % 5));
  r.push_back(v.answer(3));  // the tail must survive

  int ctx = 20;
  EncodedInput enc = encode_calibration_input(x, r, 3, v, ctx);
  REQUIRE(enc.truncated);
  REQUIRE(enc.tokens.size() == static_cast<std::size_t>(ctx));
  REQUIRE(enc.tokens[enc.tokens.size() - 3] == v.answer(3));

  REQUIRE_THROWS_AS(
      encode_calibration_input(std::vector<int>(30, v.filler(0)), r, 0, v, 10),
      ContractError);
}

TEST_CASE("calibrate outputs a distribution and is deterministic") {
  WorldConfig cfg = small_world();
  Vocab v = cfg.vocab();
  Rng rng(2);
  CalibratorModel m = CalibratorModel::init(small_dims(cfg), cfg.num_classes,
                                            rng);
  std::vector<Instance> insts =
      generate_instances(cfg, cfg.train_templates, 10, Split::eval, 700);
  for (const Instance& inst : insts) {
    std::vector<int> r{v.answer(0), v.count(2)};
    CalibrationOutput out = calibrate(m, inst.tokens, r, 0, v);
    REQUIRE(out.probs.size() == static_cast<std::size_t>(cfg.num_classes));
    double sum = 0.0;
    for (double p : out.probs) {
      REQUIRE(p >= 0.0);
      sum += p;
    }
    REQUIRE_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-12));
    CalibrationOutput again = calibrate(m, inst.tokens, r, 0, v);
    REQUIRE(out.probs == again.probs);
    REQUIRE(out.prediction == again.prediction);

    // total on malformed provisional
    CalibrationOutput mal = calibrate(m, inst.tokens, {}, kMalformed, v);
    REQUIRE(mal.probs.size() == static_cast<std::size_t>(cfg.num_classes));
  }
}

TEST_CASE("inference path matches the differentiable path") {
  WorldConfig cfg = small_world();
  Vocab v = cfg.vocab();
  Rng rng(3);
  CalibratorModel m = CalibratorModel::init(small_dims(cfg), cfg.num_classes,
                                            rng);
  Instance inst =
      generate_instances(cfg, cfg.train_templates, 1, Split::eval, 710)[0];
  std::vector<int> r{v.answer(1), v.count(3), v.answer(2), v.count(1)};

  CalibrationOutput fast = calibrate(m, inst.tokens, r, 1, v);
  EncodedInput enc = encode_calibration_input(inst.tokens, r, 1, v,
                                              m.dims().max_context);
  Tape tape;
  Tensor logits = calibrate_logits(tape, m, enc.tokens);
  Tensor probs = softmax(tape, logits, 1.0);
  for (int c = 0; c < cfg.num_classes; ++c)
    REQUIRE_THAT(fast.probs[static_cast<std::size_t>(c)],
                 Catch::Matchers::WithinAbs(
                     probs.at(static_cast<std::size_t>(c)), 1e-10));
}

TEST_CASE("calibrator initialized from a policy checkpoint shares the backbone") {
  WorldConfig cfg = small_world();
  ModelDims dims = small_dims(cfg);
  Rng rng(4);
  PolicyModel policy = PolicyModel::init(dims, rng);
  checkpoint::save("cal_init.bin", policy.named_params());
  checkpoint::Loaded loaded = checkpoint::load("cal_init.bin");

  Rng rng2(5);
  CalibratorModel cal =
      CalibratorModel::init_from_policy(dims, cfg.num_classes, loaded, rng2);
  // float32 storage rounds the values
  const auto& a = policy.bb.tok_emb.values();
  const auto& b = cal.bb.tok_emb.values();
  for (std::size_t i = 0; i < a.size(); ++i)
    REQUIRE_THAT(b[i], Catch::Matchers::WithinAbs(a[i], 1e-6));
  std::remove("cal_init.bin");
}

TEST_CASE("echo-fit: noiseless provisional labels are learned") {
  WorldConfig cfg = small_world();
  Vocab v = cfg.vocab();
  std::vector<Instance> insts =
      generate_instances(cfg, cfg.train_templates, 40, Split::calibration, 800);
  std::vector<CalibrationRecord> data;
  for (const Instance& inst : insts) {
    Rng rng = Rng::stream(cfg.seed, static_cast<std::uint64_t>(4000 + inst.id));
    TeacherTrace t = teacher_reason(inst, cfg, 0.0, rng);
    CalibrationRecord rec;
    rec.instance_id = inst.id;
    rec.x = inst.tokens;
    rec.trace = t.trace_tokens;
    rec.provisional = t.provisional;  // == gold at zero noise
    rec.gold = inst.label;
    data.push_back(rec);
  }

  Rng rng(6);
  CalibratorModel m = CalibratorModel::init(small_dims(cfg), cfg.num_classes,
                                            rng);
  Hyperparams hp;
  hp.batch_size = 8;
  hp.lr = 3e-3;
  hp.calibration_epochs = 30;
  hp.seed = 4;
  std::vector<double> curve = train_calibration(m, data, v, hp);
  REQUIRE(curve.back() < curve.front());

  int agree = 0;
  for (const CalibrationRecord& r : data) {
    CalibrationOutput out = calibrate(m, r.x, r.trace, r.provisional, v);
    if (out.prediction == r.provisional) agree++;
  }
  REQUIRE(agree >= static_cast<int>(data.size() * 99) / 100);
}

TEST_CASE("calibration training edge cases") {
  WorldConfig cfg = small_world();
  Vocab v = cfg.vocab();
  std::vector<Instance> insts =
      generate_instances(cfg, cfg.train_templates, 8, Split::calibration, 900);
  std::vector<CalibrationRecord> data;
  for (const Instance& inst : insts) {
    Rng rng = Rng::stream(cfg.seed, static_cast<std::uint64_t>(5000 + inst.id));
    TeacherTrace t = teacher_reason(inst, cfg, 0.0, rng);
    data.push_back({inst.id, inst.tokens, t.trace_tokens, t.provisional,
                    inst.label, Trajectory::Source::teacher});
  }

  Hyperparams hp;
  hp.batch_size = 8;
  hp.lr = 3e-3;
  hp.seed = 5;

  // zero epochs: untouched parameters
  Rng rng(7);
  CalibratorModel m = CalibratorModel::init(small_dims(cfg), cfg.num_classes,
                                            rng);
  std::vector<double> before = m.w_head.values();
  hp.calibration_epochs = 0;
  train_calibration(m, data, v, hp);
  REQUIRE(m.w_head.values() == before);

  // 8-record overfit
  hp.calibration_epochs = 150;
  std::vector<double> curve = train_calibration(m, data, v, hp);
  REQUIRE(curve.back() < 0.05);

  REQUIRE_THROWS_AS(train_calibration(m, {}, v, hp), ContractError);
}

TEST_CASE("full_inference calibrates the greedy trajectory") {
  WorldConfig cfg = small_world();
  Vocab v = cfg.vocab();
  ModelDims dims = small_dims(cfg);
  Rng rng(8);
  PolicyModel policy = PolicyModel::init(dims, rng);
  CalibratorModel cal = CalibratorModel::init(dims, cfg.num_classes, rng);
  Instance inst =
      generate_instances(cfg, cfg.eval_templates, 1, Split::eval, 950)[0];
  SamplerConfig sc;
  sc.max_trace_tokens = 16;

  InferenceResult a = full_inference(policy, cal, inst.tokens, v, sc);
  InferenceResult b = full_inference(policy, cal, inst.tokens, v, sc);
  REQUIRE(a.traj.tokens == b.traj.tokens);
  REQUIRE(a.prediction == b.prediction);
  REQUIRE(a.probs == b.probs);
  REQUIRE(a.prediction >= 0);
  REQUIRE(a.prediction < cfg.num_classes);

  Trajectory g = greedy_decode(policy, v, inst.tokens, sc);
  REQUIRE(a.traj.tokens == g.tokens);
  CalibrationOutput c =
      calibrate(cal, inst.tokens, g.reasoning, g.provisional, v);
  REQUIRE(a.prediction == c.prediction);
}
