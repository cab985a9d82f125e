#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "intuit/checkpoint.hpp"
#include "intuit/metrics.hpp"
#include "intuit/reasoner.hpp"
#include "intuit/stages.hpp"
#include "intuit/tensor.hpp"
#include "intuit/worldgen.hpp"

namespace intuit {

struct CheckResult {
  bool ok = false;
  std::string detail;
};

// Numeric gradients on random mini-networks (a few hundred parameters each),
// checked against the tape for every parameter tensor in turn.
inline CheckResult check_autodiff(int networks = 20, double tol = 1e-4) {
  double worst = 0.0;
  for (int n = 0; n < networks; ++n) {
    Rng rng(static_cast<std::uint64_t>(100 + n));
    std::size_t in = 3 + rng.next_index(3);   // rows
    std::size_t d1 = 4 + rng.next_index(4);
    std::size_t d2 = 4 + rng.next_index(4);
    std::size_t classes = 2 + rng.next_index(3);
    Tensor x = Tensor::randn({in, d1}, rng, 1.0);
    Tensor w1 = Tensor::randn({d1, d2}, rng, 0.5);
    Tensor b1 = Tensor::randn({d2}, rng, 0.5);
    Tensor g1 = Tensor::randn({d2}, rng, 0.2);
    Tensor w2 = Tensor::randn({d2, classes}, rng, 0.5);
    std::vector<int> targets(in);
    for (std::size_t i = 0; i < in; ++i)
      targets[i] = static_cast<int>(rng.next_index(classes));

    for (Tensor* var : {&x, &w1, &b1, &g1, &w2}) {
      auto f = [&](Tape& tape, Tensor&) {
        Tensor h = add_row_vector(tape, matmul(tape, x, w1), b1);
        Tensor ones({g1.numel()}, false);
        for (std::size_t i = 0; i < ones.numel(); ++i) ones.at(i) = 1.0;
        h = layer_norm(tape, h, g1, ones, 1e-5);
        h = relu(tape, h);
        Tensor logits = matmul(tape, h, w2);
        return sequence_nll(tape, logits, targets);
      };
      worst = std::max(worst, finite_difference_check(f, *var, 1e-5));
    }
  }
  char buf[96];
  std::snprintf(buf, sizeof(buf), "max relative gradient error %.3e", worst);
  return {worst < tol, buf};
}

// Reduction identities of the group-weighted objective, plus softmax-weight
// algebra over random reward vectors.
inline CheckResult check_group_identities(int reward_trials = 1000,
                                          double grad_tol = 1e-9,
                                          double weight_tol = 1e-12) {
  WorldConfig world;
  world.seed = 5;
  Vocab v = world.vocab();
  ModelDims dims;
  dims.vocab = v.size();
  dims.d_model = 16;
  dims.n_heads = 2;
  dims.d_ff = 32;
  Instance inst =
      generate_instances(world, world.train_templates, 1, Split::grpo, 77)[0];
  SamplerConfig sc;
  sc.max_trace_tokens = 16;

  auto grads = [](PolicyModel& m) {
    std::vector<std::vector<double>> out;
    for (Tensor& p : m.params()) {
      p.ensure_grad();
      out.push_back(p.grad());
    }
    return out;
  };
  auto max_diff = [](const std::vector<std::vector<double>>& a,
                     const std::vector<std::vector<double>>& b) {
    double mx = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t j = 0; j < a[i].size(); ++j)
        mx = std::max(mx, std::fabs(a[i][j] - b[i][j]));
    return mx;
  };

  Rng model_rng(6);
  PolicyModel m = PolicyModel::init(dims, model_rng);
  Rng rng(7);
  double worst_grad = 0.0;

  // (a) singleton group == plain supervised gradient
  {
    Trajectory t = sample_trajectory(m, v, inst.tokens, sc, rng);
    for (Tensor& p : m.params()) p.zero_grad();
    grpo_accumulate(m, inst.tokens, {t}, {1.0}, 1.0);
    auto a = grads(m);
    for (Tensor& p : m.params()) p.zero_grad();
    Tape tape;
    tape.backward(trajectory_nll(tape, m, inst.tokens, t));
    worst_grad = std::max(worst_grad, max_diff(a, grads(m)));
  }

  // (b) equal rewards == mean supervised gradient over the group
  {
    int k = 4;
    std::vector<Trajectory> group = sample_group(m, v, inst.tokens, k, sc, rng);
    for (Tensor& p : m.params()) p.zero_grad();
    grpo_accumulate(m, inst.tokens, group,
                    group_weights(std::vector<double>(k, 0.3), 1.0), 1.0);
    auto a = grads(m);
    for (Tensor& p : m.params()) p.zero_grad();
    for (const Trajectory& t : group) {
      Tape tape;
      Tensor nll = trajectory_nll(tape, m, inst.tokens, t);
      tape.backward(scale(tape, nll, 1.0 / k));
    }
    worst_grad = std::max(worst_grad, max_diff(a, grads(m)));
  }

  // (c) weight normalization and shift invariance
  double worst_weight = 0.0;
  Rng wr(8);
  for (int trial = 0; trial < reward_trials; ++trial) {
    std::size_t k = 1 + wr.next_index(64);
    double tau = std::vector<double>{0.25, 1.0, 4.0}[wr.next_index(3)];
    std::vector<double> r(k);
    for (double& x : r) x = wr.next_gaussian() * 2.0;
    std::vector<double> w = group_weights(r, tau);
    double sum = 0.0;
    for (double x : w) sum += x;
    worst_weight = std::max(worst_weight, std::fabs(sum - 1.0));
    double c = wr.next_gaussian() * 4.0;
    std::vector<double> shifted = r;
    for (double& x : shifted) x += c;
    std::vector<double> w2 = group_weights(shifted, tau);
    for (std::size_t i = 0; i < k; ++i)
      worst_weight = std::max(worst_weight, std::fabs(w2[i] - w[i]));
  }

  char buf[128];
  std::snprintf(buf, sizeof(buf),
                "max gradient diff %.3e, max weight deviation %.3e",
                worst_grad, worst_weight);
  return {worst_grad < grad_tol && worst_weight < weight_tol, buf};
}

// Metrics against an independent brute-force oracle plus the frozen hand
// case.
inline CheckResult check_metric_oracle(int cases = 1000) {
  Rng rng(9);
  for (int trial = 0; trial < cases; ++trial) {
    int c = 2 + static_cast<int>(rng.next_index(5));
    std::size_t n = 1 + rng.next_index(50);
    std::vector<int> pred(n), gold(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = static_cast<int>(rng.next_index(static_cast<std::size_t>(c)));
      gold[i] = static_cast<int>(rng.next_index(static_cast<std::size_t>(c)));
    }
    MetricsReport r = confusion_and_scores(pred, gold, c);

    long agree = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (pred[i] == gold[i]) agree++;
    if (r.accuracy != static_cast<double>(agree) / static_cast<double>(n))
      return {false, "accuracy mismatch vs oracle"};
    double macro = 0.0;
    for (int k = 0; k < c; ++k) {
      long tp = 0, pc = 0, gc = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (pred[i] == k) pc++;
        if (gold[i] == k) gc++;
        if (pred[i] == k && gold[i] == k) tp++;
      }
      double f1 = 0.0;
      if (pc + gc > 0) f1 = 2.0 * tp / static_cast<double>(pc + gc);
      if (std::fabs(r.per_class_f1[static_cast<std::size_t>(k)] - f1) > 1e-12)
        return {false, "per-class F1 mismatch vs oracle"};
      macro += f1;
    }
    if (std::fabs(r.macro_f1 - macro / c) > 1e-12)
      return {false, "macro-F1 mismatch vs oracle"};
  }

  MetricsReport hand = confusion_and_scores({0, 0, 1, 1}, {0, 1, 1, 1}, 2);
  double expected = 11.0 / 15.0;  // (2/3 + 4/5) / 2, prints as 0.733333
  char buf[96];
  std::snprintf(buf, sizeof(buf), "hand case macro-F1 %.9f", hand.macro_f1);
  return {std::fabs(hand.macro_f1 - expected) < 1e-9, buf};
}

// Grammar round trips on random valid trajectories; checkpoint byte
// round trips on random models.
inline CheckResult check_round_trips(int parses = 10000, int models = 20) {
  WorldConfig world;
  Vocab v = world.vocab();
  Rng rng(10);
  for (int trial = 0; trial < parses; ++trial) {
    std::vector<int> reasoning;
    std::size_t len = rng.next_index(12);
    for (std::size_t i = 0; i < len; ++i) {
      int t;
      do {
        t = static_cast<int>(rng.next_index(static_cast<std::size_t>(v.size())));
      } while (v.is_structural(t));
      reasoning.push_back(t);
    }
    int answer = static_cast<int>(rng.next_index(
        static_cast<std::size_t>(world.num_classes)));
    std::vector<int> wrapped = serialize_trace(reasoning, answer, v);
    auto parsed = parse_trajectory(wrapped, v);
    if (!parsed || parsed->reasoning != reasoning || parsed->answer != answer)
      return {false, "parse(serialize) failed on trial " +
                         std::to_string(trial)};
  }

  ModelDims dims;
  dims.vocab = v.size();
  dims.d_model = 16;
  dims.n_heads = 2;
  dims.d_ff = 32;
  for (int n = 0; n < models; ++n) {
    Rng mr(static_cast<std::uint64_t>(500 + n));
    PolicyModel m = PolicyModel::init(dims, mr);
    std::string p1 = "check_rt_a.bin", p2 = "check_rt_b.bin";
    checkpoint::save(p1, m.named_params());
    checkpoint::Loaded loaded = checkpoint::load(p1);
    PolicyModel m2 = PolicyModel::init(dims, mr);
    checkpoint::restore(m2.named_params(), loaded);
    checkpoint::save(p2, m2.named_params());
    std::ifstream a(p1, std::ios::binary), b(p2, std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(a)),
                   std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(b)),
                   std::istreambuf_iterator<char>());
    std::remove(p1.c_str());
    std::remove(p2.c_str());
    if (sa != sb || sa.empty())
      return {false, "checkpoint round trip not byte-identical"};
  }
  return {true, std::to_string(parses) + " parses, " +
                    std::to_string(models) + " checkpoints exact"};
}

}  // namespace intuit
