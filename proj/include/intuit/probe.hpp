#pragma once

#include <cstdint>
#include <vector>

#include "intuit/adam.hpp"
#include "intuit/metrics.hpp"
#include "intuit/tensor.hpp"
#include "intuit/worldgen.hpp"

namespace intuit {

// Bag-of-tokens softmax regression. It sees raw token frequencies and no
// ordering, so it can exploit lexical correlations but not the adjacency
// structure the label rule depends on. Its train/eval gap measures how much
// of the task survives as surface statistics.
struct ProbeModel {
  Tensor w, b;  // V x C
  int num_classes = 0;
};

inline std::vector<double> bag_features(const std::vector<int>& tokens,
                                        int vocab_size) {
  std::vector<double> f(static_cast<std::size_t>(vocab_size), 0.0);
  for (int t : tokens) f[static_cast<std::size_t>(t)] += 1.0;
  double inv = tokens.empty() ? 0.0 : 1.0 / static_cast<double>(tokens.size());
  for (double& x : f) x *= inv;
  return f;
}

inline ProbeModel train_probe(const std::vector<Instance>& data,
                              int vocab_size, int num_classes,
                              int epochs = 300, double lr = 0.1,
                              std::uint64_t seed = 0) {
  if (data.empty()) throw ContractError("train_probe: empty dataset");
  std::size_t n = data.size();
  std::size_t v = static_cast<std::size_t>(vocab_size);
  Tensor x({n, v}, false);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> f = bag_features(data[i].tokens, vocab_size);
    for (std::size_t j = 0; j < v; ++j) x.at(i * v + j) = f[j];
    y[i] = data[i].label;
  }

  Rng rng(seed);
  ProbeModel m;
  m.w = Tensor::randn({v, static_cast<std::size_t>(num_classes)}, rng, 0.01);
  m.b = Tensor({static_cast<std::size_t>(num_classes)}, true);
  m.num_classes = num_classes;

  std::vector<Tensor> params{m.w, m.b};
  AdamState opt;
  opt.init_for(params);
  AdamConfig acfg;
  acfg.lr = lr;
  double inv_n = 1.0 / static_cast<double>(n);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (Tensor& p : params) p.zero_grad();
    Tape tape;
    Tensor logits = add_row_vector(tape, matmul(tape, x, m.w), m.b);
    Tensor loss = scale(tape, sequence_nll(tape, logits, y), inv_n);
    tape.backward(loss);
    adam_step(params, opt, acfg);
  }
  return m;
}

inline int probe_predict(const ProbeModel& m, const std::vector<int>& tokens) {
  std::size_t v = m.w.dim(0), c = m.w.dim(1);
  std::vector<double> f = bag_features(tokens, static_cast<int>(v));
  std::vector<double> logits(c, 0.0);
  for (std::size_t j = 0; j < v; ++j)
    for (std::size_t k = 0; k < c; ++k)
      logits[k] += f[j] * m.w.at(j * c + k);
  int best = 0;
  for (std::size_t k = 0; k < c; ++k) {
    logits[k] += m.b.at(k);
    if (logits[k] > logits[static_cast<std::size_t>(best)])
      best = static_cast<int>(k);
  }
  // ties resolved toward the smallest index by strict comparison above
  return best;
}

inline MetricsReport evaluate_probe(const ProbeModel& m,
                                    const std::vector<Instance>& data) {
  std::vector<int> pred, gold;
  for (const Instance& inst : data) {
    pred.push_back(probe_predict(m, inst.tokens));
    gold.push_back(inst.label);
  }
  return confusion_and_scores(pred, gold, m.num_classes);
}

}  // namespace intuit
