#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "intuit/checkpoint.hpp"
#include "intuit/model.hpp"
#include "intuit/reasoner.hpp"
#include "intuit/stages.hpp"
#include "intuit/tensor.hpp"

namespace intuit {

// Decision model: same backbone as the policy plus a classification head
// read at the final position of the encoded (x, R, provisional) input.
struct CalibratorModel {
  Backbone bb;
  Tensor w_head, b_head;  // d x C
  int num_classes = 0;

  static CalibratorModel init(const ModelDims& dims, int num_classes,
                              Rng& rng) {
    CalibratorModel m;
    m.bb = Backbone::init(dims, rng);
    m.w_head = Tensor::randn({static_cast<std::size_t>(dims.d_model),
                              static_cast<std::size_t>(num_classes)},
                             rng, 0.02);
    m.b_head = Tensor({static_cast<std::size_t>(num_classes)}, true);
    m.num_classes = num_classes;
    return m;
  }

  // Fresh head, backbone weights copied from a policy checkpoint.
  static CalibratorModel init_from_policy(const ModelDims& dims,
                                          int num_classes,
                                          const checkpoint::Loaded& policy,
                                          Rng& rng) {
    CalibratorModel m = init(dims, num_classes, rng);
    checkpoint::restore(m.bb.named_params(), policy);
    return m;
  }

  const ModelDims& dims() const { return bb.dims; }

  std::vector<std::pair<std::string, Tensor>> named_params() {
    auto out = bb.named_params();
    out.emplace_back("w_head", w_head);
    out.emplace_back("b_head", b_head);
    return out;
  }
  std::vector<Tensor> params() {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_params()) out.push_back(t);
    return out;
  }
};

struct EncodedInput {
  std::vector<int> tokens;
  bool truncated = false;
};

// [x ; <sep> ; R ; <sep> ; provisional-answer token or <malformed>], with R
// truncated from the left when the total would exceed the context window.
// The tail survives truncation because it carries the conclusion tokens.
inline EncodedInput encode_calibration_input(const std::vector<int>& x,
                                             const std::vector<int>& trace,
                                             int provisional, const Vocab& v,
                                             int max_context) {
  std::size_t overhead = x.size() + 3;
  if (overhead > static_cast<std::size_t>(max_context))
    throw ContractError("encode_calibration_input: instance alone exceeds "
                        "the context window");
  EncodedInput out;
  std::size_t budget = static_cast<std::size_t>(max_context) - overhead;
  std::size_t start = 0;
  if (trace.size() > budget) {
    start = trace.size() - budget;
    out.truncated = true;
  }
  out.tokens.reserve(overhead + trace.size() - start);
  out.tokens.insert(out.tokens.end(), x.begin(), x.end());
  out.tokens.push_back(v.sep());
  out.tokens.insert(out.tokens.end(),
                    trace.begin() + static_cast<long>(start), trace.end());
  out.tokens.push_back(v.sep());
  out.tokens.push_back(provisional == kMalformed ? v.malformed()
                                                 : v.answer(provisional));
  return out;
}

struct CalibrationOutput {
  std::vector<double> probs;
  int prediction = 0;  // argmax, smallest index on ties
};

// Tape-free inference path.
inline CalibrationOutput calibrate(const CalibratorModel& model,
                                   const std::vector<int>& x,
                                   const std::vector<int>& trace,
                                   int provisional, const Vocab& v) {
  EncodedInput enc = encode_calibration_input(x, trace, provisional, v,
                                              model.dims().max_context);
  BackboneState st(model.bb);
  for (int t : enc.tokens) st.append(t);
  const std::vector<double>& h = st.hidden();

  std::size_t d = model.w_head.dim(0), c = model.w_head.dim(1);
  std::vector<double> logits(c, 0.0);
  const double* wd = model.w_head.values().data();
  for (std::size_t p = 0; p < d; ++p) {
    double hv = h[p];
    const double* row = wd + p * c;
    for (std::size_t j = 0; j < c; ++j) logits[j] += hv * row[j];
  }
  for (std::size_t j = 0; j < c; ++j) logits[j] += model.b_head.at(j);

  CalibrationOutput out;
  out.probs.resize(c);
  detail::softmax_row(logits.data(), out.probs.data(), c, 1.0);
  for (std::size_t j = 1; j < c; ++j)
    if (out.probs[j] > out.probs[static_cast<std::size_t>(out.prediction)])
      out.prediction = static_cast<int>(j);
  return out;
}

// Differentiable path: class logits as a 1 x C row at the final position.
inline Tensor calibrate_logits(Tape& tape, CalibratorModel& model,
                               const std::vector<int>& tokens) {
  Tensor h = backbone_hidden(tape, model.bb, tokens);
  Tensor last = slice_rows(tape, h, tokens.size() - 1, 1);
  return add_row_vector(tape, matmul(tape, last, model.w_head), model.b_head);
}

// Minimizes cross-entropy of the calibrator's class logits against gold.
// Returns the per-epoch mean loss.
inline std::vector<double> train_calibration(
    CalibratorModel& model, const std::vector<CalibrationRecord>& data,
    const Vocab& v, const Hyperparams& hp) {
  hp.validate();
  if (data.empty()) throw ContractError("train_calibration: empty dataset");
  std::vector<EncodedInput> encoded;
  encoded.reserve(data.size());
  for (const CalibrationRecord& r : data)
    encoded.push_back(encode_calibration_input(r.x, r.trace, r.provisional, v,
                                               model.dims().max_context));

  std::vector<Tensor> params = model.params();
  AdamState opt;
  opt.init_for(params);
  AdamConfig acfg = hp.adam();

  std::vector<double> curve;
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (int epoch = 0; epoch < hp.calibration_epochs; ++epoch) {
    Rng shuf = Rng::stream(hp.seed, 0xca11b000ULL + static_cast<std::uint64_t>(epoch));
    shuf.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(hp.batch_size)) {
      std::size_t end = std::min(order.size(),
                                 start + static_cast<std::size_t>(hp.batch_size));
      double inv = 1.0 / static_cast<double>(end - start);
      for (Tensor& p : params) p.zero_grad();
      for (std::size_t i = start; i < end; ++i) {
        Tape tape;
        Tensor logits = calibrate_logits(tape, model, encoded[order[i]].tokens);
        Tensor loss = sequence_nll(tape, logits, {data[order[i]].gold});
        double val = loss.item();
        if (!std::isfinite(val))
          throw TensorError("train_calibration: non-finite loss at epoch " +
                            std::to_string(epoch));
        loss_sum += val;
        tape.backward(scale(tape, loss, inv));
      }
      adam_step(params, opt, acfg);
    }
    curve.push_back(loss_sum / static_cast<double>(data.size()));
  }
  return curve;
}

struct InferenceResult {
  Trajectory traj;
  int prediction = 0;
  std::vector<double> probs;
};

// Greedy-decode a trajectory with the frozen policy, then calibrate.
inline InferenceResult full_inference(const PolicyModel& policy,
                                      const CalibratorModel& calibrator,
                                      const std::vector<int>& x, const Vocab& v,
                                      const SamplerConfig& cfg) {
  InferenceResult out;
  out.traj = greedy_decode(policy, v, x, cfg);
  CalibrationOutput c =
      calibrate(calibrator, x, out.traj.reasoning, out.traj.provisional, v);
  out.prediction = c.prediction;
  out.probs = std::move(c.probs);
  return out;
}

}  // namespace intuit
