#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "intuit/model.hpp"
#include "intuit/rng.hpp"
#include "intuit/tensor.hpp"
#include "intuit/vocab.hpp"

namespace intuit {

// Provisional label for trajectories that violate the trace grammar.
constexpr int kMalformed = -1;

struct SamplerConfig {
  double temperature = 1.0;
  int max_trace_tokens = 128;  // budget on generated tokens
  std::uint64_t seed = 0;

  void validate() const {
    if (temperature <= 0.0)
      throw ParameterError("sampler: temperature must be positive");
    if (max_trace_tokens < 0)
      throw ParameterError("sampler: max_trace_tokens must be >= 0");
  }
};

struct Trajectory {
  enum class Source { teacher, rollout };

  // Wrapped token sequence: <think> ... </answer>, exactly as generated
  // (or as serialized for teacher traces).
  std::vector<int> tokens;
  std::vector<int> reasoning;  // R, the parsed think-block content
  int trace_len = 0;           // T = |R| (generated count when malformed)
  int provisional = kMalformed;
  double log_prob = 0.0;  // model log-probability of the generated suffix
  Source source = Source::rollout;
  long parent_instance_id = -1;

  bool malformed() const { return provisional == kMalformed; }
};

struct ParsedTrace {
  std::vector<int> reasoning;
  int answer = 0;
};

// Validates <think> R </think> <answer> c </answer> with a single in-range
// answer token and no structural tokens inside the think block.
inline std::optional<ParsedTrace> parse_trajectory(
    const std::vector<int>& tokens, const Vocab& v) {
  if (tokens.size() < 5) return std::nullopt;
  if (tokens.front() != v.think_open()) return std::nullopt;
  std::size_t close = 0;
  for (std::size_t i = 1; i < tokens.size(); ++i) {
    if (tokens[i] == v.think_close()) {
      close = i;
      break;
    }
    if (v.is_structural(tokens[i])) return std::nullopt;
  }
  if (close == 0) return std::nullopt;
  if (close + 4 != tokens.size()) return std::nullopt;
  if (tokens[close + 1] != v.answer_open()) return std::nullopt;
  if (!v.is_answer(tokens[close + 2])) return std::nullopt;
  if (tokens[close + 3] != v.answer_close()) return std::nullopt;
  ParsedTrace out;
  out.reasoning.assign(tokens.begin() + 1,
                       tokens.begin() + static_cast<long>(close));
  out.answer = v.answer_class(tokens[close + 2]);
  return out;
}

inline std::vector<int> serialize_trace(const std::vector<int>& reasoning,
                                        int answer, const Vocab& v) {
  std::vector<int> out;
  out.reserve(reasoning.size() + 5);
  out.push_back(v.think_open());
  out.insert(out.end(), reasoning.begin(), reasoning.end());
  out.push_back(v.think_close());
  out.push_back(v.answer_open());
  out.push_back(v.answer(answer));
  out.push_back(v.answer_close());
  return out;
}

// The policy g: backbone plus a next-token projection.
struct PolicyModel {
  Backbone bb;
  Tensor w_out, b_out;

  static PolicyModel init(const ModelDims& dims, Rng& rng) {
    PolicyModel m;
    m.bb = Backbone::init(dims, rng);
    m.w_out = Tensor::randn({static_cast<std::size_t>(dims.d_model),
                             static_cast<std::size_t>(dims.vocab)},
                            rng, 0.02);
    m.b_out = Tensor({static_cast<std::size_t>(dims.vocab)}, true);
    return m;
  }

  const ModelDims& dims() const { return bb.dims; }

  std::vector<std::pair<std::string, Tensor>> named_params() {
    auto out = bb.named_params();
    out.emplace_back("w_out", w_out);
    out.emplace_back("b_out", b_out);
    return out;
  }
  std::vector<Tensor> params() {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_params()) out.push_back(t);
    return out;
  }

  std::vector<double> logits_from_hidden(const std::vector<double>& h) const {
    std::size_t d = w_out.dim(0), v = w_out.dim(1);
    std::vector<double> out(v, 0.0);
    const double* wd = w_out.values().data();
    for (std::size_t p = 0; p < d; ++p) {
      double hv = h[p];
      if (hv == 0.0) continue;
      const double* wrow = wd + p * v;
      for (std::size_t j = 0; j < v; ++j) out[j] += hv * wrow[j];
    }
    for (std::size_t j = 0; j < v; ++j) out[j] += b_out.at(j);
    return out;
  }
};

// Next-token logits after the given prefix.
inline Tensor forward_logits(const PolicyModel& model,
                             const std::vector<int>& prefix) {
  if (prefix.empty())
    throw ContractError("forward_logits: empty prefix");
  if (prefix.size() > static_cast<std::size_t>(model.dims().max_context))
    throw ContractError("forward_logits: prefix of " +
                        std::to_string(prefix.size()) +
                        " tokens exceeds context length " +
                        std::to_string(model.dims().max_context));
  BackboneState st(model.bb);
  for (int t : prefix) st.append(t);
  return Tensor::row(model.logits_from_hidden(st.hidden()));
}

namespace detail {

inline int sample_categorical(const std::vector<double>& probs, Rng& rng) {
  double u = rng.next_double();
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size() - 1);
}

inline int argmax_smallest(const std::vector<double>& x) {
  int best = 0;
  for (std::size_t i = 1; i < x.size(); ++i)
    if (x[i] > x[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  return best;
}

// Shared autoregressive loop for sampling and greedy decoding.
inline Trajectory decode(const PolicyModel& model, const Vocab& v,
                         const std::vector<int>& x, const SamplerConfig& cfg,
                         Rng* rng) {
  cfg.validate();
  BackboneState st(model.bb);
  for (int t : x) st.append(t);
  st.append(v.think_open());

  Trajectory traj;
  traj.tokens.push_back(v.think_open());
  std::size_t vsize = static_cast<std::size_t>(v.size());
  for (int step = 0; step < cfg.max_trace_tokens; ++step) {
    std::vector<double> logits = model.logits_from_hidden(st.hidden());
    int pick;
    if (rng) {
      std::vector<double> probs(vsize);
      detail::softmax_row(logits.data(), probs.data(), vsize,
                          1.0 / cfg.temperature);
      pick = sample_categorical(probs, *rng);
    } else {
      pick = argmax_smallest(logits);
    }
    traj.log_prob += logits[static_cast<std::size_t>(pick)] -
                     log_sum_exp(logits.data(), vsize);
    traj.tokens.push_back(pick);
    if (pick == v.answer_close()) break;
    // keep the full sequence (x + wrapped tokens) within the context window
    if (st.length() + 2 > model.dims().max_context) break;
    st.append(pick);
  }

  if (auto parsed = parse_trajectory(traj.tokens, v)) {
    traj.reasoning = std::move(parsed->reasoning);
    traj.provisional = parsed->answer;
    traj.trace_len = static_cast<int>(traj.reasoning.size());
  } else {
    traj.provisional = kMalformed;
    traj.trace_len = static_cast<int>(traj.tokens.size()) - 1;
  }
  return traj;
}

}  // namespace detail

inline Trajectory sample_trajectory(const PolicyModel& model, const Vocab& v,
                                    const std::vector<int>& x,
                                    const SamplerConfig& cfg, Rng& rng) {
  return detail::decode(model, v, x, cfg, &rng);
}

inline Trajectory greedy_decode(const PolicyModel& model, const Vocab& v,
                                const std::vector<int>& x,
                                const SamplerConfig& cfg) {
  return detail::decode(model, v, x, cfg, nullptr);
}

// Differentiable negative log-probability of the generated suffix (the
// wrapped tokens after <think>) conditioned on [x ; <think>]. Prompt
// positions are masked out of the loss.
inline Tensor trajectory_nll(Tape& tape, PolicyModel& model,
                             const std::vector<int>& x,
                             const std::vector<int>& wrapped_tokens) {
  if (wrapped_tokens.empty())
    throw ContractError("trajectory_nll: empty trajectory");
  std::vector<int> seq = x;
  seq.insert(seq.end(), wrapped_tokens.begin(), wrapped_tokens.end());
  std::size_t prompt = x.size() + 1;  // x plus <think>
  if (seq.size() <= prompt) return Tensor::scalar(0.0);

  Tensor h = backbone_hidden(tape, model.bb, seq);
  std::size_t gen = seq.size() - prompt;
  Tensor rows = slice_rows(tape, h, prompt - 1, gen);
  Tensor logits =
      add_row_vector(tape, matmul(tape, rows, model.w_out), model.b_out);
  std::vector<int> targets(seq.begin() + static_cast<long>(prompt), seq.end());
  return sequence_nll(tape, logits, targets);
}

inline Tensor trajectory_nll(Tape& tape, PolicyModel& model,
                             const std::vector<int>& x,
                             const Trajectory& traj) {
  return trajectory_nll(tape, model, x, traj.tokens);
}

}  // namespace intuit
