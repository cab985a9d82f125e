#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "intuit/tensor.hpp"

namespace intuit {

struct AdamConfig {
  double lr = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long step = 0;

  void init_for(const std::vector<Tensor>& params) {
    m.clear();
    v.clear();
    for (const Tensor& p : params) {
      m.emplace_back(p.numel(), 0.0);
      v.emplace_back(p.numel(), 0.0);
    }
    step = 0;
  }
};

// Standard Adam with bias correction. Gradients are read from each
// parameter's grad buffer; callers zero grads between steps.
inline void adam_step(std::vector<Tensor>& params, AdamState& state,
                      const AdamConfig& cfg) {
  if (cfg.lr <= 0.0) throw ParameterError("adam_step: lr must be positive");
  if (state.m.size() != params.size()) state.init_for(params);
  for (std::size_t i = 0; i < params.size(); ++i)
    if (state.m[i].size() != params[i].numel())
      throw DimensionError("adam_step: state size does not match parameter");

  state.step += 1;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    p.ensure_grad();
    const std::vector<double>& g = p.grad();
    std::vector<double>& m = state.m[i];
    std::vector<double>& v = state.v[i];
    for (std::size_t j = 0; j < g.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      double mhat = m[j] / bc1;
      double vhat = v[j] / bc2;
      p.at(j) -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

}  // namespace intuit
