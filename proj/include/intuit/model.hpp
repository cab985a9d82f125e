#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "intuit/rng.hpp"
#include "intuit/tensor.hpp"

namespace intuit {

struct ModelDims {
  int vocab = 0;
  int d_model = 64;
  int n_heads = 4;
  int d_ff = 256;
  int max_context = 160;

  int head_dim() const { return d_model / n_heads; }
};

// Single pre-LN causal self-attention block with learned positional
// embeddings. Shared by the policy and the calibrator.
struct Backbone {
  ModelDims dims;
  Tensor tok_emb, pos_emb;
  Tensor ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_g, ln2_b, w1, b1, w2, b2;
  Tensor lnf_g, lnf_b;

  static Backbone init(const ModelDims& dims, Rng& rng) {
    Backbone bb;
    bb.dims = dims;
    std::size_t v = static_cast<std::size_t>(dims.vocab);
    std::size_t d = static_cast<std::size_t>(dims.d_model);
    std::size_t ff = static_cast<std::size_t>(dims.d_ff);
    std::size_t ctx = static_cast<std::size_t>(dims.max_context);
    const double s = 0.02;
    bb.tok_emb = Tensor::randn({v, d}, rng, s);
    bb.pos_emb = Tensor::randn({ctx, d}, rng, s);
    bb.ln1_g = Tensor({d}, std::vector<double>(d, 1.0), true);
    bb.ln1_b = Tensor({d}, true);
    bb.wq = Tensor::randn({d, d}, rng, s);
    bb.bq = Tensor({d}, true);
    bb.wk = Tensor::randn({d, d}, rng, s);
    bb.bk = Tensor({d}, true);
    bb.wv = Tensor::randn({d, d}, rng, s);
    bb.bv = Tensor({d}, true);
    bb.wo = Tensor::randn({d, d}, rng, s);
    bb.bo = Tensor({d}, true);
    bb.ln2_g = Tensor({d}, std::vector<double>(d, 1.0), true);
    bb.ln2_b = Tensor({d}, true);
    bb.w1 = Tensor::randn({d, ff}, rng, s);
    bb.b1 = Tensor({ff}, true);
    bb.w2 = Tensor::randn({ff, d}, rng, s);
    bb.b2 = Tensor({d}, true);
    bb.lnf_g = Tensor({d}, std::vector<double>(d, 1.0), true);
    bb.lnf_b = Tensor({d}, true);
    return bb;
  }

  std::vector<std::pair<std::string, Tensor>> named_params() {
    return {{"tok_emb", tok_emb}, {"pos_emb", pos_emb}, {"ln1_g", ln1_g},
            {"ln1_b", ln1_b},     {"wq", wq},           {"bq", bq},
            {"wk", wk},           {"bk", bk},           {"wv", wv},
            {"bv", bv},           {"wo", wo},           {"bo", bo},
            {"ln2_g", ln2_g},     {"ln2_b", ln2_b},     {"w1", w1},
            {"b1", b1},           {"w2", w2},           {"b2", b2},
            {"lnf_g", lnf_g},     {"lnf_b", lnf_b}};
  }
};

constexpr double kLayerNormEps = 1e-5;

// Full-sequence differentiable forward; returns final hidden states [T x d].
inline Tensor backbone_hidden(Tape& tape, Backbone& bb,
                              const std::vector<int>& tokens) {
  if (tokens.size() > static_cast<std::size_t>(bb.dims.max_context))
    throw ContractError("backbone_hidden: sequence of " +
                        std::to_string(tokens.size()) +
                        " tokens exceeds context length " +
                        std::to_string(bb.dims.max_context));
  std::size_t t = tokens.size();
  std::vector<int> pos(t);
  std::iota(pos.begin(), pos.end(), 0);
  Tensor x = add(tape, gather_rows(tape, bb.tok_emb, tokens),
                 gather_rows(tape, bb.pos_emb, pos));

  Tensor a = layer_norm(tape, x, bb.ln1_g, bb.ln1_b, kLayerNormEps);
  Tensor q = add_row_vector(tape, matmul(tape, a, bb.wq), bb.bq);
  Tensor k = add_row_vector(tape, matmul(tape, a, bb.wk), bb.bk);
  Tensor v = add_row_vector(tape, matmul(tape, a, bb.wv), bb.bv);

  int dk = bb.dims.head_dim();
  double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<Tensor> heads;
  for (int h = 0; h < bb.dims.n_heads; ++h) {
    std::size_t off = static_cast<std::size_t>(h * dk);
    Tensor qh = slice_cols(tape, q, off, static_cast<std::size_t>(dk));
    Tensor kh = slice_cols(tape, k, off, static_cast<std::size_t>(dk));
    Tensor vh = slice_cols(tape, v, off, static_cast<std::size_t>(dk));
    Tensor scores = scale(tape, matmul_nt(tape, qh, kh), inv_sqrt_dk);
    Tensor probs = causal_row_softmax(tape, scores);
    heads.push_back(matmul(tape, probs, vh));
  }
  Tensor attn = add_row_vector(
      tape, matmul(tape, concat_cols(tape, heads), bb.wo), bb.bo);
  Tensor x2 = add(tape, x, attn);

  Tensor b = layer_norm(tape, x2, bb.ln2_g, bb.ln2_b, kLayerNormEps);
  Tensor h1 = relu(tape, add_row_vector(tape, matmul(tape, b, bb.w1), bb.b1));
  Tensor mlp = add_row_vector(tape, matmul(tape, h1, bb.w2), bb.b2);
  Tensor x3 = add(tape, x2, mlp);

  return layer_norm(tape, x3, bb.lnf_g, bb.lnf_b, kLayerNormEps);
}

// Incremental tape-free forward with per-head key/value caches. Must stay
// numerically identical to backbone_hidden (the tests pin this).
class BackboneState {
 public:
  explicit BackboneState(const Backbone& bb) : bb_(&bb) {
    int d = bb.dims.d_model;
    keys_.reserve(static_cast<std::size_t>(bb.dims.max_context) *
                  static_cast<std::size_t>(d));
    vals_.reserve(keys_.capacity());
    hidden_.assign(static_cast<std::size_t>(d), 0.0);
  }

  void reset() {
    keys_.clear();
    vals_.clear();
    len_ = 0;
  }

  int length() const { return len_; }

  // Appends one token; returns the final-layer hidden state at its position.
  const std::vector<double>& append(int token) {
    const Backbone& bb = *bb_;
    int d = bb.dims.d_model;
    if (len_ >= bb.dims.max_context)
      throw ContractError("BackboneState: context length " +
                          std::to_string(bb.dims.max_context) + " exceeded");
    std::vector<double> x(static_cast<std::size_t>(d));
    const double* te =
        bb.tok_emb.values().data() + static_cast<std::size_t>(token) * d;
    const double* pe =
        bb.pos_emb.values().data() + static_cast<std::size_t>(len_) * d;
    for (int j = 0; j < d; ++j) x[j] = te[j] + pe[j];

    std::vector<double> a = layer_norm_vec(x, bb.ln1_g, bb.ln1_b);
    std::vector<double> q = affine(a, bb.wq, bb.bq);
    std::vector<double> kk = affine(a, bb.wk, bb.bk);
    std::vector<double> vv = affine(a, bb.wv, bb.bv);
    keys_.insert(keys_.end(), kk.begin(), kk.end());
    vals_.insert(vals_.end(), vv.begin(), vv.end());
    len_ += 1;

    int nh = bb.dims.n_heads, dk = bb.dims.head_dim();
    double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
    std::vector<double> mixed(static_cast<std::size_t>(d), 0.0);
    std::vector<double> scores(static_cast<std::size_t>(len_));
    for (int h = 0; h < nh; ++h) {
      int off = h * dk;
      for (int p = 0; p < len_; ++p) {
        const double* krow = keys_.data() + static_cast<std::size_t>(p) * d + off;
        double acc = 0.0;
        for (int j = 0; j < dk; ++j) acc += q[off + j] * krow[j];
        scores[static_cast<std::size_t>(p)] = acc * inv_sqrt_dk;
      }
      detail::softmax_row(scores.data(), scores.data(),
                          static_cast<std::size_t>(len_), 1.0);
      for (int p = 0; p < len_; ++p) {
        const double* vrow = vals_.data() + static_cast<std::size_t>(p) * d + off;
        double w = scores[static_cast<std::size_t>(p)];
        for (int j = 0; j < dk; ++j) mixed[off + j] += w * vrow[j];
      }
    }
    std::vector<double> attn = affine(mixed, bb.wo, bb.bo);
    std::vector<double> x2(static_cast<std::size_t>(d));
    for (int j = 0; j < d; ++j) x2[j] = x[j] + attn[j];

    std::vector<double> b = layer_norm_vec(x2, bb.ln2_g, bb.ln2_b);
    std::vector<double> h1 = affine(b, bb.w1, bb.b1);
    for (double& z : h1) z = z > 0.0 ? z : 0.0;
    std::vector<double> mlp = affine(h1, bb.w2, bb.b2);
    for (int j = 0; j < d; ++j) x2[j] += mlp[j];

    hidden_ = layer_norm_vec(x2, bb.lnf_g, bb.lnf_b);
    return hidden_;
  }

  const std::vector<double>& hidden() const { return hidden_; }

 private:
  static std::vector<double> layer_norm_vec(const std::vector<double>& x,
                                            const Tensor& gain,
                                            const Tensor& bias) {
    std::size_t n = x.size();
    double mu = 0.0;
    for (double v : x) mu += v;
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (double v : x) var += (v - mu) * (v - mu);
    var /= static_cast<double>(n);
    double is = 1.0 / std::sqrt(var + kLayerNormEps);
    std::vector<double> out(n);
    for (std::size_t j = 0; j < n; ++j)
      out[j] = (x[j] - mu) * is * gain.at(j) + bias.at(j);
    return out;
  }

  // row vector x[k] times W[k x n] plus b[n]
  static std::vector<double> affine(const std::vector<double>& x,
                                    const Tensor& w, const Tensor& b) {
    std::size_t k = w.dim(0), n = w.dim(1);
    std::vector<double> out(n, 0.0);
    const double* wd = w.values().data();
    for (std::size_t p = 0; p < k; ++p) {
      double xv = x[p];
      if (xv == 0.0) continue;
      const double* wrow = wd + p * n;
      for (std::size_t j = 0; j < n; ++j) out[j] += xv * wrow[j];
    }
    for (std::size_t j = 0; j < n; ++j) out[j] += b.at(j);
    return out;
  }

  const Backbone* bb_;
  std::vector<double> keys_, vals_;
  std::vector<double> hidden_;
  int len_ = 0;
};

}  // namespace intuit
