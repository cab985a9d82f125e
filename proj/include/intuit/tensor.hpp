#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "intuit/rng.hpp"

namespace intuit {

struct TensorError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DimensionError : TensorError {
  using TensorError::TensorError;
};
struct ParameterError : TensorError {
  using TensorError::TensorError;
};
struct ContractError : TensorError {
  using TensorError::TensorError;
};
struct VocabularyError : TensorError {
  using TensorError::TensorError;
};

namespace detail {

struct TensorData {
  std::vector<std::size_t> shape;
  std::vector<double> v;
  bool requires_grad = false;
  std::vector<double> g;  // engaged lazily; same length as v when present
};

inline std::string shape_str(const std::vector<std::size_t>& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

// C += A(m x k) * B(k x n)
inline void mm(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C += A(m x k) * B(n x k)^T
inline void mm_nt(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C += A(k x m)^T * B(k x n)
inline void mm_tn(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

// Value-like handle over shared storage. Copies alias the same data, which is
// what the tape needs to route gradients back to parameters.
class Tensor {
 public:
  Tensor() : d_(std::make_shared<detail::TensorData>()) {}

  explicit Tensor(std::vector<std::size_t> shape, bool requires_grad = false)
      : d_(std::make_shared<detail::TensorData>()) {
    d_->shape = std::move(shape);
    d_->v.assign(numel_of(d_->shape), 0.0);
    d_->requires_grad = requires_grad;
  }

  Tensor(std::vector<std::size_t> shape, std::vector<double> values,
         bool requires_grad = false)
      : d_(std::make_shared<detail::TensorData>()) {
    if (numel_of(shape) != values.size())
      throw DimensionError("tensor: shape " + detail::shape_str(shape) +
                           " does not match " + std::to_string(values.size()) +
                           " values");
    d_->shape = std::move(shape);
    d_->v = std::move(values);
    d_->requires_grad = requires_grad;
  }

  static Tensor scalar(double x, bool requires_grad = false) {
    return Tensor({1}, {x}, requires_grad);
  }
  static Tensor row(std::vector<double> values, bool requires_grad = false) {
    std::size_t n = values.size();
    return Tensor({n}, std::move(values), requires_grad);
  }
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values, bool requires_grad = false) {
    return Tensor({rows, cols}, std::move(values), requires_grad);
  }
  static Tensor randn(std::vector<std::size_t> shape, Rng& rng, double stddev,
                      bool requires_grad = true) {
    Tensor t(std::move(shape), requires_grad);
    for (double& x : t.values()) x = stddev * rng.next_gaussian();
    return t;
  }

  const std::vector<std::size_t>& shape() const { return d_->shape; }
  std::size_t ndim() const { return d_->shape.size(); }
  std::size_t numel() const { return d_->v.size(); }
  std::size_t dim(std::size_t i) const { return d_->shape.at(i); }

  std::vector<double>& values() { return d_->v; }
  const std::vector<double>& values() const { return d_->v; }
  double& at(std::size_t i) { return d_->v[i]; }
  double at(std::size_t i) const { return d_->v[i]; }

  double item() const {
    if (numel() != 1) throw ContractError("item(): tensor is not scalar");
    return d_->v[0];
  }

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool b) { d_->requires_grad = b; }

  bool has_grad() const { return d_->g.size() == d_->v.size(); }
  std::vector<double>& grad() {
    ensure_grad();
    return d_->g;
  }
  const std::vector<double>& grad() const {
    const_cast<Tensor*>(this)->ensure_grad();
    return d_->g;
  }
  void ensure_grad() {
    if (d_->g.size() != d_->v.size()) d_->g.assign(d_->v.size(), 0.0);
  }
  void zero_grad() { std::fill(d_->g.begin(), d_->g.end(), 0.0); }

  bool same_storage(const Tensor& o) const { return d_ == o.d_; }

  bool all_finite() const {
    for (double x : d_->v)
      if (!std::isfinite(x)) return false;
    for (double x : d_->g)
      if (!std::isfinite(x)) return false;
    return true;
  }

  static std::size_t numel_of(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t s : shape) n *= s;
    return n;
  }

 private:
  std::shared_ptr<detail::TensorData> d_;
};

// Records backward closures in execution order; backward() replays in reverse.
class Tape {
 public:
  void record(const Tensor& output, std::function<void()> backward_fn) {
    outputs_.push_back(output);
    nodes_.push_back(std::move(backward_fn));
  }

  std::size_t size() const { return nodes_.size(); }
  void clear() {
    nodes_.clear();
    outputs_.clear();
  }

  // Accumulates d(loss)/d(x) into every requires_grad leaf reachable through
  // the tape. Intermediate grads are reset per call, so each call adds
  // exactly one gradient contribution to the leaves.
  void backward(Tensor loss) {
    if (loss.numel() != 1)
      throw ContractError("backward: loss must be a scalar tensor");
    if (!loss.requires_grad()) return;
    for (Tensor& out : outputs_) out.zero_grad();
    loss.grad()[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> nodes_;
  std::vector<Tensor> outputs_;
};

namespace detail {

inline bool track(std::initializer_list<const Tensor*> ins) {
  for (const Tensor* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

}  // namespace detail

// ---- differentiable operations -------------------------------------------

inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: incompatible shapes " +
                         detail::shape_str(a.shape()) + " and " +
                         detail::shape_str(b.shape()));
  std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n}, detail::track({&a, &b}));
  detail::mm(a.values().data(), b.values().data(), out.values().data(), m, k, n);
  if (out.requires_grad()) {
    out.ensure_grad();
    Tensor ac = a, bc = b, oc = out;
    tape.record(out, [ac, bc, oc, m, k, n]() mutable {
      if (ac.requires_grad())
        detail::mm_nt(oc.grad().data(), bc.values().data(), ac.grad().data(), m,
                      n, k);
      if (bc.requires_grad())
        detail::mm_tn(ac.values().data(), oc.grad().data(), bc.grad().data(), k,
                      m, n);
    });
  }
  return out;
}

// a[m x k] * b[n x k]^T -> [m x n]
inline Tensor matmul_nt(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1))
    throw DimensionError("matmul_nt: incompatible shapes " +
                         detail::shape_str(a.shape()) + " and " +
                         detail::shape_str(b.shape()));
  std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  Tensor out({m, n}, detail::track({&a, &b}));
  detail::mm_nt(a.values().data(), b.values().data(), out.values().data(), m, k,
                n);
  if (out.requires_grad()) {
    out.ensure_grad();
    Tensor ac = a, bc = b, oc = out;
    tape.record(out, [ac, bc, oc, m, k, n]() mutable {
      if (ac.requires_grad())
        detail::mm(oc.grad().data(), bc.values().data(), ac.grad().data(), m, n,
                   k);
      if (bc.requires_grad())
        detail::mm_tn(oc.grad().data(), ac.values().data(), bc.grad().data(), n,
                      m, k);
    });
  }
  return out;
}

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError("add: shape mismatch " +
                         detail::shape_str(a.shape()) + " vs " +
                         detail::shape_str(b.shape()));
  Tensor out(a.shape(), detail::track({&a, &b}));
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.at(i) = a.at(i) + b.at(i);
  if (out.requires_grad()) {
    out.ensure_grad();
    Tensor ac = a, bc = b, oc = out;
    tape.record(out, [ac, bc, oc]() mutable {
      if (ac.requires_grad())
        for (std::size_t i = 0; i < oc.numel(); ++i) ac.grad()[i] += oc.grad()[i];
      if (bc.requires_grad())
        for (std::size_t i = 0; i < oc.numel(); ++i) bc.grad()[i] += oc.grad()[i];
    });
  }
  return out;
}

// a[m x n] + row vector b[n] broadcast over rows
inline Tensor add_row_vector(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 1 || a.dim(1) != b.dim(0))
    throw DimensionError("add_row_vector: shapes " +
                         detail::shape_str(a.shape()) + " and " +
                         detail::shape_str(b.shape()));
  std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out({m, n}, detail::track({&a, &b}));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out.at(i * n + j) = a.at(i * n + j) + b.at(j);
  if (out.requires_grad()) {
    out.ensure_grad();
    Tensor ac = a, bc = b, oc = out;
    tape.record(out, [ac, bc, oc, m, n]() mutable {
      if (ac.requires_grad())
        for (std::size_t i = 0; i < m * n; ++i) ac.grad()[i] += oc.grad()[i];
      if (bc.requires_grad())
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) bc.grad()[j] += oc.grad()[i * n + j];
    });
  }
  return out;
}

inline Tensor scale(Tape& tape, const Tensor& a, double c) {
  Tensor out(a.shape(), a.requires_grad());
  for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) = c * a.at(i);
  if (out.requires_grad()) {
    out.ensure_grad();
    Tensor ac = a, oc = out;
    tape.record(out, [ac, oc, c]() mutable {
      for (std::size_t i = 0; i < oc.numel(); ++i)
        ac.grad()[i] += c * oc.grad()[i];
    });
  }
  return out;
}

inline Tensor relu(Tape& tape, const Tensor& a) {
  Tensor out(a.shape(), a.requires_grad());
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.at(i) = a.at(i) > 0.0 ? a.at(i) : 0.0;
  if (out.requires_grad()) {
    out.ensure_grad();
    Tensor ac = a, oc = out;
    tape.record(out, [ac, oc]() mutable {
      for (std::size_t i = 0; i < oc.numel(); ++i)
        if (ac.at(i) > 0.0) ac.grad()[i] += oc.grad()[i];
    });
  }
  return out;
}

namespace detail {

inline void softmax_row(const double* z, double* p, std::size_t n,
                        double inv_temp) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, z[i]);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = std::exp((z[i] - mx) * inv_temp);
    sum += p[i];
  }
  for (std::size_t i = 0; i < n; ++i) p[i] /= sum;
}

inline double log_sum_exp(const double* z, std::size_t n) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, z[i]);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += std::exp(z[i] - mx);
  return mx + std::log(sum);
}

}  // namespace detail

// Plain (tape-free) stable softmax of a flat vector.
inline std::vector<double> softmax_values(const std::vector<double>& z,
                                          double temperature = 1.0) {
  if (temperature <= 0.0)
    throw ParameterError("softmax: temperature must be positive");
  if (z.empty()) throw ParameterError("softmax: empty input");
  std::vector<double> p(z.size());
  detail::softmax_row(z.data(), p.data(), z.size(), 1.0 / temperature);
  return p;
}

inline Tensor softmax(Tape& tape, const Tensor& z, double temperature = 1.0) {
  if (temperature <= 0.0)
    throw ParameterError("softmax: temperature must be positive");
  if (z.numel() == 0) throw ParameterError("softmax: empty input");
  Tensor out(z.shape(), z.requires_grad());
  detail::softmax_row(z.values().data(), out.values().data(), z.numel(),
                      1.0 / temperature);
  if (out.requires_grad()) {
    out.ensure_grad();
    Tensor zc = z, oc = out;
    tape.record(out, [zc, oc, temperature]() mutable {
      std::size_t n = oc.numel();
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += oc.grad()[i] * oc.at(i);
      for (std::size_t i = 0; i < n; ++i)
        zc.grad()[i] += oc.at(i) * (oc.grad()[i] - dot) / temperature;
    });
  }
  return out;
}

// Row-wise softmax of scores[T x T] with a causal mask (column j > row i
// gets probability 0).
inline Tensor causal_row_softmax(Tape& tape, const Tensor& scores) {
  if (scores.ndim() != 2 || scores.dim(0) != scores.dim(1))
    throw DimensionError("causal_row_softmax: expected square matrix, got " +
                         detail::shape_str(scores.shape()));
  std::size_t t = scores.dim(0);
  Tensor out(scores.shape(), scores.requires_grad());
  for (std::size_t i = 0; i < t; ++i)
    detail::softmax_row(scores.values().data() + i * t,
                        out.values().data() + i * t, i + 1, 1.0);
  if (out.requires_grad()) {
    out.ensure_grad();
    Tensor sc = scores, oc = out;
    tape.record(out, [sc, oc, t]() mutable {
      for (std::size_t i = 0; i < t; ++i) {
        const double* p = oc.values().data() + i * t;
        const double* dp = oc.grad().data() + i * t;
        double* dz = sc.grad().data() + i * t;
        double dot = 0.0;
        for (std::size_t j = 0; j <= i; ++j) dot += dp[j] * p[j];
        for (std::size_t j = 0; j <= i; ++j) dz[j] += p[j] * (dp[j] - dot);
      }
    });
  }
  return out;
}

inline Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain,
                         const Tensor& bias, double eps = 1e-5) {
  if (x.ndim() != 2 || gain.ndim() != 1 || bias.ndim() != 1 ||
      gain.dim(0) != x.dim(1) || bias.dim(0) != x.dim(1))
    throw DimensionError("layer_norm: shapes " + detail::shape_str(x.shape()) +
                         ", " + detail::shape_str(gain.shape()) + ", " +
                         detail::shape_str(bias.shape()));
  std::size_t m = x.dim(0), n = x.dim(1);
  Tensor out(x.shape(), detail::track({&x, &gain, &bias}));
  std::vector<double> inv_std(m), mean(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.values().data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    double is = 1.0 / std::sqrt(var + eps);
    mean[i] = mu;
    inv_std[i] = is;
    double* orow = out.values().data() + i * n;
    for (std::size_t j = 0; j < n; ++j)
      orow[j] = (row[j] - mu) * is * gain.at(j) + bias.at(j);
  }
  if (out.requires_grad()) {
    out.ensure_grad();
    Tensor xc = x, gc = gain, bc = bias, oc = out;
    tape.record(out, [xc, gc, bc, oc, mean, inv_std, m, n]() mutable {
      for (std::size_t i = 0; i < m; ++i) {
        const double* row = xc.values().data() + i * n;
        const double* dout = oc.grad().data() + i * n;
        double mu = mean[i], is = inv_std[i];
        // xhat_j = (x_j - mu) * is
        double sum_dg = 0.0, sum_dg_xhat = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          double xhat = (row[j] - mu) * is;
          double dg = dout[j] * gc.at(j);
          sum_dg += dg;
          sum_dg_xhat += dg * xhat;
        }
        double invn = 1.0 / static_cast<double>(n);
        if (xc.requires_grad()) {
          double* dx = xc.grad().data() + i * n;
          for (std::size_t j = 0; j < n; ++j) {
            double xhat = (row[j] - mu) * is;
            double dg = dout[j] * gc.at(j);
            dx[j] += is * (dg - invn * sum_dg - xhat * invn * sum_dg_xhat);
          }
        }
        if (gc.requires_grad())
          for (std::size_t j = 0; j < n; ++j)
            gc.grad()[j] += dout[j] * (row[j] - mu) * is;
        if (bc.requires_grad())
          for (std::size_t j = 0; j < n; ++j) bc.grad()[j] += dout[j];
      }
    });
  }
  return out;
}

// Gathers rows of table[V x d] at the given indices -> [ids.size() x d].
inline Tensor gather_rows(Tape& tape, const Tensor& table,
                          const std::vector<int>& ids) {
  if (table.ndim() != 2)
    throw DimensionError("gather_rows: table must be 2-D");
  std::size_t v = table.dim(0), d = table.dim(1), t = ids.size();
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= v)
      throw ParameterError("gather_rows: index " + std::to_string(id) +
                           " out of range [0," + std::to_string(v) + ")");
  Tensor out({t, d}, table.requires_grad());
  for (std::size_t i = 0; i < t; ++i)
    std::copy_n(table.values().data() + static_cast<std::size_t>(ids[i]) * d, d,
                out.values().data() + i * d);
  if (out.requires_grad()) {
    out.ensure_grad();
    Tensor tc = table, oc = out;
    tape.record(out, [tc, oc, ids, d]() mutable {
      for (std::size_t i = 0; i < ids.size(); ++i) {
        double* dst = tc.grad().data() + static_cast<std::size_t>(ids[i]) * d;
        const double* src = oc.grad().data() + i * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

inline Tensor slice_rows(Tape& tape, const Tensor& a, std::size_t start,
                         std::size_t len) {
  if (a.ndim() != 2 || start + len > a.dim(0))
    throw DimensionError("slice_rows: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") exceeds " +
                         detail::shape_str(a.shape()));
  std::size_t n = a.dim(1);
  Tensor out({len, n}, a.requires_grad());
  std::copy_n(a.values().data() + start * n, len * n, out.values().data());
  if (out.requires_grad()) {
    out.ensure_grad();
    Tensor ac = a, oc = out;
    tape.record(out, [ac, oc, start, len, n]() mutable {
      for (std::size_t i = 0; i < len * n; ++i)
        ac.grad()[start * n + i] += oc.grad()[i];
    });
  }
  return out;
}

inline Tensor slice_cols(Tape& tape, const Tensor& a, std::size_t start,
                         std::size_t len) {
  if (a.ndim() != 2 || start + len > a.dim(1))
    throw DimensionError("slice_cols: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") exceeds " +
                         detail::shape_str(a.shape()));
  std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out({m, len}, a.requires_grad());
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(a.values().data() + i * n + start, len,
                out.values().data() + i * len);
  if (out.requires_grad()) {
    out.ensure_grad();
    Tensor ac = a, oc = out;
    tape.record(out, [ac, oc, start, len, m, n]() mutable {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < len; ++j)
          ac.grad()[i * n + start + j] += oc.grad()[i * len + j];
    });
  }
  return out;
}

inline Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ParameterError("concat_cols: no inputs");
  std::size_t m = parts[0].dim(0), n = 0;
  bool rg = false;
  for (const Tensor& p : parts) {
    if (p.ndim() != 2 || p.dim(0) != m)
      throw DimensionError("concat_cols: row count mismatch");
    n += p.dim(1);
    rg = rg || p.requires_grad();
  }
  Tensor out({m, n}, rg);
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    std::size_t w = p.dim(1);
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(p.values().data() + i * w, w,
                  out.values().data() + i * n + off);
    off += w;
  }
  if (rg) {
    out.ensure_grad();
    std::vector<Tensor> pc = parts;
    Tensor oc = out;
    tape.record(out, [pc, oc, m, n]() mutable {
      std::size_t off = 0;
      for (Tensor& p : pc) {
        std::size_t w = p.dim(1);
        if (p.requires_grad())
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j)
              p.grad()[i * w + j] += oc.grad()[i * n + off + j];
        off += w;
      }
    });
  }
  return out;
}

// -log softmax(logits)[target]; gradient softmax(logits) - one_hot(target).
inline Tensor cross_entropy(Tape& tape, const Tensor& logits, int target) {
  if (logits.ndim() != 1)
    throw DimensionError("cross_entropy: logits must be 1-D");
  std::size_t n = logits.numel();
  if (target < 0 || static_cast<std::size_t>(target) >= n)
    throw ParameterError("cross_entropy: target " + std::to_string(target) +
                         " out of range [0," + std::to_string(n) + ")");
  double lse = detail::log_sum_exp(logits.values().data(), n);
  Tensor out = Tensor::scalar(lse - logits.at(static_cast<std::size_t>(target)));
  out.set_requires_grad(logits.requires_grad());
  if (out.requires_grad()) {
    out.ensure_grad();
    Tensor lc = logits, oc = out;
    tape.record(out, [lc, oc, target, n]() mutable {
      std::vector<double> p(n);
      detail::softmax_row(lc.values().data(), p.data(), n, 1.0);
      double go = oc.grad()[0];
      for (std::size_t i = 0; i < n; ++i) lc.grad()[i] += go * p[i];
      lc.grad()[static_cast<std::size_t>(target)] -= go;
    });
  }
  return out;
}

// Sum of per-row cross-entropies of logit_rows[T x V] against token_ids.
inline Tensor sequence_nll(Tape& tape, const Tensor& logit_rows,
                           const std::vector<int>& token_ids) {
  if (logit_rows.ndim() != 2)
    throw DimensionError("sequence_nll: logit_rows must be 2-D");
  std::size_t t = logit_rows.dim(0), v = logit_rows.dim(1);
  if (t != token_ids.size())
    throw DimensionError("sequence_nll: " + std::to_string(t) +
                         " logit rows vs " + std::to_string(token_ids.size()) +
                         " tokens");
  double total = 0.0;
  for (std::size_t i = 0; i < t; ++i) {
    int id = token_ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= v)
      throw ParameterError("sequence_nll: token id " + std::to_string(id) +
                           " out of range [0," + std::to_string(v) + ")");
    const double* row = logit_rows.values().data() + i * v;
    total += detail::log_sum_exp(row, v) - row[id];
  }
  Tensor out = Tensor::scalar(total);
  out.set_requires_grad(logit_rows.requires_grad());
  if (out.requires_grad()) {
    out.ensure_grad();
    Tensor lc = logit_rows, oc = out;
    tape.record(out, [lc, oc, token_ids, t, v]() mutable {
      double go = oc.grad()[0];
      std::vector<double> p(v);
      for (std::size_t i = 0; i < t; ++i) {
        const double* row = lc.values().data() + i * v;
        detail::softmax_row(row, p.data(), v, 1.0);
        double* drow = lc.grad().data() + i * v;
        for (std::size_t j = 0; j < v; ++j) drow[j] += go * p[j];
        drow[static_cast<std::size_t>(token_ids[i])] -= go;
      }
    });
  }
  return out;
}

// coeffs . scalars -> scalar
inline Tensor weighted_sum(Tape& tape, const std::vector<Tensor>& scalars,
                           const std::vector<double>& coeffs) {
  if (scalars.size() != coeffs.size())
    throw DimensionError("weighted_sum: " + std::to_string(scalars.size()) +
                         " scalars vs " + std::to_string(coeffs.size()) +
                         " coefficients");
  double total = 0.0;
  bool rg = false;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    if (scalars[i].numel() != 1)
      throw ContractError("weighted_sum: inputs must be scalars");
    total += coeffs[i] * scalars[i].item();
    rg = rg || scalars[i].requires_grad();
  }
  Tensor out = Tensor::scalar(total);
  out.set_requires_grad(rg);
  if (rg) {
    out.ensure_grad();
    std::vector<Tensor> sc = scalars;
    Tensor oc = out;
    tape.record(out, [sc, oc, coeffs]() mutable {
      for (std::size_t i = 0; i < sc.size(); ++i)
        if (sc[i].requires_grad()) sc[i].grad()[0] += coeffs[i] * oc.grad()[0];
    });
  }
  return out;
}

inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError("mul: shape mismatch");
  Tensor out(a.shape(), detail::track({&a, &b}));
  for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) = a.at(i) * b.at(i);
  if (out.requires_grad()) {
    out.ensure_grad();
    Tensor ac = a, bc = b, oc = out;
    tape.record(out, [ac, bc, oc]() mutable {
      for (std::size_t i = 0; i < oc.numel(); ++i) {
        if (ac.requires_grad()) ac.grad()[i] += bc.at(i) * oc.grad()[i];
        if (bc.requires_grad()) bc.grad()[i] += ac.at(i) * oc.grad()[i];
      }
    });
  }
  return out;
}

inline Tensor sum(Tape& tape, const Tensor& a) {
  double total = std::accumulate(a.values().begin(), a.values().end(), 0.0);
  Tensor out = Tensor::scalar(total);
  out.set_requires_grad(a.requires_grad());
  if (out.requires_grad()) {
    out.ensure_grad();
    Tensor ac = a, oc = out;
    tape.record(out, [ac, oc]() mutable {
      for (std::size_t i = 0; i < ac.numel(); ++i)
        ac.grad()[i] += oc.grad()[0];
    });
  }
  return out;
}

// ---- gradient verification ------------------------------------------------

// Central-difference check of d(f)/d(point) against the tape gradient.
// Returns the max relative error with denominator max(|analytic|,|numeric|,1e-8).
inline double finite_difference_check(
    const std::function<Tensor(Tape&, Tensor&)>& f, Tensor point,
    double epsilon = 1e-5) {
  if (epsilon <= 0.0)
    throw ParameterError("finite_difference_check: epsilon must be positive");
  point.set_requires_grad(true);
  point.ensure_grad();
  point.zero_grad();
  {
    Tape tape;
    Tensor loss = f(tape, point);
    tape.backward(loss);
  }
  std::vector<double> analytic = point.grad();
  double max_rel = 0.0;
  for (std::size_t i = 0; i < point.numel(); ++i) {
    double orig = point.at(i);
    Tape t1, t2;
    point.at(i) = orig + epsilon;
    double fp = f(t1, point).item();
    point.at(i) = orig - epsilon;
    double fm = f(t2, point).item();
    point.at(i) = orig;
    double numeric = (fp - fm) / (2.0 * epsilon);
    double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-8});
    max_rel = std::max(max_rel, std::fabs(analytic[i] - numeric) / denom);
  }
  return max_rel;
}

}  // namespace intuit
