#pragma once

// Dense float64 tensors with tape-based reverse-mode autodiff. Just enough
// primitives for the toy transformer and the PAC-LoRA layers: matmul,
// elementwise arithmetic, softmax, layer norm, embedding lookup, dropout and
// cross-entropy. Shapes are rank 1 or 2; the only broadcast is a bias row
// added across matrix rows.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "socialalign/errors.hpp"

namespace socialalign {

inline std::string shape_to_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

// Shared-storage handle. Copies alias the same buffer; ops return fresh
// storage. Once a value buffer is written by the op that produced it, it is
// never mutated again except by optimizer updates on leaf parameters.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, bool requires_grad = false)
      : s_(std::make_shared<Storage>()) {
    s_->shape = std::move(shape);
    std::size_t n = 1;
    for (std::size_t d : s_->shape) n *= d;
    s_->data.assign(n, 0.0);
    s_->requires_grad = requires_grad;
    if (requires_grad) s_->grad.assign(n, 0.0);
  }

  static Tensor from_data(std::vector<std::size_t> shape, std::vector<double> values,
                          bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    if (values.size() != t.size()) {
      throw DimensionError("from_data: " + std::to_string(values.size()) +
                           " values for shape " + shape_to_string(t.shape()));
    }
    std::copy(values.begin(), values.end(), t.data());
    return t;
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    Tensor t(std::vector<std::size_t>{1}, requires_grad);
    t.data()[0] = v;
    return t;
  }

  static Tensor randn(std::vector<std::size_t> shape, double stddev, std::mt19937_64& rng,
                      bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    std::normal_distribution<double> dist(0.0, stddev);
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = dist(rng);
    return t;
  }

  static Tensor full(std::vector<std::size_t> shape, double v, bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    std::fill(t.data(), t.data() + t.size(), v);
    return t;
  }

  bool defined() const { return static_cast<bool>(s_); }
  const std::vector<std::size_t>& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t size() const { return s_->data.size(); }
  std::size_t rows() const { return s_->shape.at(0); }
  std::size_t cols() const { return s_->shape.at(1); }

  double* data() { return s_->data.data(); }
  const double* data() const { return s_->data.data(); }
  double& at(std::size_t i) { return s_->data[i]; }
  double at(std::size_t i) const { return s_->data[i]; }
  double& at(std::size_t i, std::size_t j) { return s_->data[i * cols() + j]; }
  double at(std::size_t i, std::size_t j) const { return s_->data[i * cols() + j]; }

  double item() const {
    if (size() != 1) throw ContractError("item(): tensor has " + std::to_string(size()) + " elements");
    return s_->data[0];
  }

  bool requires_grad() const { return s_->requires_grad; }

  // Toggling gradient tracking re-allocates (or drops) the grad buffer.
  void set_requires_grad(bool rg) {
    s_->requires_grad = rg;
    if (rg) {
      s_->grad.assign(s_->data.size(), 0.0);
    } else {
      s_->grad.clear();
      s_->grad.shrink_to_fit();
    }
  }

  double* grad() { return s_->grad.data(); }
  const double* grad() const { return s_->grad.data(); }
  void zero_grad() { std::fill(s_->grad.begin(), s_->grad.end(), 0.0); }

  bool same_storage(const Tensor& other) const { return s_ == other.s_; }

  bool all_finite() const {
    for (double v : s_->data)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  struct Storage {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    std::vector<double> grad;  // sized like data iff requires_grad
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> s_;
};

namespace detail {

// C[m,n] += A[m,k] * B[k,n], row-major. ikj order keeps the inner loop
// streaming over contiguous rows of B and C so it vectorizes.
inline void gemm_acc(const double* a, const double* b, double* __restrict c,
                     std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m,n] += A[m,k] * B^T where B is [n,k].
inline void gemm_bt_acc(const double* a, const double* b, double* __restrict c,
                        std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

// C[k,n] += A^T * B where A is [m,k], B is [m,n].
inline void gemm_at_acc(const double* a, const double* b, double* __restrict c,
                        std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

inline void softmax_row(const double* x, double* y, std::size_t n) {
  double mx = x[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = std::exp(x[i] - mx);
    sum += y[i];
  }
  for (std::size_t i = 0; i < n; ++i) y[i] /= sum;
}

}  // namespace detail

// Operation tape for one training context. Records a backward closure per
// differentiable op; backward() replays them in reverse insertion order.
// Construction and backward are single-threaded by contract.
class Tape {
 public:
  // When grads are disabled (inference) ops compute values only and record nothing.
  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  bool grad_enabled() const { return grad_enabled_; }

  std::size_t node_count() const { return nodes_.size(); }
  void clear() {
    nodes_.clear();
    outputs_.clear();
  }

  // Seeds d(loss)/d(loss) = 1 and accumulates into every requires_grad leaf
  // reachable backward from it. Intermediate (op-produced) grads are scratch
  // space zeroed per pass, so calling backward again without zeroing leaf
  // grads adds another unit of the same gradient.
  void backward(const Tensor& loss) {
    if (loss.size() != 1) {
      throw ContractError("backward: loss must be scalar, got shape " + shape_to_string(loss.shape()));
    }
    if (!loss.requires_grad()) {
      throw ContractError("backward: loss does not depend on any gradient-tracked tensor");
    }
    for (Tensor& out : outputs_) out.zero_grad();
    const_cast<Tensor&>(loss).grad()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  // --- primitives -----------------------------------------------------------

  // (m,k)x(k,n)->(m,n); (m,k)x(k)->(m); (k)x(k,n)->(n)
  Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() == 2 && b.rank() == 2) {
      if (a.cols() != b.rows()) throw dim_error("matmul", a, b);
      Tensor out = make_out({a.rows(), b.cols()}, a, b);
      detail::gemm_acc(a.data(), b.data(), out.data(), a.rows(), a.cols(), b.cols());
      if (out.requires_grad()) {
        record([a, b, out]() {
          if (a.requires_grad())
            detail::gemm_bt_acc(out.grad(), b.data(), const_cast<Tensor&>(a).grad(), a.rows(),
                                b.cols(), a.cols());
          if (b.requires_grad())
            detail::gemm_at_acc(a.data(), out.grad(), const_cast<Tensor&>(b).grad(), a.rows(),
                                a.cols(), b.cols());
        });
      }
      return out;
    }
    if (a.rank() == 2 && b.rank() == 1) {
      if (a.cols() != b.shape()[0]) throw dim_error("matmul", a, b);
      Tensor out = make_out({a.rows()}, a, b);
      detail::gemm_acc(a.data(), b.data(), out.data(), a.rows(), a.cols(), 1);
      if (out.requires_grad()) {
        record([a, b, out]() {
          if (a.requires_grad())
            detail::gemm_bt_acc(out.grad(), b.data(), const_cast<Tensor&>(a).grad(), a.rows(), 1,
                                a.cols());
          if (b.requires_grad())
            detail::gemm_at_acc(a.data(), out.grad(), const_cast<Tensor&>(b).grad(), a.rows(),
                                a.cols(), 1);
        });
      }
      return out;
    }
    if (a.rank() == 1 && b.rank() == 2) {
      if (a.shape()[0] != b.rows()) throw dim_error("matmul", a, b);
      Tensor out = make_out({b.cols()}, a, b);
      detail::gemm_acc(a.data(), b.data(), out.data(), 1, b.rows(), b.cols());
      if (out.requires_grad()) {
        record([a, b, out]() {
          if (a.requires_grad())
            detail::gemm_bt_acc(out.grad(), b.data(), const_cast<Tensor&>(a).grad(), 1, b.cols(),
                                b.rows());
          if (b.requires_grad())
            detail::gemm_at_acc(a.data(), out.grad(), const_cast<Tensor&>(b).grad(), 1, b.rows(),
                                b.cols());
        });
      }
      return out;
    }
    throw dim_error("matmul", a, b);
  }

  Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw dim_error("add", a, b);
    Tensor out = make_out(a.shape(), a, b);
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
    if (out.requires_grad()) {
      record([a, b, out]() {
        if (a.requires_grad())
          for (std::size_t i = 0; i < out.size(); ++i) const_cast<Tensor&>(a).grad()[i] += out.grad()[i];
        if (b.requires_grad())
          for (std::size_t i = 0; i < out.size(); ++i) const_cast<Tensor&>(b).grad()[i] += out.grad()[i];
      });
    }
    return out;
  }

  // x[m,n] + bias[n] broadcast over rows — the only broadcast we support.
  Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
    if (x.rank() != 2 || bias.rank() != 1 || bias.shape()[0] != x.cols())
      throw dim_error("add_row_bias", x, bias);
    Tensor out = make_out(x.shape(), x, bias);
    const std::size_t m = x.rows(), n = x.cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) = x.at(i, j) + bias.at(j);
    if (out.requires_grad()) {
      record([x, bias, out, m, n]() {
        if (x.requires_grad())
          for (std::size_t i = 0; i < m * n; ++i) const_cast<Tensor&>(x).grad()[i] += out.grad()[i];
        if (bias.requires_grad())
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
              const_cast<Tensor&>(bias).grad()[j] += out.grad()[i * n + j];
      });
    }
    return out;
  }

  Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw dim_error("mul", a, b);
    Tensor out = make_out(a.shape(), a, b);
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    if (out.requires_grad()) {
      record([a, b, out]() {
        if (a.requires_grad())
          for (std::size_t i = 0; i < out.size(); ++i)
            const_cast<Tensor&>(a).grad()[i] += out.grad()[i] * b.data()[i];
        if (b.requires_grad())
          for (std::size_t i = 0; i < out.size(); ++i)
            const_cast<Tensor&>(b).grad()[i] += out.grad()[i] * a.data()[i];
      });
    }
    return out;
  }

  // Multiply by a compile-time-known constant (no gradient into c).
  Tensor scale(const Tensor& x, double c) {
    Tensor out = make_out(x.shape(), x, x);
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = x.data()[i] * c;
    if (out.requires_grad()) {
      record([x, out, c]() {
        for (std::size_t i = 0; i < out.size(); ++i)
          const_cast<Tensor&>(x).grad()[i] += out.grad()[i] * c;
      });
    }
    return out;
  }

  // Multiply by a scalar tensor; gradients flow into both operands. This is
  // how gate weights scale expert outputs.
  Tensor scale_by(const Tensor& x, const Tensor& s) {
    if (s.size() != 1) throw dim_error("scale_by", x, s);
    Tensor out = make_out(x.shape(), x, s);
    const double sv = s.data()[0];
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = x.data()[i] * sv;
    if (out.requires_grad()) {
      record([x, s, out, sv]() {
        if (x.requires_grad())
          for (std::size_t i = 0; i < out.size(); ++i)
            const_cast<Tensor&>(x).grad()[i] += out.grad()[i] * sv;
        if (s.requires_grad()) {
          double acc = 0.0;
          for (std::size_t i = 0; i < out.size(); ++i) acc += out.grad()[i] * x.data()[i];
          const_cast<Tensor&>(s).grad()[0] += acc;
        }
      });
    }
    return out;
  }

  Tensor transpose(const Tensor& x) {
    if (x.rank() != 2) throw dim_error("transpose", x, x);
    const std::size_t m = x.rows(), n = x.cols();
    Tensor out = make_out({n, m}, x, x);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out.at(j, i) = x.at(i, j);
    if (out.requires_grad()) {
      record([x, out, m, n]() {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j)
            const_cast<Tensor&>(x).grad()[i * n + j] += out.grad()[j * m + i];
      });
    }
    return out;
  }

  Tensor relu(const Tensor& x) {
    Tensor out = make_out(x.shape(), x, x);
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
    if (out.requires_grad()) {
      record([x, out]() {
        for (std::size_t i = 0; i < out.size(); ++i)
          if (x.data()[i] > 0.0) const_cast<Tensor&>(x).grad()[i] += out.grad()[i];
      });
    }
    return out;
  }

  // Exact GELU: x * Phi(x).
  Tensor gelu(const Tensor& x) {
    Tensor out = make_out(x.shape(), x, x);
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double v = x.data()[i];
      out.data()[i] = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
    }
    if (out.requires_grad()) {
      record([x, out]() {
        constexpr double inv_sqrt_2pi = 0.3989422804014326779;
        for (std::size_t i = 0; i < out.size(); ++i) {
          const double v = x.data()[i];
          const double phi = 0.5 * (1.0 + std::erf(v / std::sqrt(2.0)));
          const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
          const_cast<Tensor&>(x).grad()[i] += out.grad()[i] * (phi + v * pdf);
        }
      });
    }
    return out;
  }

  // 1-D probability vector with max-subtraction. Non-finite entries are a
  // domain error rather than silent NaN propagation.
  Tensor softmax(const Tensor& x) {
    if (x.rank() != 1 || x.size() == 0) throw dim_error("softmax", x, x);
    check_finite("softmax", x);
    Tensor out = make_out(x.shape(), x, x);
    detail::softmax_row(x.data(), out.data(), x.size());
    if (out.requires_grad()) {
      record([x, out]() { softmax_backward(x, out, 0, out.size()); });
    }
    return out;
  }

  // Softmax independently over each row of a 2-D tensor.
  Tensor row_softmax(const Tensor& x) {
    if (x.rank() != 2) throw dim_error("row_softmax", x, x);
    check_finite("row_softmax", x);
    Tensor out = make_out(x.shape(), x, x);
    const std::size_t m = x.rows(), n = x.cols();
    for (std::size_t i = 0; i < m; ++i)
      detail::softmax_row(x.data() + i * n, out.data() + i * n, n);
    if (out.requires_grad()) {
      record([x, out, m, n]() {
        for (std::size_t i = 0; i < m; ++i) softmax_backward(x, out, i * n, n);
      });
    }
    return out;
  }

  // Normalizes the last dimension: gain * (x - mean)/sqrt(var + eps) + bias.
  Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
    const std::size_t n = x.rank() == 2 ? x.cols() : x.size();
    const std::size_t m = x.rank() == 2 ? x.rows() : 1;
    if (gain.rank() != 1 || gain.size() != n || bias.rank() != 1 || bias.size() != n)
      throw dim_error("layer_norm", x, gain);
    Tensor out = make_out(x.shape(), x, gain, bias);
    std::vector<double> inv_sigma(m), mean(m);
    for (std::size_t i = 0; i < m; ++i) {
      const double* row = x.data() + i * n;
      double mu = 0.0;
      for (std::size_t j = 0; j < n; ++j) mu += row[j];
      mu /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
      var /= static_cast<double>(n);
      const double is = 1.0 / std::sqrt(var + eps);
      mean[i] = mu;
      inv_sigma[i] = is;
      double* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] = (row[j] - mu) * is * gain.data()[j] + bias.data()[j];
    }
    if (out.requires_grad()) {
      record([x, gain, bias, out, mean, inv_sigma, m, n]() {
        for (std::size_t i = 0; i < m; ++i) {
          const double* row = x.data() + i * n;
          const double* go = out.grad() + i * n;
          const double is = inv_sigma[i], mu = mean[i];
          double sum_dg = 0.0, sum_dgx = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double xhat = (row[j] - mu) * is;
            const double dg = go[j] * gain.data()[j];
            sum_dg += dg;
            sum_dgx += dg * xhat;
          }
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t j = 0; j < n; ++j) {
            const double xhat = (row[j] - mu) * is;
            const double dg = go[j] * gain.data()[j];
            if (x.requires_grad())
              const_cast<Tensor&>(x).grad()[i * n + j] +=
                  is * (dg - inv_n * sum_dg - xhat * inv_n * sum_dgx);
            if (gain.requires_grad()) const_cast<Tensor&>(gain).grad()[j] += go[j] * xhat;
            if (bias.requires_grad()) const_cast<Tensor&>(bias).grad()[j] += go[j];
          }
        }
      });
    }
    return out;
  }

  // Row gather: out[t,:] = table[ids[t],:].
  Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
    if (table.rank() != 2) throw dim_error("embedding", table, table);
    const std::size_t v = table.rows(), d = table.cols();
    for (int id : ids)
      if (id < 0 || static_cast<std::size_t>(id) >= v)
        throw ContractError("embedding: token id " + std::to_string(id) + " outside table of " +
                            std::to_string(v) + " rows");
    Tensor out = make_out({ids.size(), d}, table, table);
    for (std::size_t t = 0; t < ids.size(); ++t)
      std::copy(table.data() + ids[t] * d, table.data() + (ids[t] + 1) * d, out.data() + t * d);
    if (out.requires_grad()) {
      record([table, out, ids, d]() {
        for (std::size_t t = 0; t < ids.size(); ++t) {
          double* dst = const_cast<Tensor&>(table).grad() + static_cast<std::size_t>(ids[t]) * d;
          const double* src = out.grad() + t * d;
          for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
        }
      });
    }
    return out;
  }

  // Inverted dropout driven by an explicit PRNG stream. Identity when not
  // training or when rate == 0 (no mask drawn, keeping streams aligned across
  // eval runs).
  Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng, bool train) {
    if (rate < 0.0 || rate >= 1.0)
      throw ContractError("dropout: rate " + std::to_string(rate) + " outside [0,1)");
    if (!train || rate == 0.0) return x;
    Tensor out = make_out(x.shape(), x, x);
    auto mask = std::make_shared<std::vector<double>>(x.size());
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double keep_scale = 1.0 / (1.0 - rate);
    for (std::size_t i = 0; i < x.size(); ++i) {
      (*mask)[i] = u(rng) < rate ? 0.0 : keep_scale;
      out.data()[i] = x.data()[i] * (*mask)[i];
    }
    if (out.requires_grad()) {
      record([x, out, mask]() {
        for (std::size_t i = 0; i < out.size(); ++i)
          const_cast<Tensor&>(x).grad()[i] += out.grad()[i] * (*mask)[i];
      });
    }
    return out;
  }

  // Mean of the selected rows of a 2-D tensor; an empty selection yields a
  // zero vector with no gradient path.
  Tensor mean_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
    if (x.rank() != 2) throw dim_error("mean_rows", x, x);
    const std::size_t n = x.cols();
    if (rows.empty()) return Tensor({n});
    for (std::size_t r : rows)
      if (r >= x.rows()) throw ContractError("mean_rows: row index out of range");
    Tensor out = make_out({n}, x, x);
    for (std::size_t r : rows)
      for (std::size_t j = 0; j < n; ++j) out.data()[j] += x.at(r, j);
    const double inv = 1.0 / static_cast<double>(rows.size());
    for (std::size_t j = 0; j < n; ++j) out.data()[j] *= inv;
    if (out.requires_grad()) {
      record([x, out, rows, n, inv]() {
        for (std::size_t r : rows)
          for (std::size_t j = 0; j < n; ++j)
            const_cast<Tensor&>(x).grad()[r * n + j] += out.grad()[j] * inv;
      });
    }
    return out;
  }

  // Extract element i of a vector as a scalar tensor (grads scatter back).
  Tensor index(const Tensor& v, std::size_t i) {
    if (v.rank() != 1 || i >= v.size())
      throw ContractError("index: position " + std::to_string(i) + " outside vector of " +
                          std::to_string(v.size()));
    Tensor out = make_out({1}, v, v);
    out.data()[0] = v.data()[i];
    if (out.requires_grad()) {
      record([v, out, i]() { const_cast<Tensor&>(v).grad()[i] += out.grad()[0]; });
    }
    return out;
  }

  Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
    if (x.rank() != 2 || start + count > x.rows())
      throw DimensionError("slice_rows: [" + std::to_string(start) + "," +
                           std::to_string(start + count) + ") outside " + shape_to_string(x.shape()));
    const std::size_t n = x.cols();
    Tensor out = make_out({count, n}, x, x);
    std::copy(x.data() + start * n, x.data() + (start + count) * n, out.data());
    if (out.requires_grad()) {
      record([x, out, start, count, n]() {
        for (std::size_t i = 0; i < count * n; ++i)
          const_cast<Tensor&>(x).grad()[start * n + i] += out.grad()[i];
      });
    }
    return out;
  }

  Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
    if (x.rank() != 2 || start + count > x.cols())
      throw DimensionError("slice_cols: [" + std::to_string(start) + "," +
                           std::to_string(start + count) + ") outside " + shape_to_string(x.shape()));
    const std::size_t m = x.rows(), n = x.cols();
    Tensor out = make_out({m, count}, x, x);
    for (std::size_t i = 0; i < m; ++i)
      std::copy(x.data() + i * n + start, x.data() + i * n + start + count, out.data() + i * count);
    if (out.requires_grad()) {
      record([x, out, start, count, m, n]() {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < count; ++j)
            const_cast<Tensor&>(x).grad()[i * n + start + j] += out.grad()[i * count + j];
      });
    }
    return out;
  }

  Tensor concat_cols(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ContractError("concat_cols: empty input");
    const std::size_t m = xs[0].rows();
    std::size_t total = 0;
    bool rg = false;
    for (const Tensor& t : xs) {
      if (t.rank() != 2 || t.rows() != m) throw dim_error("concat_cols", xs[0], t);
      total += t.cols();
      rg = rg || t.requires_grad();
    }
    Tensor out({m, total}, rg && grad_enabled_);
    if (out.requires_grad()) outputs_.push_back(out);
    std::size_t off = 0;
    for (const Tensor& t : xs) {
      for (std::size_t i = 0; i < m; ++i)
        std::copy(t.data() + i * t.cols(), t.data() + (i + 1) * t.cols(),
                  out.data() + i * total + off);
      off += t.cols();
    }
    if (out.requires_grad()) {
      record([xs, out, m, total]() {
        std::size_t off2 = 0;
        for (const Tensor& t : xs) {
          if (t.requires_grad())
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t j = 0; j < t.cols(); ++j)
                const_cast<Tensor&>(t).grad()[i * t.cols() + j] += out.grad()[i * total + off2 + j];
          off2 += t.cols();
        }
      });
    }
    return out;
  }

  // Mean cross-entropy (natural log) of logits rows against integer targets,
  // restricted to rows where mask is set. The softmax/log pair is fused for
  // stability.
  Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                       const std::vector<bool>& mask) {
    if (logits.rank() != 2) throw dim_error("cross_entropy", logits, logits);
    const std::size_t m = logits.rows(), n = logits.cols();
    if (targets.size() != m || mask.size() != m)
      throw ContractError("cross_entropy: " + std::to_string(m) + " rows vs " +
                          std::to_string(targets.size()) + " targets / " +
                          std::to_string(mask.size()) + " mask entries");
    std::size_t n_active = 0;
    for (std::size_t i = 0; i < m; ++i) {
      if (!mask[i]) continue;
      ++n_active;
      if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= n)
        throw ContractError("cross_entropy: target id out of range at row " + std::to_string(i));
    }
    if (n_active == 0) throw ContractError("cross_entropy: mask selects no positions");

    auto probs = std::make_shared<std::vector<double>>(m * n, 0.0);
    double loss = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      if (!mask[i]) continue;
      const double* row = logits.data() + i * n;
      double mx = row[0];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
      double sum = 0.0;
      for (std::size_t j = 0; j < n; ++j) sum += std::exp(row[j] - mx);
      const double log_z = mx + std::log(sum);
      loss -= row[targets[i]] - log_z;
      double* prow = probs->data() + i * n;
      for (std::size_t j = 0; j < n; ++j) prow[j] = std::exp(row[j] - log_z);
    }
    loss /= static_cast<double>(n_active);

    Tensor out = make_out({1}, logits, logits);
    out.data()[0] = loss;
    if (out.requires_grad()) {
      record([logits, out, probs, targets, mask, m, n, n_active]() {
        const double g = out.grad()[0] / static_cast<double>(n_active);
        for (std::size_t i = 0; i < m; ++i) {
          if (!mask[i]) continue;
          double* dst = const_cast<Tensor&>(logits).grad() + i * n;
          const double* prow = probs->data() + i * n;
          for (std::size_t j = 0; j < n; ++j) dst[j] += g * prow[j];
          dst[targets[i]] -= g;
        }
      });
    }
    return out;
  }

  // Sum of scalar tensors.
  Tensor sum_scalars(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ContractError("sum_scalars: empty input");
    bool rg = false;
    double total = 0.0;
    for (const Tensor& t : xs) {
      if (t.size() != 1) throw dim_error("sum_scalars", xs[0], t);
      total += t.data()[0];
      rg = rg || t.requires_grad();
    }
    Tensor out({1}, rg && grad_enabled_);
    out.data()[0] = total;
    if (out.requires_grad()) {
      outputs_.push_back(out);
      record([xs, out]() {
        for (const Tensor& t : xs)
          if (t.requires_grad()) const_cast<Tensor&>(t).grad()[0] += out.grad()[0];
      });
    }
    return out;
  }

 private:
  static DimensionError dim_error(const char* op, const Tensor& a, const Tensor& b) {
    return DimensionError(std::string(op) + ": incompatible shapes " + shape_to_string(a.shape()) +
                          " and " + shape_to_string(b.shape()));
  }

  static void check_finite(const char* op, const Tensor& x) {
    if (!x.all_finite()) throw NumericDomainError(std::string(op) + ": non-finite input value");
  }

  static void softmax_backward(const Tensor& x, const Tensor& out, std::size_t off, std::size_t n) {
    const double* y = out.data() + off;
    const double* gy = out.grad() + off;
    double dot = 0.0;
    for (std::size_t i = 0; i < n; ++i) dot += gy[i] * y[i];
    for (std::size_t i = 0; i < n; ++i)
      const_cast<Tensor&>(x).grad()[off + i] += y[i] * (gy[i] - dot);
  }

  Tensor make_out(std::vector<std::size_t> shape, const Tensor& a, const Tensor& b) {
    const bool rg = grad_enabled_ && (a.requires_grad() || b.requires_grad());
    Tensor t(std::move(shape), rg);
    if (rg) outputs_.push_back(t);
    return t;
  }
  Tensor make_out(std::vector<std::size_t> shape, const Tensor& a, const Tensor& b, const Tensor& c) {
    const bool rg = grad_enabled_ && (a.requires_grad() || b.requires_grad() || c.requires_grad());
    Tensor t(std::move(shape), rg);
    if (rg) outputs_.push_back(t);
    return t;
  }

  void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }

  std::vector<std::function<void()>> nodes_;
  std::vector<Tensor> outputs_;
  bool grad_enabled_ = true;
};

}  // namespace socialalign
