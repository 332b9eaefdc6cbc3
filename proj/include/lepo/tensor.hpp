// Copyright 2026 The lepo-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense f64 tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a handle to an immutable node. When a Tape is active on the
// current thread (see TapeScope) and any operand requires a gradient, the op
// appends its result node to the tape together with a closure that routes the
// output gradient back to the operands. Creation order is therefore a
// topological order, and backward() walks the tape once in reverse.
//
// Without an active tape ops only compute values, which is what rollouts use.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lepo/error.hpp"

namespace lepo {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;
  bool leaf = true;
  std::size_t tape_slot = 0;  // 1-based position on the owning tape, 0 if not recorded
  const void* tape = nullptr;
  std::function<void(Node&)> backward;

  std::span<double> grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

using NodePtr = std::shared_ptr<Node>;

}  // namespace detail

class Tape;

namespace detail {
inline thread_local Tape* active_tape = nullptr;
}

class Tensor {
 public:
  Tensor() : Tensor(Shape{0}) {}

  explicit Tensor(Shape shape) : node_(std::make_shared<detail::Node>()) {
    node_->value.assign(shape_product(shape), 0.0);
    node_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<double> data) : node_(std::make_shared<detail::Node>()) {
    if (shape_product(shape) != data.size()) {
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_string(shape));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(data);
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }

  static Tensor vector(std::vector<double> data) {
    const auto n = data.size();
    return Tensor(Shape{n}, std::move(data));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
    return Tensor(Shape{rows, cols}, std::move(data));
  }

  /// Leaf that accumulates gradients during backward().
  static Tensor parameter(Shape shape, std::vector<double> data) {
    Tensor t(std::move(shape), std::move(data));
    t.node_->requires_grad = true;
    return t;
  }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rows() const { return rank() == 2 ? dim(0) : 1; }
  std::size_t cols() const { return rank() == 0 ? 1 : node_->shape.back(); }

  std::span<const double> data() const { return node_->value; }
  double operator[](std::size_t i) const { return node_->value[i]; }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  double item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }

  void set_requires_grad(bool on) {
    if (!node_->leaf) throw ContractError("requires_grad can only be toggled on leaf tensors");
    node_->requires_grad = on;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  /// Writable view for optimizer updates. Leaves only; never call while a
  /// tape that saw this tensor is still live.
  std::span<double> mutable_data() {
    if (!node_->leaf) throw ContractError("in-place mutation of a recorded tensor");
    return node_->value;
  }

  /// Constant copy, cut from any tape.
  Tensor detach() const { return Tensor(shape(), node_->value); }

  /// Deep copy that keeps the requires_grad flag but not the gradient.
  Tensor clone() const {
    Tensor t(shape(), node_->value);
    t.node_->requires_grad = node_->requires_grad && node_->leaf;
    return t;
  }

  bool shares_node_with(const Tensor& other) const { return node_ == other.node_; }

  const detail::NodePtr& node() const { return node_; }

 private:
  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}
  friend Tensor make_result(Shape, std::vector<double>, bool, std::function<void(detail::Node&)>);

  detail::NodePtr node_;
};

/// Ordered record of differentiable ops for one backward pass.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return nodes_.size(); }

  void record(const detail::NodePtr& node) {
    nodes_.push_back(node);
    node->tape_slot = nodes_.size();
    node->tape = this;
  }

  /// Populates grad() of every requires_grad leaf reachable from `loss`.
  void backward(const Tensor& loss) {
    if (loss.size() != 1) {
      throw ContractError("backward() needs a scalar loss, got shape " + shape_string(loss.shape()));
    }
    if (consumed_) throw ContractError("backward() already ran on this tape");
    const auto& root = loss.node();
    if (!root->requires_grad) throw ContractError("loss is not connected to any parameter");
    consumed_ = true;
    if (root->leaf) {
      root->grad_buffer()[0] += 1.0;
      return;
    }
    if (root->tape != this) throw ContractError("loss was recorded on a different tape");
    root->grad_buffer()[0] = 1.0;
    for (std::size_t i = root->tape_slot; i-- > 0;) {
      detail::Node& node = *nodes_[i];
      if (node.grad.empty()) continue;
      node.backward(node);
    }
  }

  void clear() {
    nodes_.clear();
    consumed_ = false;
  }

 private:
  std::vector<detail::NodePtr> nodes_;
  bool consumed_ = false;
};

/// Makes `tape` the recording target for ops on this thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : previous_(detail::active_tape) { detail::active_tape = &tape; }
  ~TapeScope() { detail::active_tape = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording, e.g. for rollouts inside a training step.
class NoGradScope {
 public:
  NoGradScope() : previous_(detail::active_tape) { detail::active_tape = nullptr; }
  ~NoGradScope() { detail::active_tape = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

inline void backward(const Tensor& loss) {
  if (detail::active_tape == nullptr) {
    if (loss.size() == 1 && loss.requires_grad() && loss.is_leaf()) {
      // a bare parameter used as its own loss
      Tape tape;
      tape.backward(loss);
      return;
    }
    throw ContractError("backward() called with no active tape");
  }
  detail::active_tape->backward(loss);
}

inline Tensor make_result(Shape shape, std::vector<double> value, bool any_input_requires_grad,
                          std::function<void(detail::Node&)> backward_fn) {
  for (double v : value) {
    if (!std::isfinite(v)) throw NumericError("non-finite value produced by tensor op");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  Tape* tape = detail::active_tape;
  if (tape != nullptr && any_input_requires_grad) {
    node->requires_grad = true;
    node->leaf = false;
    node->backward = std::move(backward_fn);
    tape->record(node);
  }
  return Tensor(std::move(node));
}

inline Tensor make_result(Shape shape, std::vector<double> value,
                          std::initializer_list<const Tensor*> inputs,
                          std::function<void(detail::Node&)> backward_fn) {
  bool needs_grad = false;
  for (const Tensor* t : inputs) needs_grad = needs_grad || t->requires_grad();
  return make_result(std::move(shape), std::move(value), needs_grad, std::move(backward_fn));
}

namespace detail {

inline void add_into(const NodePtr& target, std::span<const double> g) {
  if (!target->requires_grad) return;
  auto buf = target->grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(t.shape()));
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

// C[m×n] += A[m×k]·B[k×n]
inline void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
                    std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

// C[m×k] += A[m×n]·B[k×n]ᵀ
inline void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
                    std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b.data() + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
      c[i * k + p] += acc;
    }
  }
}

// C[k×n] += A[m×k]ᵀ·B[m×n]
inline void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
                    std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* brow = b.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      double* crow = c.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

template <class Fn, class Deriv>
Tensor unary(const Tensor& a, Fn fn, Deriv deriv) {
  std::vector<double> out(a.size());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn(x[i]);
  auto an = a.node();
  return make_result(a.shape(), std::move(out), {&a}, [an, deriv](Node& self) {
    if (!an->requires_grad) return;
    auto g = an->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * deriv(an->value[i], self.value[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  detail::gemm_nn(a.data(), b.data(), out, m, k, n);
  auto an = a.node();
  auto bn = b.node();
  return make_result({m, n}, std::move(out), {&a, &b}, [an, bn, m, k, n](detail::Node& self) {
    if (an->requires_grad) detail::gemm_nt(self.grad, bn->value, an->grad_buffer(), m, n, k);
    if (bn->requires_grad) detail::gemm_tn(an->value, self.grad, bn->grad_buffer(), m, k, n);
  });
}

inline Tensor transpose(const Tensor& a) {
  detail::require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  const auto x = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  auto an = a.node();
  return make_result({n, m}, std::move(out), {&a}, [an, m, n](detail::Node& self) {
    if (!an->requires_grad) return;
    auto g = an->grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
  });
}

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  auto an = a.node();
  auto bn = b.node();
  return make_result(a.shape(), std::move(out), {&a, &b}, [an, bn](detail::Node& self) {
    detail::add_into(an, self.grad);
    detail::add_into(bn, self.grad);
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  auto an = a.node();
  auto bn = b.node();
  return make_result(a.shape(), std::move(out), {&a, &b}, [an, bn](detail::Node& self) {
    detail::add_into(an, self.grad);
    if (bn->requires_grad) {
      auto g = bn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  auto an = a.node();
  auto bn = b.node();
  return make_result(a.shape(), std::move(out), {&a, &b}, [an, bn](detail::Node& self) {
    if (an->requires_grad) {
      auto g = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      auto g = bn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->value[i];
    }
  });
}

/// a[m×n] + row[n], row broadcast over the leading axis.
inline Tensor add_row(const Tensor& a, const Tensor& row) {
  detail::require_rank(a, 2, "add_row");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (row.size() != n) {
    throw DimensionError("add_row: row of shape " + shape_string(row.shape()) +
                         " cannot broadcast over " + shape_string(a.shape()));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += row[j];
  auto an = a.node();
  auto rn = row.node();
  return make_result(a.shape(), std::move(out), {&a, &row}, [an, rn, m, n](detail::Node& self) {
    detail::add_into(an, self.grad);
    if (rn->requires_grad) {
      auto g = rn->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
    }
  });
}

inline Tensor scale(const Tensor& a, double c) {
  return detail::unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Tensor add_scalar(const Tensor& a, double c) {
  return detail::unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

inline Tensor exp(const Tensor& a) {
  return detail::unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& a) {
  return detail::unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Tensor tanh(const Tensor& a) {
  return detail::unary(a, [](double x) { return std::tanh(x); },
                       [](double, double y) { return 1.0 - y * y; });
}

/// tanh-approximated GELU, composed from primitive ops.
inline Tensor gelu(const Tensor& x) {
  constexpr double kSqrt2OverPi = 0.7978845608028654;
  const Tensor cube = mul(mul(x, x), x);
  const Tensor inner = scale(add(x, scale(cube, 0.044715)), kSqrt2OverPi);
  return mul(scale(x, 0.5), add_scalar(tanh(inner), 1.0));
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  auto an = a.node();
  return make_result({}, {acc}, {&a}, [an](detail::Node& self) {
    if (!an->requires_grad) return;
    auto g = an->grad_buffer();
    for (double& v : g) v += self.grad[0];
  });
}

inline Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

/// Sum over the last axis.
inline Tensor sum_last(const Tensor& a) {
  if (a.rank() == 0) throw DimensionError("sum_last on a scalar");
  const std::size_t n = a.shape().back();
  const std::size_t m = n == 0 ? 0 : a.size() / n;
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  std::vector<double> out(m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i] += a[i * n + j];
  auto an = a.node();
  return make_result(std::move(out_shape), std::move(out), {&a}, [an, m, n](detail::Node& self) {
    if (!an->requires_grad) return;
    auto g = an->grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Normalizations over the last axis

inline Tensor log_softmax(const Tensor& a) {
  if (a.rank() == 0 || a.shape().back() == 0) {
    throw DimensionError("log_softmax: empty last axis in shape " + shape_string(a.shape()));
  }
  const std::size_t n = a.shape().back();
  const std::size_t m = a.size() / n;
  std::vector<double> out(a.size());
  const auto x = a.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += std::exp(row[j] - mx);
    const double lse = mx + std::log(acc);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = row[j] - lse;
  }
  auto an = a.node();
  return make_result(a.shape(), std::move(out), {&a}, [an, m, n](detail::Node& self) {
    if (!an->requires_grad) return;
    auto g = an->grad_buffer();
    for (std::size_t i = 0; i < m; ++i) {
      double gsum = 0.0;
      for (std::size_t j = 0; j < n; ++j) gsum += self.grad[i * n + j];
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t idx = i * n + j;
        g[idx] += self.grad[idx] - std::exp(self.value[idx]) * gsum;
      }
    }
  });
}

inline Tensor softmax(const Tensor& a) {
  if (a.rank() == 0 || a.shape().back() == 0) {
    throw DimensionError("softmax: empty last axis in shape " + shape_string(a.shape()));
  }
  const std::size_t n = a.shape().back();
  const std::size_t m = a.size() / n;
  std::vector<double> out(a.size());
  const auto x = a.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = std::exp(row[j] - mx);
      acc += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= acc;
  }
  auto an = a.node();
  return make_result(a.shape(), std::move(out), {&a}, [an, m, n](detail::Node& self) {
    if (!an->requires_grad) return;
    auto g = an->grad_buffer();
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += self.grad[i * n + j] * self.value[i * n + j];
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t idx = i * n + j;
        g[idx] += self.value[idx] * (self.grad[idx] - dot);
      }
    }
  });
}

/// Row-wise layer normalization with affine gamma/beta of length n.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
  detail::require_rank(x, 2, "layer_norm");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (gamma.size() != n || beta.size() != n) {
    throw DimensionError("layer_norm: affine params " + shape_string(gamma.shape()) + "/" +
                         shape_string(beta.shape()) + " do not match " + shape_string(x.shape()));
  }
  std::vector<double> out(m * n), xhat(m * n), inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += x[i * n + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = x[i * n + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (x[i * n + j] - mu) * inv_std[i];
      out[i * n + j] = xhat[i * n + j] * gamma[j] + beta[j];
    }
  }
  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  return make_result(
      x.shape(), std::move(out), {&x, &gamma, &beta},
      [xn, gn, bn, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
        const auto& dy = self.grad;
        if (gn->requires_grad) {
          auto g = gn->grad_buffer();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) g[j] += dy[i * n + j] * xhat[i * n + j];
        }
        if (bn->requires_grad) {
          auto g = bn->grad_buffer();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) g[j] += dy[i * n + j];
        }
        if (xn->requires_grad) {
          auto g = xn->grad_buffer();
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t i = 0; i < m; ++i) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = dy[i * n + j] * gn->value[j];
              mean_d += d;
              mean_dx += d * xhat[i * n + j];
            }
            mean_d *= inv_n;
            mean_dx *= inv_n;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = dy[i * n + j] * gn->value[j];
              g[i * n + j] += inv_std[i] * (d - mean_d - xhat[i * n + j] * mean_dx);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Indexing and layout

/// Rows of `table` selected by `ids`: [ids.size() × cols].
inline Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids) {
  detail::require_rank(table, 2, "gather_rows");
  const std::size_t v = table.dim(0), d = table.dim(1);
  std::vector<double> out(ids.size() * d);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= v) {
      throw ContractError("gather_rows: index " + std::to_string(ids[r]) + " out of range for " +
                          std::to_string(v) + " rows");
    }
    std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(ids[r] * d), d, out.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  auto tn = table.node();
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  return make_result({ids.size(), d}, std::move(out), {&table},
                     [tn, idx = std::move(idx), d](detail::Node& self) {
                       if (!tn->requires_grad) return;
                       auto g = tn->grad_buffer();
                       for (std::size_t r = 0; r < idx.size(); ++r)
                         for (std::size_t j = 0; j < d; ++j) g[idx[r] * d + j] += self.grad[r * d + j];
                     });
}

/// out[i] = a[i, ids[i]].
inline Tensor pick(const Tensor& a, std::span<const std::size_t> ids) {
  detail::require_rank(a, 2, "pick");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (ids.size() != m) {
    throw DimensionError("pick: " + std::to_string(ids.size()) + " indices for " + shape_string(a.shape()));
  }
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    if (ids[i] >= n) {
      throw ContractError("pick: index " + std::to_string(ids[i]) + " out of range for width " + std::to_string(n));
    }
    out[i] = a[i * n + ids[i]];
  }
  auto an = a.node();
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  return make_result({m}, std::move(out), {&a}, [an, idx = std::move(idx), n](detail::Node& self) {
    if (!an->requires_grad) return;
    auto g = an->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i) g[i * n + idx[i]] += self.grad[i];
  });
}

inline Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  detail::require_rank(a, 2, "slice_rows");
  if (begin > end || end > a.dim(0)) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") outside " + shape_string(a.shape()));
  }
  const std::size_t n = a.dim(1);
  std::vector<double> out(a.data().begin() + static_cast<std::ptrdiff_t>(begin * n),
                          a.data().begin() + static_cast<std::ptrdiff_t>(end * n));
  auto an = a.node();
  return make_result({end - begin, n}, std::move(out), {&a}, [an, begin, n](detail::Node& self) {
    if (!an->requires_grad) return;
    auto g = an->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * n + i] += self.grad[i];
  });
}

inline Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  detail::require_rank(a, 2, "slice_cols");
  if (begin > end || end > a.dim(1)) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") outside " + shape_string(a.shape()));
  }
  const std::size_t m = a.dim(0), n = a.dim(1), w = end - begin;
  std::vector<double> out(m * w);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = a[i * n + begin + j];
  auto an = a.node();
  return make_result({m, w}, std::move(out), {&a}, [an, begin, m, n, w](detail::Node& self) {
    if (!an->requires_grad) return;
    auto g = an->grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) g[i * n + begin + j] += self.grad[i * w + j];
  });
}

namespace detail {

// Shared implementation for concatenation along rows (axis 0) or columns (axis 1).
inline Tensor concat(std::span<const Tensor> parts, bool along_rows) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  for (const auto& p : parts) require_rank(p, 2, "concat");
  const std::size_t fixed = along_rows ? parts[0].dim(1) : parts[0].dim(0);
  std::size_t total = 0;
  for (const auto& p : parts) {
    const std::size_t f = along_rows ? p.dim(1) : p.dim(0);
    if (f != fixed) {
      throw DimensionError("concat: " + shape_string(p.shape()) + " incompatible with " +
                           shape_string(parts[0].shape()));
    }
    total += along_rows ? p.dim(0) : p.dim(1);
  }
  const std::size_t m = along_rows ? total : fixed;
  const std::size_t n = along_rows ? fixed : total;
  std::vector<double> out(m * n);
  std::vector<NodePtr> nodes;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    nodes.push_back(p.node());
    offsets.push_back(off);
    if (along_rows) {
      std::copy(p.data().begin(), p.data().end(), out.begin() + static_cast<std::ptrdiff_t>(off * n));
      off += p.dim(0);
    } else {
      const std::size_t w = p.dim(1);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) out[i * n + off + j] = p[i * w + j];
      off += w;
    }
  }
  bool needs_grad = false;
  for (const auto& p : parts) needs_grad = needs_grad || p.requires_grad();
  return make_result({m, n}, std::move(out), needs_grad,
                     [nodes = std::move(nodes), offsets = std::move(offsets), along_rows, m, n](Node& self) {
                       for (std::size_t k = 0; k < nodes.size(); ++k) {
                         const auto& pn = nodes[k];
                         if (!pn->requires_grad) continue;
                         auto g = pn->grad_buffer();
                         if (along_rows) {
                           for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offsets[k] * n + i];
                         } else {
                           const std::size_t w = pn->shape[1];
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < w; ++j) g[i * w + j] += self.grad[i * n + offsets[k] + j];
                         }
                       }
                     });
}

}  // namespace detail

inline Tensor concat_rows(std::span<const Tensor> parts) { return detail::concat(parts, true); }
inline Tensor concat_cols(std::span<const Tensor> parts) { return detail::concat(parts, false); }

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_product(shape) != a.size()) {
    throw DimensionError("reshape: " + shape_string(a.shape()) + " to " + shape_string(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  auto an = a.node();
  return make_result(std::move(shape), std::move(out), {&a}, [an](detail::Node& self) {
    detail::add_into(an, self.grad);
  });
}

}  // namespace lepo
