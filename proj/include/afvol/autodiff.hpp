#pragma once

// Define-by-run reverse-mode differentiation over dense double tensors.
//
// A Tape owns every intermediate value produced during one forward pass.
// Ops append nodes in evaluation order, so reverse iteration over the node
// list is a valid topological order for backpropagation. Build a fresh tape
// for each forward pass.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "afvol/error.hpp"
#include "afvol/tensor.hpp"

namespace afvol {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Gradients;

class Tape {
 public:
  /// Propagates the gradient of node `self` into its inputs.
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable input.
  Var leaf(Tensor value) { return push(std::move(value), true, {}); }

  /// Input that never needs a gradient (data, initial states).
  Var constant(Tensor value) { return push(std::move(value), false, {}); }

  /// Leaf bound to a parameter tensor. Repeated calls with the same tensor
  /// return the same node so gradients from every use accumulate in one place.
  Var param(const Tensor& p) {
    if (auto it = params_.find(&p); it != params_.end()) return Var(this, it->second);
    Var v = leaf(p);
    params_.emplace(&p, v.id());
    return v;
  }

  /// Append an op result. `fn` may be empty when no input requires a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    bool needs = false;
    for (const Var& in : inputs) {
      if (in.tape_ != this) throw ContractError("op mixes variables from different tapes");
      needs = needs || nodes_[in.id_].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{});
  }

  Gradients backward(Var root);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient buffer of a node, zero-initialised on first access.
  std::span<double> grad(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
  }

 private:
  friend class Gradients;

  struct Node {
    Tensor value;
    std::vector<double> grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  Var push(Tensor value, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), {}, std::move(fn), requires_grad});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, std::size_t> params_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

/// Gradient table produced by Tape::backward, keyed by node id.
class Gradients {
 public:
  explicit Gradients(Tape& tape) : tape_(&tape) {}

  std::span<const double> operator[](Var v) const { return (*this)[v.id()]; }
  std::span<const double> operator[](std::size_t id) const { return tape_->grad(id); }

  Tensor tensor(Var v) const {
    auto g = (*this)[v];
    return Tensor(v.shape(), std::vector<double>(g.begin(), g.end()));
  }

  /// Gradient with respect to a parameter bound through Tape::param.
  /// Parameters the forward pass never touched get an all-zero gradient.
  std::span<const double> param(const Tensor& p) const {
    auto it = tape_->params_.find(&p);
    if (it == tape_->params_.end()) {
      zeros_.assign(p.size(), 0.0);
      return zeros_;
    }
    return tape_->grad(it->second);
  }

 private:
  Tape* tape_;
  mutable std::vector<double> zeros_;
};

inline Gradients Tape::backward(Var root) {
  if (root.tape_ != this) throw ContractError("backward root belongs to another tape");
  if (root.value().size() != 1) {
    throw ContractError("backward requires a scalar root, got shape " + shape_str(root.shape()));
  }
  for (auto& n : nodes_) n.grad.clear();
  grad(root.id_)[0] = 1.0;
  for (std::size_t i = root.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, i);
  }
  return Gradients(*this);
}

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMat = Eigen::Map<const RowMat>;
using MutMat = Eigen::Map<RowMat>;

inline ConstMat view(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMat(t.data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
inline ConstMat view(std::span<const double> s, std::size_t rows, std::size_t cols) {
  return ConstMat(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
inline MutMat view(std::span<double> s, std::size_t rows, std::size_t cols) {
  return MutMat(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

inline double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Splits a [..., T, d] shape into (batch, T, d).
struct TimeLayout {
  std::size_t batch, steps, width;
};

inline TimeLayout time_layout(const char* op, const Shape& s) {
  if (s.size() < 2) throw DimensionError(std::string(op) + ": expected rank >= 2, got " + shape_str(s));
  const std::size_t steps = s[s.size() - 2];
  const std::size_t width = s.back();
  return {shape_size(s) / (steps * width), steps, width};
}

template <class Forward, class Derivative>
Var unary(Var a, Forward f, Derivative dydx) {
  const Tensor& x = a.value();
  Tensor y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {a}, [ia, dydx](Tape& t, std::size_t self) {
    const Tensor& xv = t.value(ia);
    const Tensor& yv = t.value(self);
    auto g = t.grad(self);
    auto ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dydx(xv[i], yv[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

/// [m x k] . [k x n] -> [m x n]
inline Var matmul(Var a, Var b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
  }
  const std::size_t m = sa[0], k = sa[1], n = sb[1];
  Tensor c({m, n});
  detail::view(c.values(), m, n).noalias() = detail::view(a.value(), m, k) * detail::view(b.value(), k, n);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(c), {a, b}, [ia, ib, m, k, n](Tape& t, std::size_t self) {
    auto g = detail::view(std::span<const double>(t.grad(self)), m, n);
    if (t.requires_grad(ia)) {
      detail::view(t.grad(ia), m, k).noalias() += g * detail::view(t.value(ib), k, n).transpose();
    }
    if (t.requires_grad(ib)) {
      detail::view(t.grad(ib), k, n).noalias() += detail::view(t.value(ia), m, k).transpose() * g;
    }
  });
}

namespace detail {

inline Var linear_impl(Var x, Var w, const Var* b) {
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  if (sx.empty() || sw.size() != 2 || sx.back() != sw[1]) {
    throw DimensionError("linear: input " + shape_str(sx) + " incompatible with weight " + shape_str(sw));
  }
  const std::size_t in = sw[1], out = sw[0], rows = shape_size(sx) / in;
  if (b && (b->shape() != Shape{out})) {
    throw DimensionError("linear: bias " + shape_str(b->shape()) + " does not match weight " + shape_str(sw));
  }
  Shape sy = sx;
  sy.back() = out;
  Tensor y(sy);
  auto ym = view(y.values(), rows, out);
  ym.noalias() = view(x.value(), rows, in) * view(w.value(), out, in).transpose();
  if (b) ym.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b->value().data.data(), static_cast<Eigen::Index>(out));
  const std::size_t ix = x.id(), iw = w.id();
  const std::size_t ib = b ? b->id() : 0;
  const bool has_bias = b != nullptr;
  auto fn = [ix, iw, ib, has_bias, rows, in, out](Tape& t, std::size_t self) {
    auto g = view(std::span<const double>(t.grad(self)), rows, out);
    if (t.requires_grad(ix)) view(t.grad(ix), rows, in).noalias() += g * view(t.value(iw), out, in);
    if (t.requires_grad(iw)) view(t.grad(iw), out, in).noalias() += g.transpose() * view(t.value(ix), rows, in);
    if (has_bias && t.requires_grad(ib)) view(t.grad(ib), 1, out) += g.colwise().sum();
  };
  if (b) return x.tape().record(std::move(y), {x, w, *b}, std::move(fn));
  return x.tape().record(std::move(y), {x, w}, std::move(fn));
}

}  // namespace detail

/// Applies W [out x in] to the last axis of x: y = x . W^T
inline Var linear(Var x, Var w) { return detail::linear_impl(x, w, nullptr); }

/// y = x . W^T + b, with b [out] added to every row.
inline Var linear(Var x, Var w, Var b) { return detail::linear_impl(x, w, &b); }

// ---------------------------------------------------------------------------
// Elementwise family
// ---------------------------------------------------------------------------

inline Var add(Var a, Var b) {
  detail::require_same_shape("add", a, b);
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(y), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    for (std::size_t id : {ia, ib}) {
      if (!t.requires_grad(id)) continue;
      auto gi = t.grad(id);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same_shape("sub", a, b);
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(y), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    if (t.requires_grad(ia)) {
      auto ga = t.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      auto gb = t.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

inline Var mul(Var a, Var b) {
  detail::require_same_shape("mul", a, b);
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(y), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    if (t.requires_grad(ia)) {
      auto ga = t.grad(ia);
      const Tensor& bv = t.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(ib)) {
      auto gb = t.grad(ib);
      const Tensor& av = t.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

/// Explicit scalar-by-tensor product.
inline Var scale(Var a, double c) {
  return detail::unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

/// Explicit scalar-plus-tensor.
inline Var shift(Var a, double c) {
  return detail::unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

inline Var sigmoid(Var a) {
  return detail::unary(a, detail::stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh(Var a) {
  return detail::unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

/// relu'(0) is taken as 0.
inline Var relu(Var a) {
  return detail::unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                       [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var exp(Var a) {
  return detail::unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

enum class ElementwiseOp { add, sub, mul, sigmoid, tanh, relu, exp };

inline Var elementwise(ElementwiseOp op, Var a) {
  switch (op) {
    case ElementwiseOp::sigmoid: return sigmoid(a);
    case ElementwiseOp::tanh: return tanh(a);
    case ElementwiseOp::relu: return relu(a);
    case ElementwiseOp::exp: return exp(a);
    default: throw ContractError("elementwise: binary op called with one argument");
  }
}

inline Var elementwise(ElementwiseOp op, Var a, Var b) {
  switch (op) {
    case ElementwiseOp::add: return add(a, b);
    case ElementwiseOp::sub: return sub(a, b);
    case ElementwiseOp::mul: return mul(a, b);
    default: throw ContractError("elementwise: unary op called with two arguments");
  }
}

// ---------------------------------------------------------------------------
// Reductions and reshaping
// ---------------------------------------------------------------------------

inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data) s += v;
  const std::size_t ia = a.id();
  return a.tape().record(Tensor::scalar(s), {a}, [ia](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (double& gi : t.grad(ia)) gi += g;
  });
}

inline Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

inline Var reshape(Var a, Shape shape) {
  if (shape_size(shape) != a.value().size()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  Tensor y(std::move(shape), a.value().data);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {a}, [ia](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

/// Concatenates along the last axis; leading axes must agree.
inline Var concat_last(Var a, Var b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.empty() || sa.size() != sb.size() || !std::equal(sa.begin(), sa.end() - 1, sb.begin())) {
    throw DimensionError("concat_last: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
  }
  const std::size_t p = sa.back(), q = sb.back(), rows = shape_size(sa) / p;
  Shape sy = sa;
  sy.back() = p + q;
  Tensor y(sy);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.value().data.begin() + static_cast<std::ptrdiff_t>(r * p), p, y.data.begin() + static_cast<std::ptrdiff_t>(r * (p + q)));
    std::copy_n(b.value().data.begin() + static_cast<std::ptrdiff_t>(r * q), q,
                y.data.begin() + static_cast<std::ptrdiff_t>(r * (p + q) + p));
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(y), {a, b}, [ia, ib, rows, p, q](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    if (t.requires_grad(ia)) {
      auto ga = t.grad(ia);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < p; ++j) ga[r * p + j] += g[r * (p + q) + j];
    }
    if (t.requires_grad(ib)) {
      auto gb = t.grad(ib);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < q; ++j) gb[r * q + j] += g[r * (p + q) + p + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Time-axis ops. Sequences are laid out [..., T, d]; axis -2 is time.
// ---------------------------------------------------------------------------

/// Row `step` of every sequence: [..., T, d] -> [..., d].
inline Var time_slice(Var a, std::size_t step) {
  const auto [batch, steps, width] = detail::time_layout("time_slice", a.shape());
  if (step >= steps) {
    throw DimensionError("time_slice: step " + std::to_string(step) + " out of range for " + shape_str(a.shape()));
  }
  Shape sy(a.shape().begin(), a.shape().end() - 2);
  sy.push_back(width);
  Tensor y(sy);
  const auto& x = a.value().data;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < width; ++j) y[b * width + j] = x[(b * steps + step) * width + j];
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {a}, [ia, batch, steps, width, step](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto ga = t.grad(ia);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t j = 0; j < width; ++j) ga[(b * steps + step) * width + j] += g[b * width + j];
  });
}

/// Sum over the time axis: [..., T, d] -> [..., d].
inline Var time_sum(Var a) {
  const auto [batch, steps, width] = detail::time_layout("time_sum", a.shape());
  Shape sy(a.shape().begin(), a.shape().end() - 2);
  sy.push_back(width);
  Tensor y(sy);
  const auto& x = a.value().data;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t s = 0; s < steps; ++s)
      for (std::size_t j = 0; j < width; ++j) y[b * width + j] += x[(b * steps + s) * width + j];
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {a}, [ia, batch, steps, width](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto ga = t.grad(ia);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t s = 0; s < steps; ++s)
        for (std::size_t j = 0; j < width; ++j) ga[(b * steps + s) * width + j] += g[b * width + j];
  });
}

/// Repeats a per-sequence vector over `steps` positions: [..., d] -> [..., T, d].
inline Var broadcast_time(Var a, std::size_t steps) {
  if (a.shape().empty() || steps == 0) {
    throw DimensionError("broadcast_time: bad input " + shape_str(a.shape()) + " x " + std::to_string(steps));
  }
  const std::size_t width = a.shape().back();
  const std::size_t batch = a.value().size() / width;
  Shape sy(a.shape().begin(), a.shape().end() - 1);
  sy.push_back(steps);
  sy.push_back(width);
  Tensor y(sy);
  const auto& x = a.value().data;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t s = 0; s < steps; ++s)
      for (std::size_t j = 0; j < width; ++j) y[(b * steps + s) * width + j] = x[b * width + j];
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {a}, [ia, batch, steps, width](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto ga = t.grad(ia);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t s = 0; s < steps; ++s)
        for (std::size_t j = 0; j < width; ++j) ga[b * width + j] += g[(b * steps + s) * width + j];
  });
}

/// Softmax along the time axis, independently for every feature column.
inline Var softmax_over_time(Var a) {
  const auto [batch, steps, width] = detail::time_layout("softmax_over_time", a.shape());
  Tensor y(a.shape());
  const auto& x = a.value().data;
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t base = b * steps * width;
    for (std::size_t j = 0; j < width; ++j) {
      double hi = x[base + j];
      for (std::size_t s = 1; s < steps; ++s) hi = std::max(hi, x[base + s * width + j]);
      double z = 0.0;
      for (std::size_t s = 0; s < steps; ++s) {
        const double e = std::exp(x[base + s * width + j] - hi);
        y[base + s * width + j] = e;
        z += e;
      }
      for (std::size_t s = 0; s < steps; ++s) y[base + s * width + j] /= z;
    }
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {a}, [ia, batch, steps, width](Tape& t, std::size_t self) {
    const Tensor& yv = t.value(self);
    auto g = t.grad(self);
    auto ga = t.grad(ia);
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t base = b * steps * width;
      for (std::size_t j = 0; j < width; ++j) {
        double dot = 0.0;
        for (std::size_t s = 0; s < steps; ++s) dot += g[base + s * width + j] * yv[base + s * width + j];
        for (std::size_t s = 0; s < steps; ++s) {
          const std::size_t k = base + s * width + j;
          ga[k] += yv[k] * (g[k] - dot);
        }
      }
    }
  });
}

/// Softmax-weighted average over source positions with additive pair-wise
/// position biases:
///   out[t] = sum_s exp(K[s] + w[t,s]) * V[s] / sum_s exp(K[s] + w[t,s])
/// evaluated per feature column. K, V: [..., T, d]; w: [T_max x T_max] with
/// T <= T_max, only the leading T x T block is read.
inline Var position_bias_mix(Var keys, Var vals, Var bias) {
  detail::require_same_shape("position_bias_mix", keys, vals);
  const auto [batch, steps, width] = detail::time_layout("position_bias_mix", keys.shape());
  const Shape& sw = bias.shape();
  if (sw.size() != 2 || sw[0] != sw[1]) {
    throw DimensionError("position_bias_mix: bias must be square, got " + shape_str(sw));
  }
  const std::size_t cap = sw[0];
  if (steps > cap) {
    throw CapacityError("sequence length " + std::to_string(steps) + " exceeds position-bias capacity " +
                        std::to_string(cap));
  }
  Tensor y(keys.shape());
  const auto& k = keys.value().data;
  const auto& v = vals.value().data;
  const auto& w = bias.value().data;
  std::vector<double> weight(steps);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t base = b * steps * width;
    for (std::size_t j = 0; j < width; ++j) {
      for (std::size_t t = 0; t < steps; ++t) {
        double hi = -HUGE_VAL;
        for (std::size_t s = 0; s < steps; ++s) hi = std::max(hi, k[base + s * width + j] + w[t * cap + s]);
        double z = 0.0, acc = 0.0;
        for (std::size_t s = 0; s < steps; ++s) {
          const double e = std::exp(k[base + s * width + j] + w[t * cap + s] - hi);
          z += e;
          acc += e * v[base + s * width + j];
        }
        y[base + t * width + j] = acc / z;
      }
    }
  }
  const std::size_t ik = keys.id(), iv = vals.id(), iw = bias.id();
  return keys.tape().record(
      std::move(y), {keys, vals, bias}, [ik, iv, iw, batch, steps, width, cap](Tape& tp, std::size_t self) {
        const auto& kk = tp.value(ik).data;
        const auto& vv = tp.value(iv).data;
        const auto& ww = tp.value(iw).data;
        const auto& out = tp.value(self).data;
        auto g = tp.grad(self);
        const bool want_k = tp.requires_grad(ik), want_v = tp.requires_grad(iv), want_w = tp.requires_grad(iw);
        std::span<double> gk, gv, gw;
        if (want_k) gk = tp.grad(ik);
        if (want_v) gv = tp.grad(iv);
        if (want_w) gw = tp.grad(iw);
        std::vector<double> a(steps);
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t base = b * steps * width;
          for (std::size_t j = 0; j < width; ++j) {
            for (std::size_t t = 0; t < steps; ++t) {
              double hi = -HUGE_VAL;
              for (std::size_t s = 0; s < steps; ++s) hi = std::max(hi, kk[base + s * width + j] + ww[t * cap + s]);
              double z = 0.0;
              for (std::size_t s = 0; s < steps; ++s) {
                a[s] = std::exp(kk[base + s * width + j] + ww[t * cap + s] - hi);
                z += a[s];
              }
              const double gt = g[base + t * width + j];
              const double ot = out[base + t * width + j];
              for (std::size_t s = 0; s < steps; ++s) {
                const double as = a[s] / z;
                if (want_v) gv[base + s * width + j] += gt * as;
                const double ds = gt * as * (vv[base + s * width + j] - ot);
                if (want_k) gk[base + s * width + j] += ds;
                if (want_w) gw[t * cap + s] += ds;
              }
            }
          }
        }
      });
}

/// Normalises over the last axis with population variance, then applies the
/// affine map psi * xhat + phi. eps guards constant rows.
inline Var layer_norm(Var x, Var psi, Var phi, double eps = 1e-5) {
  const Shape& sx = x.shape();
  if (sx.empty()) throw DimensionError("layer_norm: scalar input");
  const std::size_t d = sx.back();
  if (psi.shape() != Shape{d} || phi.shape() != Shape{d}) {
    throw DimensionError("layer_norm: affine parameters " + shape_str(psi.shape()) + "/" +
                         shape_str(phi.shape()) + " do not match feature width " + std::to_string(d));
  }
  if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
  const std::size_t rows = x.value().size() / d;
  Tensor y(sx);
  std::vector<double> xhat(x.value().size());
  std::vector<double> inv_std(rows);
  const auto& xv = x.value().data;
  const auto& ps = psi.value().data;
  const auto& ph = phi.value().data;
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xv[r * d + j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xv[r * d + j] - mu) * (xv[r * d + j] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const std::size_t k = r * d + j;
      xhat[k] = (xv[k] - mu) * inv_std[r];
      y[k] = ps[j] * xhat[k] + ph[j];
    }
  }
  const std::size_t ix = x.id(), ip = psi.id(), ih = phi.id();
  return x.tape().record(std::move(y), {x, psi, phi},
                         [ix, ip, ih, rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                             Tape& t, std::size_t self) {
                           auto g = t.grad(self);
                           const auto& ps = t.value(ip).data;
                           if (t.requires_grad(ip)) {
                             auto gp = t.grad(ip);
                             for (std::size_t k = 0; k < g.size(); ++k) gp[k % d] += g[k] * xhat[k];
                           }
                           if (t.requires_grad(ih)) {
                             auto gh = t.grad(ih);
                             for (std::size_t k = 0; k < g.size(); ++k) gh[k % d] += g[k];
                           }
                           if (!t.requires_grad(ix)) return;
                           auto gx = t.grad(ix);
                           const double inv_d = 1.0 / static_cast<double>(d);
                           for (std::size_t r = 0; r < rows; ++r) {
                             double m1 = 0.0, m2 = 0.0;
                             for (std::size_t j = 0; j < d; ++j) {
                               const double gh = g[r * d + j] * ps[j];
                               m1 += gh;
                               m2 += gh * xhat[r * d + j];
                             }
                             m1 *= inv_d;
                             m2 *= inv_d;
                             for (std::size_t j = 0; j < d; ++j) {
                               const std::size_t k = r * d + j;
                               gx[k] += inv_std[r] * (g[k] * ps[j] - m1 - xhat[k] * m2);
                             }
                           }
                         });
}

}  // namespace afvol
