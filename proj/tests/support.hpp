#pragma once

// Test-only oracles: central finite differences and straight-line reference
// implementations written with plain loops, independent of the tape.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "afvol/autodiff.hpp"
#include "afvol/layers.hpp"
#include "afvol/random.hpp"

namespace afvol::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

/// |a - b| / max(|a|, |b|, floor). The floor keeps entries whose true
/// gradient is ~0 from turning finite-difference round-off into huge
/// relative errors.
inline double rel_error(double a, double b, double floor = 1e-3) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Largest relative error between tape gradients and central differences
/// (step h) of a scalar function of several tensor inputs.
inline double gradient_check(std::vector<Tensor> inputs, const ScalarFn& f, double h = 1e-5) {
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
    const Var root = f(tape, leaves);
    const Gradients g = tape.backward(root);
    for (const auto& v : leaves) {
      auto s = g[v];
      analytic.emplace_back(s.begin(), s.end());
    }
  }
  auto eval = [&]() {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
    return f(tape, leaves).value().item();
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double orig = inputs[k][i];
      inputs[k][i] = orig + h;
      const double fp = eval();
      inputs[k][i] = orig - h;
      const double fm = eval();
      inputs[k][i] = orig;
      worst = std::max(worst, rel_error(analytic[k][i], (fp - fm) / (2.0 * h)));
    }
  }
  return worst;
}

/// Same check over every parameter of a model, with the loss built from the
/// model through Tape::param.
template <class Params>
double param_gradient_check(Params& params, const std::function<Var(Tape&, const Params&)>& loss, double h = 1e-5) {
  std::vector<Tensor*> tensors;
  for_each_param(params, [&](const std::string&, Tensor& t) { tensors.push_back(&t); });
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    const Var root = loss(tape, params);
    const Gradients g = tape.backward(root);
    for (Tensor* t : tensors) {
      auto s = g.param(*t);
      analytic.emplace_back(s.begin(), s.end());
    }
  }
  auto eval = [&]() {
    Tape tape;
    return loss(tape, params).value().item();
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    for (std::size_t i = 0; i < tensors[k]->size(); ++i) {
      double& x = tensors[k]->data[i];
      const double orig = x;
      x = orig + h;
      const double fp = eval();
      x = orig - h;
      const double fm = eval();
      x = orig;
      worst = std::max(worst, rel_error(analytic[k][i], (fp - fm) / (2.0 * h)));
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Reference implementations (single sequence, row-major std::vector).
// ---------------------------------------------------------------------------

using Mat = std::vector<std::vector<double>>;  // [rows][cols]

inline Mat to_mat(const Tensor& t) {
  const std::size_t rows = t.rank() == 1 ? 1 : t.dim(0);
  const std::size_t cols = t.dim(-1);
  Mat m(rows, std::vector<double>(cols));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) m[r][c] = t[r * cols + c];
  return m;
}

inline double ref_sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// W [out x in] applied to every row of x [T x in], plus optional bias.
inline Mat ref_linear(const Mat& x, const Tensor& w, const Tensor* b = nullptr) {
  const std::size_t out = w.dim(0), in = w.dim(1);
  Mat y(x.size(), std::vector<double>(out, 0.0));
  for (std::size_t t = 0; t < x.size(); ++t)
    for (std::size_t o = 0; o < out; ++o) {
      double s = b ? (*b)[o] : 0.0;
      for (std::size_t i = 0; i < in; ++i) s += w[o * in + i] * x[t][i];
      y[t][o] = s;
    }
  return y;
}

/// Context = sum_t softmax_over_time(K)_t * V_t, broadcast to every step and
/// gated by sigmoid(Q_t).
inline Mat ref_af_simple(const AfBlockParams& p, const Mat& z) {
  const Mat x = ref_linear(z, p.W_x, &p.b_x);
  const Mat q = ref_linear(x, p.W_q), k = ref_linear(x, p.W_k), v = ref_linear(x, p.W_v);
  const std::size_t steps = z.size(), dim = q[0].size();
  std::vector<double> context(dim, 0.0);
  for (std::size_t j = 0; j < dim; ++j) {
    double denom = 0.0;
    for (std::size_t t = 0; t < steps; ++t) denom += std::exp(k[t][j]);
    for (std::size_t t = 0; t < steps; ++t) context[j] += std::exp(k[t][j]) / denom * v[t][j];
  }
  Mat out(steps, std::vector<double>(dim));
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t j = 0; j < dim; ++j) out[t][j] = ref_sigmoid(q[t][j]) * context[j];
  return out;
}

/// Naive double loop over (target t, source s) with position biases.
inline Mat ref_af_position_bias(const AfBlockParams& p, const Mat& z) {
  const Mat x = ref_linear(z, p.W_x, &p.b_x);
  const Mat q = ref_linear(x, p.W_q), k = ref_linear(x, p.W_k), v = ref_linear(x, p.W_v);
  const std::size_t steps = z.size(), dim = q[0].size(), cap = p.w_bias->dim(0);
  Mat out(steps, std::vector<double>(dim));
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t j = 0; j < dim; ++j) {
      double num = 0.0, den = 0.0;
      for (std::size_t s = 0; s < steps; ++s) {
        const double e = std::exp(k[s][j] + (*p.w_bias)[t * cap + s]);
        num += e * v[s][j];
        den += e;
      }
      out[t][j] = ref_sigmoid(q[t][j]) * num / den;
    }
  }
  return out;
}

inline Mat ref_layer_norm(const Mat& x, const LayerNormParams& ln, double eps = 1e-5) {
  Mat y = x;
  for (std::size_t r = 0; r < x.size(); ++r) {
    const double d = static_cast<double>(x[r].size());
    double mu = 0.0;
    for (double v : x[r]) mu += v;
    mu /= d;
    double var = 0.0;
    for (double v : x[r]) var += (v - mu) * (v - mu);
    var /= d;
    for (std::size_t j = 0; j < x[r].size(); ++j) y[r][j] = ln.psi[j] * (x[r][j] - mu) / std::sqrt(var + eps) + ln.phi[j];
  }
  return y;
}

/// One LSTM step on vectors: returns (h, c).
inline std::pair<std::vector<double>, std::vector<double>> ref_lstm_step(const LstmParams& p,
                                                                        const std::vector<double>& h,
                                                                        const std::vector<double>& c,
                                                                        const std::vector<double>& z) {
  std::vector<double> hz = h;
  hz.insert(hz.end(), z.begin(), z.end());
  const Mat row{hz};
  const auto f = ref_linear(row, p.W_f, &p.b_f)[0];
  const auto i = ref_linear(row, p.W_i, &p.b_i)[0];
  const auto g = ref_linear(row, p.W_c, &p.b_c)[0];
  const auto o = ref_linear(row, p.W_o, &p.b_o)[0];
  std::vector<double> h2(h.size()), c2(h.size());
  for (std::size_t k = 0; k < h.size(); ++k) {
    c2[k] = ref_sigmoid(f[k]) * c[k] + ref_sigmoid(i[k]) * std::tanh(g[k]);
    h2[k] = ref_sigmoid(o[k]) * std::tanh(c2[k]);
  }
  return {h2, c2};
}

/// AF-LSTM forward for one sequence from a zero state.
inline double ref_af_lstm(const AfLstmParams& p, const Mat& z) {
  const bool simple = p.variant == AfVariant::simple;
  Mat left = ref_layer_norm(simple ? ref_af_simple(p.af1, z) : ref_af_position_bias(p.af1, z), p.ln1);
  for (auto& row : left)
    for (double& v : row) v = std::max(v, 0.0);
  const Mat right = ref_layer_norm(simple ? ref_af_simple(p.af2, z) : ref_af_position_bias(p.af2, z), p.ln2);
  Mat gated = left;
  for (std::size_t t = 0; t < gated.size(); ++t)
    for (std::size_t j = 0; j < gated[t].size(); ++j) gated[t][j] *= right[t][j];
  const Mat zeta = ref_layer_norm(gated, p.ln3);
  const std::size_t hidden = p.lstm.hidden_size();
  std::vector<double> h(hidden, 0.0), c(hidden, 0.0);
  for (const auto& step : zeta) std::tie(h, c) = ref_lstm_step(p.lstm, h, c, step);
  double y = p.b_y[0];
  for (std::size_t k = 0; k < hidden; ++k) y += p.W_y[k] * h[k];
  return y;
}

}  // namespace afvol::testing
