#pragma once

// LSTM cell, attention-free (AF) block and the two-channel AF-LSTM layer.
//
// All forward functions run on a Tape so the same code path serves training
// and inference. Inputs may carry a leading batch axis: a sequence batch is
// [B, T, features], a single sequence [T, features].

#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>

#include "afvol/autodiff.hpp"
#include "afvol/error.hpp"
#include "afvol/random.hpp"
#include "afvol/tensor.hpp"

namespace afvol {

enum class AfVariant { simple, position_bias };

inline std::string_view to_string(AfVariant v) { return v == AfVariant::simple ? "simple" : "position-bias"; }

inline AfVariant parse_af_variant(std::string_view s) {
  if (s == "simple") return AfVariant::simple;
  if (s == "position-bias" || s == "position_bias") return AfVariant::position_bias;
  throw ConfigError("unknown AF variant '" + std::string(s) + "' (expected simple or position-bias)");
}

struct LayerNormParams {
  Tensor psi;
  Tensor phi;
};

/// Gate weights act on the concatenation [h; z].
struct LstmParams {
  Tensor W_f, W_i, W_c, W_o;  // [hidden x (hidden + input)]
  Tensor b_f, b_i, b_c, b_o;  // [hidden]

  std::size_t hidden_size() const { return W_f.dim(0); }
  std::size_t input_size() const { return W_f.dim(1) - hidden_size(); }
};

struct LstmState {
  Tensor h;
  Tensor c;
};

struct AfBlockParams {
  Tensor W_x, b_x;       // input embedding [dim x q], [dim]
  Tensor W_q, W_k, W_v;  // [dim x dim]
  std::optional<Tensor> w_bias;  // [T_max x T_max], position_bias variant only
};

/// Plain LSTM baseline: LSTM over the window, linear head on the last state.
struct LstmModelParams {
  LstmParams lstm;
  Tensor W_y;  // [1 x hidden]
  Tensor b_y;  // [1]
};

struct AfLstmParams {
  AfVariant variant = AfVariant::simple;
  AfBlockParams af1;  // ReLU-filtered channel
  AfBlockParams af2;  // layer-normalised channel
  LayerNormParams ln1, ln2, ln3;
  LstmParams lstm;
  Tensor W_y;  // [1 x hidden]
  Tensor b_y;  // [1]
};

// ---------------------------------------------------------------------------
// Parameter traversal. The visiting order is fixed and defines both the
// initialisation draw order and the serialised layout.
// ---------------------------------------------------------------------------

template <class T, class U>
concept same_param_type = std::same_as<std::remove_const_t<T>, U>;

template <class P, class F>
  requires same_param_type<P, LayerNormParams>
void for_each_param(P& p, const std::string& prefix, F&& f) {
  f(prefix + "psi", p.psi);
  f(prefix + "phi", p.phi);
}

template <class P, class F>
  requires same_param_type<P, LstmParams>
void for_each_param(P& p, const std::string& prefix, F&& f) {
  f(prefix + "W_f", p.W_f);
  f(prefix + "b_f", p.b_f);
  f(prefix + "W_i", p.W_i);
  f(prefix + "b_i", p.b_i);
  f(prefix + "W_c", p.W_c);
  f(prefix + "b_c", p.b_c);
  f(prefix + "W_o", p.W_o);
  f(prefix + "b_o", p.b_o);
}

template <class P, class F>
  requires same_param_type<P, AfBlockParams>
void for_each_param(P& p, const std::string& prefix, F&& f) {
  f(prefix + "W_x", p.W_x);
  f(prefix + "b_x", p.b_x);
  f(prefix + "W_q", p.W_q);
  f(prefix + "W_k", p.W_k);
  f(prefix + "W_v", p.W_v);
  if (p.w_bias) f(prefix + "w_bias", *p.w_bias);
}

template <class P, class F>
  requires same_param_type<P, LstmModelParams>
void for_each_param(P& p, const std::string& prefix, F&& f) {
  for_each_param(p.lstm, prefix + "lstm.", f);
  f(prefix + "W_y", p.W_y);
  f(prefix + "b_y", p.b_y);
}

template <class P, class F>
  requires same_param_type<P, AfLstmParams>
void for_each_param(P& p, const std::string& prefix, F&& f) {
  for_each_param(p.af1, prefix + "af1.", f);
  for_each_param(p.af2, prefix + "af2.", f);
  for_each_param(p.ln1, prefix + "ln1.", f);
  for_each_param(p.ln2, prefix + "ln2.", f);
  for_each_param(p.ln3, prefix + "ln3.", f);
  for_each_param(p.lstm, prefix + "lstm.", f);
  f(prefix + "W_y", p.W_y);
  f(prefix + "b_y", p.b_y);
}

template <class P, class F>
void for_each_param(P& p, F&& f) {
  for_each_param(p, std::string{}, std::forward<F>(f));
}

template <class P>
std::size_t param_count(const P& p) {
  std::size_t n = 0;
  for_each_param(p, [&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

// ---------------------------------------------------------------------------
// Initialisation
// ---------------------------------------------------------------------------

struct LayerSizes {
  std::size_t input = 2;
  std::size_t hidden = 64;
  std::size_t dim = 2;
  std::size_t t_max = 1000;

  void validate() const {
    if (input == 0 || hidden == 0 || dim == 0 || t_max == 0) {
      throw ConfigError("layer sizes must be positive (input " + std::to_string(input) + ", hidden " +
                        std::to_string(hidden) + ", dim " + std::to_string(dim) + ", t_max " +
                        std::to_string(t_max) + ")");
    }
  }
};

namespace detail {

inline Tensor uniform_tensor(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : t.data) v = rng.uniform(-bound, bound);
  return t;
}

inline LayerNormParams identity_norm(std::size_t d) { return {Tensor({d}, 1.0), Tensor({d}, 0.0)}; }

}  // namespace detail

inline LstmParams init_lstm(std::size_t input, std::size_t hidden, Rng& rng) {
  const std::size_t fan_in = hidden + input;
  LstmParams p;
  for_each_param(p, [&](const std::string& name, Tensor& t) {
    const bool is_bias = name.front() == 'b';
    t = detail::uniform_tensor(is_bias ? Shape{hidden} : Shape{hidden, fan_in}, fan_in, rng);
  });
  return p;
}

inline AfBlockParams init_af_block(std::size_t q, std::size_t dim, std::size_t t_max, AfVariant variant, Rng& rng) {
  AfBlockParams p;
  p.W_x = detail::uniform_tensor({dim, q}, q, rng);
  p.b_x = detail::uniform_tensor({dim}, q, rng);
  p.W_q = detail::uniform_tensor({dim, dim}, dim, rng);
  p.W_k = detail::uniform_tensor({dim, dim}, dim, rng);
  p.W_v = detail::uniform_tensor({dim, dim}, dim, rng);
  if (variant == AfVariant::position_bias) p.w_bias = detail::uniform_tensor({t_max, t_max}, t_max, rng);
  return p;
}

inline LstmModelParams init_lstm_model(const LayerSizes& sizes, std::uint64_t seed) {
  sizes.validate();
  Rng rng(seed);
  LstmModelParams p;
  p.lstm = init_lstm(sizes.input, sizes.hidden, rng);
  p.W_y = detail::uniform_tensor({1, sizes.hidden}, sizes.hidden, rng);
  p.b_y = detail::uniform_tensor({1}, sizes.hidden, rng);
  return p;
}

inline AfLstmParams init_af_lstm(const LayerSizes& sizes, AfVariant variant, std::uint64_t seed) {
  sizes.validate();
  Rng rng(seed);
  AfLstmParams p;
  p.variant = variant;
  p.af1 = init_af_block(sizes.input, sizes.dim, sizes.t_max, variant, rng);
  p.af2 = init_af_block(sizes.input, sizes.dim, sizes.t_max, variant, rng);
  p.ln1 = detail::identity_norm(sizes.dim);
  p.ln2 = detail::identity_norm(sizes.dim);
  p.ln3 = detail::identity_norm(sizes.dim);
  p.lstm = init_lstm(sizes.dim, sizes.hidden, rng);
  p.W_y = detail::uniform_tensor({1, sizes.hidden}, sizes.hidden, rng);
  p.b_y = detail::uniform_tensor({1}, sizes.hidden, rng);
  return p;
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

struct LstmVars {
  Var h;
  Var c;
};

/// One LSTM step. h, c: [..., hidden]; z: [..., input].
inline LstmVars lstm_step(const LstmParams& p, LstmVars state, Var z) {
  Tape& tape = z.tape();
  const Var hz = concat_last(state.h, z);
  const Var f = sigmoid(linear(hz, tape.param(p.W_f), tape.param(p.b_f)));
  const Var i = sigmoid(linear(hz, tape.param(p.W_i), tape.param(p.b_i)));
  const Var c_tilde = tanh(linear(hz, tape.param(p.W_c), tape.param(p.b_c)));
  const Var c = add(mul(f, state.c), mul(i, c_tilde));
  const Var o = sigmoid(linear(hz, tape.param(p.W_o), tape.param(p.b_o)));
  const Var h = mul(o, tanh(c));
  return {h, c};
}

/// Tape-free convenience for a single step on plain tensors.
inline LstmState lstm_step(const LstmParams& p, const LstmState& state, const Tensor& z) {
  Tape tape;
  const LstmVars out = lstm_step(p, {tape.constant(state.h), tape.constant(state.c)}, tape.constant(z));
  return {out.h.value(), out.c.value()};
}

/// Runs the cell over every step of seq [..., T, input].
inline LstmVars lstm_unroll(const LstmParams& p, LstmVars state, Var seq) {
  const std::size_t steps = seq.shape().size() >= 2 ? seq.shape()[seq.shape().size() - 2] : 0;
  if (steps == 0) throw DimensionError("lstm_unroll: expected a [..., T, input] sequence, got " + shape_str(seq.shape()));
  for (std::size_t t = 0; t < steps; ++t) state = lstm_step(p, state, time_slice(seq, t));
  return state;
}

/// Zero state matching the leading (batch) axes of a [..., T, input] sequence.
inline LstmVars zero_state(Tape& tape, const Shape& seq_shape, std::size_t hidden) {
  Shape s(seq_shape.begin(), seq_shape.end() - 2);
  s.push_back(hidden);
  return {tape.constant(Tensor(s)), tape.constant(Tensor(s))};
}

/// Attention-free block over Z [..., T, q] -> [..., T, dim].
///
/// simple:        out_t = sigmoid(Q_t) * sum_s softmax_time(K)_s * V_s
///                (one context vector per sequence, shared by every step)
/// position_bias: out_t = sigmoid(Q_t) * sum_s exp(K_s + w_ts) V_s / sum_s exp(K_s + w_ts)
inline Var af_block(const AfBlockParams& p, Var z, AfVariant variant) {
  Tape& tape = z.tape();
  const Var x = linear(z, tape.param(p.W_x), tape.param(p.b_x));
  const Var q = linear(x, tape.param(p.W_q));
  const Var k = linear(x, tape.param(p.W_k));
  const Var v = linear(x, tape.param(p.W_v));
  if (variant == AfVariant::simple) {
    const std::size_t steps = z.shape()[z.shape().size() - 2];
    const Var context = time_sum(mul(softmax_over_time(k), v));
    return mul(sigmoid(q), broadcast_time(context, steps));
  }
  if (!p.w_bias) throw ContractError("af_block: position_bias variant requires w_bias");
  return mul(sigmoid(q), position_bias_mix(k, v, tape.param(*p.w_bias)));
}

struct AfLstmOutput {
  Var sigma_hat;  // [..., 1]
  LstmVars state;
};

/// Full AF-LSTM layer: ReLU(LN1(AF1 Z)) gates LN2(AF2 Z); the layer-normed
/// product is fed step by step through the LSTM and the final hidden state
/// goes through the linear head.
inline AfLstmOutput af_lstm_forward(const AfLstmParams& p, Var z, LstmVars state) {
  Tape& tape = z.tape();
  const Var left = relu(layer_norm(af_block(p.af1, z, p.variant), tape.param(p.ln1.psi), tape.param(p.ln1.phi)));
  const Var right = layer_norm(af_block(p.af2, z, p.variant), tape.param(p.ln2.psi), tape.param(p.ln2.phi));
  const Var gated = layer_norm(mul(left, right), tape.param(p.ln3.psi), tape.param(p.ln3.phi));
  const LstmVars last = lstm_unroll(p.lstm, state, gated);
  return {linear(last.h, tape.param(p.W_y), tape.param(p.b_y)), last};
}

/// Single-sequence inference: Z [T, q] -> (sigma_hat, final state).
inline std::pair<double, LstmState> af_lstm_forward(const AfLstmParams& p, const Tensor& z, const LstmState& state) {
  Tape tape;
  const AfLstmOutput out = af_lstm_forward(p, tape.constant(z), {tape.constant(state.h), tape.constant(state.c)});
  return {out.sigma_hat.value().item(), {out.state.h.value(), out.state.c.value()}};
}

/// Batched forecast from a zero initial state: x [B, T, q] -> [B, 1].
inline Var forecast(const AfLstmParams& p, Var x) {
  return af_lstm_forward(p, x, zero_state(x.tape(), x.shape(), p.lstm.hidden_size())).sigma_hat;
}

inline Var forecast(const LstmModelParams& p, Var x) {
  Tape& tape = x.tape();
  const LstmVars last = lstm_unroll(p.lstm, zero_state(tape, x.shape(), p.lstm.hidden_size()), x);
  return linear(last.h, tape.param(p.W_y), tape.param(p.b_y));
}

}  // namespace afvol
