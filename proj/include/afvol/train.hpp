#pragma once

// Full-batch empirical-risk minimisation with Adam and an MSE objective, plus
// RMSE evaluation in unscaled volatility units.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "afvol/autodiff.hpp"
#include "afvol/data.hpp"
#include "afvol/error.hpp"
#include "afvol/model.hpp"

namespace afvol {

struct TrainConfig {
  std::size_t epochs = 1000;
  double learning_rate = 0.001;
  std::uint64_t seed = 42;
  ModelKind model = ModelKind::af_lstm;
  std::size_t hidden = 64;
  std::size_t dim = 2;
  AfVariant variant = AfVariant::simple;
  std::size_t t_max = 1000;
  /// Global gradient-norm clip; <= 0 disables clipping.
  double clip_norm = 5.0;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be > 0");
    if (hidden < 1) throw ConfigError("hidden size must be >= 1");
    if (dim < 1) throw ConfigError("dim must be >= 1");
    if (t_max < 1) throw ConfigError("t_max must be >= 1");
  }
};

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::size_t step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

template <class P>
std::vector<NamedTensor> named_params(P& params) {
  std::vector<NamedTensor> out;
  for_each_param(params, [&](const std::string& name, Tensor& t) { out.push_back({name, &t}); });
  return out;
}

/// One bias-corrected Adam update:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
///   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
inline void adam_step(std::span<const NamedTensor> params, std::span<const std::vector<double>> grads,
                      AdamState& state, double lr) {
  if (grads.size() != params.size()) throw ContractError("adam_step: one gradient per parameter required");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (grads[k].size() != params[k].tensor->size()) {
      throw DimensionError("adam_step: gradient size mismatch for '" + params[k].name + "'");
    }
    for (double g : grads[k]) {
      if (!std::isfinite(g)) throw DivergenceError("non-finite gradient for parameter '" + params[k].name + "'");
    }
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor->size(), 0.0);
      state.v.emplace_back(p.tensor->size(), 0.0);
    }
  }
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& theta = params[k].tensor->data;
    auto& m = state.m[k];
    auto& v = state.v[k];
    const auto& g = grads[k];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      theta[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
    }
  }
}

/// Mean of squared differences; pred and target must share a shape.
inline Var mse_loss(Var pred, Var target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("mse_loss: prediction " + shape_str(pred.shape()) + " vs target " +
                         shape_str(target.shape()));
  }
  const Var diff = sub(pred, target);
  return mean(mul(diff, diff));
}

inline double rmse(std::span<const double> actual, std::span<const double> predicted) {
  if (actual.size() != predicted.size() || actual.empty()) throw DimensionError("rmse: length mismatch or empty");
  double s = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) s += (actual[i] - predicted[i]) * (actual[i] - predicted[i]);
  return std::sqrt(s / static_cast<double>(actual.size()));
}

/// Scaled predictions for one partition.
inline std::vector<double> predict(const ModelParams& params, const WindowedDataset& ds, Partition part) {
  if (ds.count(part) == 0) return {};
  Tape tape;
  const Var out = forecast(params, tape.constant(ds.inputs(part)));
  return out.value().data;
}

/// Predicted and actual volatility for a partition, both mapped back through
/// the y-scaler.
struct Unscaled {
  std::vector<double> actual;
  std::vector<double> predicted;
};

inline Unscaled unscaled_predictions(const ModelParams& params, const WindowedDataset& ds, Partition part) {
  Unscaled out;
  out.predicted = predict(params, ds, part);
  for (double& v : out.predicted) v = ds.y_scaler.inverse(0, v);
  for (std::size_t i = ds.begin(part); i < ds.end(part); ++i) out.actual.push_back(ds.y_scaler.inverse(0, ds.y[i]));
  return out;
}

inline double evaluate_rmse(const ModelParams& params, const WindowedDataset& ds, Partition part) {
  const Unscaled u = unscaled_predictions(params, ds, part);
  return rmse(u.actual, u.predicted);
}

struct TrainReport {
  ModelKind model = ModelKind::af_lstm;
  TrainConfig config;
  std::vector<double> train_loss;  // scaled-unit MSE per epoch, before that epoch's update
  std::vector<double> test_loss;   // same parameters, test partition
  double rmse_train = 0.0;
  double rmse_test = 0.0;

  /// `epoch,train_loss,test_loss` rows (1-based epochs), then a summary row
  /// `rmse,<train rmse>,<test rmse>`.
  void write_csv(std::ostream& os) const {
    char buf[96];
    os << "epoch,train_loss,test_loss\n";
    for (std::size_t e = 0; e < train_loss.size(); ++e) {
      std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", e + 1, train_loss[e], test_loss[e]);
      os << buf;
    }
    std::snprintf(buf, sizeof buf, "rmse,%.17g,%.17g\n", rmse_train, rmse_test);
    os << buf;
  }
};

struct TrainResult {
  ModelParams params;
  TrainReport report;
};

namespace detail {

inline double partition_loss(const ModelParams& params, const Tensor& x, const Tensor& y) {
  Tape tape;
  return mse_loss(forecast(params, tape.constant(x)), tape.constant(y)).value().item();
}

inline void clip_global_norm(std::vector<std::vector<double>>& grads, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (const auto& g : grads)
    for (double v : g) sq += v * v;
  const double norm = std::sqrt(sq);
  if (!(norm > max_norm)) return;
  const double f = max_norm / norm;
  for (auto& g : grads)
    for (double& v : g) v *= f;
}

}  // namespace detail

/// Trains one model on the train partition. Each epoch is one full-batch
/// gradient step; test loss is measured with the same (pre-update)
/// parameters and never contributes to gradients.
inline TrainResult train(const WindowedDataset& ds, const TrainConfig& config) {
  config.validate();
  if (ds.count(Partition::train) == 0) throw DataError("training partition is empty");

  LayerSizes sizes{ds.features(), config.hidden, config.dim, config.t_max};
  TrainResult result{make_model(config.model, sizes, config.variant, config.seed), {}};
  TrainReport& report = result.report;
  report.model = config.model;
  report.config = config;

  const Tensor x_train = ds.inputs(Partition::train);
  const Tensor y_train = ds.targets(Partition::train);
  const bool has_test = ds.count(Partition::test) > 0;
  const Tensor x_test = has_test ? ds.inputs(Partition::test) : Tensor{};
  const Tensor y_test = has_test ? ds.targets(Partition::test) : Tensor{};

  std::vector<NamedTensor> params = std::visit([](auto& p) { return named_params(p); }, result.params);
  AdamState adam;
  std::vector<std::vector<double>> grads(params.size());

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Tape tape;
    const Var loss = mse_loss(forecast(result.params, tape.constant(x_train)), tape.constant(y_train));
    const double train_loss = loss.value().item();
    if (!std::isfinite(train_loss)) {
      throw DivergenceError("training diverged at epoch " + std::to_string(epoch + 1) + ": loss is not finite");
    }
    report.train_loss.push_back(train_loss);
    report.test_loss.push_back(has_test ? detail::partition_loss(result.params, x_test, y_test)
                                        : std::nan(""));

    const Gradients g = tape.backward(loss);
    for (std::size_t k = 0; k < params.size(); ++k) {
      const auto gk = g.param(*params[k].tensor);
      grads[k].assign(gk.begin(), gk.end());
    }
    detail::clip_global_norm(grads, config.clip_norm);
    try {
      adam_step(params, grads, adam, config.learning_rate);
    } catch (const DivergenceError& e) {
      throw DivergenceError("epoch " + std::to_string(epoch + 1) + ": " + e.what());
    }
  }

  report.rmse_train = evaluate_rmse(result.params, ds, Partition::train);
  report.rmse_test = has_test ? evaluate_rmse(result.params, ds, Partition::test) : std::nan("");
  return result;
}

/// Trains both models on the same dataset; each keeps its own seed.
inline std::pair<TrainResult, TrainResult> compare_models(const WindowedDataset& ds, const TrainConfig& lstm_config,
                                                          const TrainConfig& af_config) {
  TrainConfig a = lstm_config;
  a.model = ModelKind::lstm;
  TrainConfig b = af_config;
  b.model = ModelKind::af_lstm;
  return {train(ds, a), train(ds, b)};
}

}  // namespace afvol
