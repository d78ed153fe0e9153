#pragma once

// End-to-end runs behind the command-line tool: ingestion, GARCH fitting,
// feature/window construction, training, and artifact writing.

#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "afvol/data.hpp"
#include "afvol/garch.hpp"
#include "afvol/serialize.hpp"
#include "afvol/train.hpp"

namespace afvol {

struct DataConfig {
  std::size_t window = 5;
  double split = 0.8;
  GarchKind garch = GarchKind::garch;
  ScalerMode scaler = ScalerMode::minmax;

  void validate() const {
    if (window < 2) throw ConfigError("window must be >= 2");
    if (!(split > 0.0 && split < 1.0)) throw ConfigError("split must lie in (0, 1)");
  }
};

struct PreparedData {
  std::vector<double> returns;
  GarchFit garch;
  FeatureFrame frame;
  WindowedDataset dataset;
};

/// Number of leading returns seen by training samples (their inputs and
/// targets). The GARCH model is fitted on exactly this prefix. The last
/// training target is rv[split_index + 2w - 1], built from returns up to
/// index split_index + 2w - 2.
inline std::size_t train_return_count(std::size_t returns, const DataConfig& cfg) {
  const std::size_t w = cfg.window;
  if (returns < 2 * w + 1) return 0;
  const std::size_t split_index = split_point(window_count(returns - w - 1, w), cfg.split);
  return std::min(returns, split_index + 2 * w - 1);
}

inline PreparedData prepare_dataset(const PriceSeries& prices, const DataConfig& cfg) {
  cfg.validate();
  PreparedData out;
  out.returns = log_returns(prices);
  const std::size_t n_fit = train_return_count(out.returns.size(), cfg);
  if (n_fit == 0) throw DataError("price series too short for window " + std::to_string(cfg.window));
  out.garch = fit_mle(std::span<const double>(out.returns).first(n_fit), cfg.garch);
  out.frame = build_features(out.returns, out.garch, cfg.window);
  out.dataset = fit_transform_scalers(out.frame, cfg.split, cfg.window, cfg.scaler);
  return out;
}

/// GARCH(1,1) price path used when no market data is supplied:
/// omega = 0.1, alpha = 0.1, beta = 0.8, unit-variance log returns, first
/// price 100, daily timestamps from 2020-01-01T00:00:00Z.
inline PriceSeries synthetic_prices(std::uint64_t seed, std::size_t n = 2000) {
  if (n < 2) throw ConfigError("synthetic series needs at least 2 prices");
  const VolatilityPath path = garch_simulate(GarchParams::garch11(0.1, 0.1, 0.8), n - 1, seed, GarchKind::garch);
  PriceSeries s;
  constexpr std::int64_t start = 1577836800;
  double log_price = std::log(100.0);
  s.timestamps.push_back(start);
  s.close.push_back(100.0);
  for (std::size_t t = 0; t + 1 < n; ++t) {
    log_price += path.returns[t];
    s.timestamps.push_back(start + static_cast<std::int64_t>(t + 1) * 86400);
    s.close.push_back(std::exp(log_price));
  }
  return s;
}

struct RunConfig {
  std::string input;
  std::optional<std::uint64_t> synthetic;
  std::size_t synthetic_length = 2000;
  std::string output_dir = "out";
  bool dump_dataset = false;
  DataConfig data;
  TrainConfig train;

  void validate() const {
    data.validate();
    train.validate();
    if (input.empty() == !synthetic.has_value()) {
      throw ConfigError("exactly one of --input or --synthetic is required");
    }
    if (output_dir.empty()) throw ConfigError("output directory must not be empty");
  }

  PriceSeries load_prices() const { return synthetic ? synthetic_prices(*synthetic, synthetic_length) : load_price_csv(input); }
};

/// Writes a set of output files atomically as a group: each file goes to a
/// temporary name and is renamed on success; if the writer is destroyed
/// before commit(), everything it wrote is removed.
class ArtifactWriter {
 public:
  explicit ArtifactWriter(std::filesystem::path dir) : dir_(std::move(dir)) {}
  ArtifactWriter(const ArtifactWriter&) = delete;
  ArtifactWriter& operator=(const ArtifactWriter&) = delete;

  ~ArtifactWriter() {
    if (committed_) return;
    std::error_code ec;
    for (const auto& p : staged_) std::filesystem::remove(tmp_of(p), ec);
    for (const auto& p : written_) std::filesystem::remove(p, ec);
  }

  void write(const std::string& name, const std::function<void(std::ostream&)>& body) {
    std::filesystem::create_directories(dir_);
    const auto path = dir_ / name;
    staged_.push_back(path);
    std::ofstream os(tmp_of(path), std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot write '" + tmp_of(path).string() + "'");
    body(os);
    os.flush();
    if (!os) throw Error("write failed for '" + tmp_of(path).string() + "'");
  }

  void commit() {
    for (const auto& p : staged_) {
      std::filesystem::rename(tmp_of(p), p);
      written_.push_back(p);
    }
    staged_.clear();
    committed_ = true;
  }

  std::filesystem::path path(const std::string& name) const { return dir_ / name; }

 private:
  static std::filesystem::path tmp_of(const std::filesystem::path& p) { return p.string() + ".tmp"; }

  std::filesystem::path dir_;
  std::vector<std::filesystem::path> staged_;
  std::vector<std::filesystem::path> written_;
  bool committed_ = false;
};

inline void write_garch_params(std::ostream& os, const GarchFit& fit, std::size_t observations) {
  char buf[64];
  auto line = [&](const char* key, double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    os << key << ' ' << buf << '\n';
  };
  os << "kind " << to_string(fit.kind) << '\n';
  line("omega", fit.params.omega);
  line("alpha", fit.params.alpha.at(0));
  line("beta", fit.params.beta.at(0));
  if (fit.kind == GarchKind::gjr) line("gamma", fit.params.gamma.at(0));
  line("loglik", fit.loglik);
  line("mean", fit.mean);
  line("initial_variance", fit.initial_variance);
  line("unconditional_variance", unconditional_variance(fit.params, fit.kind));
  os << "observations " << observations << '\n';
}

/// Fits a GARCH model to all returns and writes
///   garch_params.txt       fitted parameters and log-likelihood
///   garch_volatility.csv   t,timestamp,realized_vol,garch_vol for every
///                          step past the rolling-window warm-up
inline GarchFit run_fit_garch(const RunConfig& cfg) {
  cfg.data.validate();
  const PriceSeries prices = cfg.load_prices();
  const std::vector<double> returns = log_returns(prices);
  const GarchFit fit = fit_mle(returns, cfg.data.garch);
  const VolatilityPath path = garch_filter(fit.params, returns, fit.kind, fit.filter_options());
  const std::vector<double> rv = rolling_volatility(returns, cfg.data.window);

  ArtifactWriter out(cfg.output_dir);
  out.write("garch_params.txt", [&](std::ostream& os) { write_garch_params(os, fit, returns.size()); });
  out.write("garch_volatility.csv", [&](std::ostream& os) {
    char buf[128];
    os << "t,timestamp,realized_vol,garch_vol\n";
    for (std::size_t t = cfg.data.window; t < returns.size(); ++t) {
      std::snprintf(buf, sizeof buf, "%zu,%lld,%.17g,%.17g\n", t, static_cast<long long>(prices.timestamps[t + 1]),
                    rv[t], std::sqrt(path.sigma2[t]));
      os << buf;
    }
  });
  out.commit();
  return fit;
}

inline void write_predictions_csv(std::ostream& os, const ModelParams& params, const WindowedDataset& ds) {
  char buf[128];
  os << "t,actual_vol,predicted_vol,split\n";
  for (Partition part : {Partition::train, Partition::test}) {
    const Unscaled u = unscaled_predictions(params, ds, part);
    for (std::size_t i = 0; i < u.actual.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%s\n", ds.target_step[ds.begin(part) + i], u.actual[i],
                    u.predicted[i], part == Partition::train ? "train" : "test");
      os << buf;
    }
  }
}

inline std::string model_tag(ModelKind m) { return m == ModelKind::lstm ? "lstm" : "af_lstm"; }

namespace detail {

inline void write_model_artifacts(ArtifactWriter& out, const TrainResult& r, const WindowedDataset& ds,
                                  const TrainConfig& cfg) {
  const std::string tag = model_tag(r.report.model);
  out.write("report_" + tag + ".csv", [&](std::ostream& os) { r.report.write_csv(os); });
  out.write("params_" + tag + ".txt", [&](std::ostream& os) {
    write_params(os, r.params, {r.report.model, cfg.variant, cfg.seed, {ds.features(), cfg.hidden, cfg.dim, cfg.t_max}});
  });
  out.write("predictions_" + tag + ".csv", [&](std::ostream& os) { write_predictions_csv(os, r.params, ds); });
}

}  // namespace detail

/// Runs pipeline -> train -> evaluate for cfg.train.model and writes
/// report_<tag>.csv, params_<tag>.txt and predictions_<tag>.csv, where tag
/// is lstm or af_lstm.
inline TrainResult run_train(const RunConfig& cfg) {
  cfg.validate();
  const PreparedData data = prepare_dataset(cfg.load_prices(), cfg.data);
  TrainResult result = train(data.dataset, cfg.train);
  ArtifactWriter out(cfg.output_dir);
  detail::write_model_artifacts(out, result, data.dataset, cfg.train);
  if (cfg.dump_dataset) out.write("dataset.csv", [&](std::ostream& os) { write_frame_csv(os, data.frame, data.dataset); });
  out.commit();
  return result;
}

/// Two-row RMSE table: rows Train Set / Test Set, columns LSTM / AF-LSTM.
inline void write_summary_csv(std::ostream& os, const TrainReport& lstm, const TrainReport& af) {
  char buf[128];
  os << "Dataset,LSTM RMSE,AF-LSTM RMSE\n";
  std::snprintf(buf, sizeof buf, "Train Set,%.17g,%.17g\n", lstm.rmse_train, af.rmse_train);
  os << buf;
  std::snprintf(buf, sizeof buf, "Test Set,%.17g,%.17g\n", lstm.rmse_test, af.rmse_test);
  os << buf;
}

/// Trains both models on one dataset and writes both models' artifacts plus
/// summary.csv.
inline std::pair<TrainResult, TrainResult> run_compare(const RunConfig& cfg) {
  cfg.validate();
  const PreparedData data = prepare_dataset(cfg.load_prices(), cfg.data);
  auto results = compare_models(data.dataset, cfg.train, cfg.train);
  ArtifactWriter out(cfg.output_dir);
  detail::write_model_artifacts(out, results.first, data.dataset, cfg.train);
  detail::write_model_artifacts(out, results.second, data.dataset, cfg.train);
  out.write("summary.csv",
            [&](std::ostream& os) { write_summary_csv(os, results.first.report, results.second.report); });
  if (cfg.dump_dataset) out.write("dataset.csv", [&](std::ostream& os) { write_frame_csv(os, data.frame, data.dataset); });
  out.commit();
  return results;
}

/// Writes a synthetic GARCH(1,1) price series to <output_dir>/prices.csv.
inline PriceSeries run_simulate(const RunConfig& cfg, std::uint64_t seed) {
  const PriceSeries prices = synthetic_prices(seed, cfg.synthetic_length);
  ArtifactWriter out(cfg.output_dir);
  out.write("prices.csv", [&](std::ostream& os) { write_price_csv(os, prices); });
  out.commit();
  return prices;
}

}  // namespace afvol
