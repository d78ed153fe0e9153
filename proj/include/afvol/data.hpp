#pragma once

// Price ingestion and feature construction: log returns, trailing realized
// volatility, GARCH one-step volatility, train-fitted scalers and sliding
// windows.
//
// Indexing: returns r[0..m) with r[t] = ln(p[t+1] / p[t]). For step t the
// features are
//   realized_vol[t] = population std of r[t-w .. t-1]
//   garch_vol[t]    = sigma[t] from the GARCH recursion (uses eps up to t-1)
// and the target is realized_vol[t+1], i.e. the std of r[t-w+1 .. t]. So
// every feature at step t depends on returns strictly before the last return
// entering its target.

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "afvol/error.hpp"
#include "afvol/garch.hpp"
#include "afvol/tensor.hpp"

namespace afvol {

struct PriceSeries {
  std::vector<std::int64_t> timestamps;  // epoch seconds, strictly increasing
  std::vector<double> close;

  std::size_t size() const noexcept { return close.size(); }
};

inline constexpr std::size_t kMinPriceRows = 30;

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline bool parse_int(std::string_view s, long long& out) {
  if (s.empty()) return false;
  std::string buf(s);
  char* end = nullptr;
  errno = 0;
  out = std::strtoll(buf.c_str(), &end, 10);
  return errno == 0 && end == buf.c_str() + buf.size();
}

inline bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  std::string buf(s);
  char* end = nullptr;
  out = std::strtod(buf.c_str(), &end);
  return end == buf.c_str() + buf.size();
}

/// "YYYY-MM-DD", optionally followed by 'T' or ' ' and "HH:MM[:SS[.fff]]",
/// optionally ending in 'Z'. Times are taken as UTC; fractions are dropped.
inline bool parse_iso8601(std::string_view s, std::int64_t& out) {
  if (!s.empty() && s.back() == 'Z') s.remove_suffix(1);
  if (s.size() < 10 || s[4] != '-' || s[7] != '-') return false;
  long long y = 0, mo = 0, d = 0, hh = 0, mm = 0, ss = 0;
  if (!parse_int(s.substr(0, 4), y) || !parse_int(s.substr(5, 2), mo) || !parse_int(s.substr(8, 2), d)) return false;
  if (s.size() > 10) {
    if ((s[10] != 'T' && s[10] != ' ') || s.size() < 16 || s[13] != ':') return false;
    if (!parse_int(s.substr(11, 2), hh) || !parse_int(s.substr(14, 2), mm)) return false;
    if (s.size() > 16) {
      if (s[16] != ':' || s.size() < 19 || !parse_int(s.substr(17, 2), ss)) return false;
      if (s.size() > 19 && s[19] != '.') return false;
    }
  }
  const std::chrono::year_month_day ymd{std::chrono::year(static_cast<int>(y)),
                                        std::chrono::month(static_cast<unsigned>(mo)),
                                        std::chrono::day(static_cast<unsigned>(d))};
  if (!ymd.ok() || hh > 23 || mm > 59 || ss > 60) return false;
  const auto days = std::chrono::sys_days(ymd).time_since_epoch().count();
  out = static_cast<std::int64_t>(days) * 86400 + hh * 3600 + mm * 60 + ss;
  return true;
}

}  // namespace detail

/// Epoch seconds or ISO-8601 date/time.
inline std::int64_t parse_timestamp(std::string_view s) {
  s = detail::trim(s);
  long long v = 0;
  if (detail::parse_int(s, v)) return v;
  std::int64_t t = 0;
  if (detail::parse_iso8601(s, t)) return t;
  throw DataError("unrecognised timestamp '" + std::string(s) + "'");
}

/// Reads a `timestamp,close` CSV. Rows are sorted by timestamp; duplicate
/// timestamps, non-positive or non-numeric prices are rejected with the
/// offending line number.
inline PriceSeries read_price_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  struct Row {
    std::int64_t ts;
    double close;
    std::size_t line;
  };
  std::vector<Row> rows;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view s = detail::trim(line);
    if (s.empty()) continue;
    if (!have_header) {
      std::string header(s);
      header.erase(std::remove(header.begin(), header.end(), ' '), header.end());
      if (header != "timestamp,close") {
        throw DataError("line " + std::to_string(line_no) + ": expected header 'timestamp,close'");
      }
      have_header = true;
      continue;
    }
    const auto comma = s.find(',');
    if (comma == std::string_view::npos || s.find(',', comma + 1) != std::string_view::npos) {
      throw DataError("line " + std::to_string(line_no) + ": expected 2 fields");
    }
    Row row{0, 0.0, line_no};
    try {
      row.ts = parse_timestamp(s.substr(0, comma));
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!detail::parse_double(detail::trim(s.substr(comma + 1)), row.close)) {
      throw DataError("line " + std::to_string(line_no) + ": bad price '" + std::string(s.substr(comma + 1)) + "'");
    }
    if (!std::isfinite(row.close) || !(row.close > 0.0)) {
      throw DataError("line " + std::to_string(line_no) + ": price must be positive");
    }
    rows.push_back(row);
  }
  if (rows.empty()) throw DataError("no data rows");
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.ts < b.ts; });
  PriceSeries out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i && rows[i].ts == rows[i - 1].ts) {
      throw DataError("line " + std::to_string(rows[i].line) + ": duplicate timestamp " + std::to_string(rows[i].ts));
    }
    out.timestamps.push_back(rows[i].ts);
    out.close.push_back(rows[i].close);
  }
  if (out.size() < kMinPriceRows) {
    throw DataError("need at least " + std::to_string(kMinPriceRows) + " price rows, got " +
                    std::to_string(out.size()));
  }
  return out;
}

inline PriceSeries load_price_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return read_price_csv(in);
}

inline void write_price_csv(std::ostream& os, const PriceSeries& prices) {
  char buf[40];
  os << "timestamp,close\n";
  for (std::size_t i = 0; i < prices.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", prices.close[i]);
    os << prices.timestamps[i] << ',' << buf << '\n';
  }
}

/// r[t] = ln(p[t+1] / p[t]).
inline std::vector<double> log_returns(std::span<const double> prices) {
  if (prices.size() < 2) throw DataError("log_returns needs at least 2 prices");
  for (std::size_t i = 0; i < prices.size(); ++i) {
    if (!(prices[i] > 0.0)) throw DataError("non-positive price at index " + std::to_string(i));
  }
  std::vector<double> r(prices.size() - 1);
  for (std::size_t t = 0; t + 1 < prices.size(); ++t) r[t] = std::log(prices[t + 1] / prices[t]);
  return r;
}

inline std::vector<double> log_returns(const PriceSeries& prices) { return log_returns(prices.close); }

/// Population std of the `window` returns before each step. Entries
/// [0, window) are warm-up and set to NaN.
inline std::vector<double> rolling_volatility(std::span<const double> returns, std::size_t window) {
  if (window == 0) throw DataError("rolling window must be positive");
  if (returns.size() < window) {
    throw DataError("rolling_volatility needs at least " + std::to_string(window) + " returns, got " +
                    std::to_string(returns.size()));
  }
  std::vector<double> out(returns.size(), std::numeric_limits<double>::quiet_NaN());
  const double w = static_cast<double>(window);
  for (std::size_t t = window; t < returns.size(); ++t) {
    double mu = 0.0;
    for (std::size_t k = t - window; k < t; ++k) mu += returns[k];
    mu /= w;
    double var = 0.0;
    for (std::size_t k = t - window; k < t; ++k) var += (returns[k] - mu) * (returns[k] - mu);
    out[t] = std::sqrt(var / w);
  }
  return out;
}

struct FeatureFrame {
  std::vector<std::size_t> step;  // return index t of each row
  std::vector<double> realized_vol;
  std::vector<double> garch_vol;
  std::vector<double> target;     // realized_vol at t + 1

  std::size_t size() const noexcept { return step.size(); }
};

/// Rows t = window .. m-2 for m returns: m - window - 1 rows. The GARCH
/// recursion is replayed with the fit's own mean and initial variance, so a
/// model fitted on a prefix never sees later data.
inline FeatureFrame build_features(std::span<const double> returns, const GarchFit& fit, std::size_t window) {
  if (returns.size() < window + 2) {
    throw DataError("build_features needs at least " + std::to_string(window + 2) + " returns");
  }
  const std::vector<double> rv = rolling_volatility(returns, window);
  const VolatilityPath path = garch_filter(fit.params, returns, fit.kind, fit.filter_options());
  FeatureFrame frame;
  for (std::size_t t = window; t + 1 < returns.size(); ++t) {
    frame.step.push_back(t);
    frame.realized_vol.push_back(rv[t]);
    frame.garch_vol.push_back(std::sqrt(path.sigma2[t]));
    frame.target.push_back(rv[t + 1]);
  }
  return frame;
}

// ---------------------------------------------------------------------------
// Scaling
// ---------------------------------------------------------------------------

enum class ScalerMode { minmax, standard };

inline std::string_view to_string(ScalerMode m) { return m == ScalerMode::minmax ? "minmax" : "standard"; }

inline ScalerMode parse_scaler_mode(std::string_view s) {
  if (s == "minmax") return ScalerMode::minmax;
  if (s == "standard") return ScalerMode::standard;
  throw ConfigError("unknown scaler '" + std::string(s) + "' (expected minmax or standard)");
}

/// Per-feature affine scaler. minmax maps [min, max] onto [0, 1]; standard
/// maps to zero mean and unit population std. Fitted once on training rows;
/// test rows may land outside [0, 1].
struct ScalerParams {
  ScalerMode mode = ScalerMode::minmax;
  std::vector<double> min, max;      // minmax
  std::vector<double> mean, stddev;  // standard

  std::size_t features() const { return mode == ScalerMode::minmax ? min.size() : mean.size(); }

  double transform(std::size_t j, double x) const {
    return mode == ScalerMode::minmax ? (x - min[j]) / (max[j] - min[j]) : (x - mean[j]) / stddev[j];
  }
  double inverse(std::size_t j, double z) const {
    return mode == ScalerMode::minmax ? min[j] + z * (max[j] - min[j]) : mean[j] + z * stddev[j];
  }
};

/// Fits one scaler column per entry of `columns`; `names` label errors.
inline ScalerParams fit_scaler(const std::vector<std::span<const double>>& columns,
                               const std::vector<std::string>& names, ScalerMode mode) {
  ScalerParams s;
  s.mode = mode;
  for (std::size_t j = 0; j < columns.size(); ++j) {
    const auto col = columns[j];
    if (col.empty()) throw DataError("cannot fit scaler on empty feature '" + names[j] + "'");
    for (double v : col)
      if (!std::isfinite(v)) throw DataError("non-finite value in feature '" + names[j] + "'");
    const auto [lo, hi] = std::minmax_element(col.begin(), col.end());
    if (!(*hi > *lo)) throw DataError("degenerate feature '" + names[j] + "': max == min");
    if (mode == ScalerMode::minmax) {
      s.min.push_back(*lo);
      s.max.push_back(*hi);
    } else {
      const double mu = std::accumulate(col.begin(), col.end(), 0.0) / static_cast<double>(col.size());
      double var = 0.0;
      for (double v : col) var += (v - mu) * (v - mu);
      s.mean.push_back(mu);
      s.stddev.push_back(std::sqrt(var / static_cast<double>(col.size())));
    }
  }
  return s;
}

enum class Partition { train, test };

/// Sliding windows over the scaled feature frame. Sample i covers frame rows
/// i .. i+window-1 and targets frame.target[i+window-1]. Samples
/// [0, split_index) are training, the rest test.
struct WindowedDataset {
  Tensor x;                // [samples x window x 2], scaled
  std::vector<double> y;   // [samples], scaled
  ScalerParams x_scaler;
  ScalerParams y_scaler;
  std::size_t split_index = 0;
  std::size_t window = 0;
  std::vector<std::size_t> target_step;  // return index whose realized vol is the target

  std::size_t samples() const noexcept { return y.size(); }
  std::size_t features() const { return x.dim(-1); }

  std::size_t begin(Partition p) const { return p == Partition::train ? 0 : split_index; }
  std::size_t end(Partition p) const { return p == Partition::train ? split_index : samples(); }
  std::size_t count(Partition p) const { return end(p) - begin(p); }

  /// Inputs of one partition as [n x window x features].
  Tensor inputs(Partition p) const {
    const std::size_t stride = window * features();
    Tensor out({count(p), window, features()});
    std::copy_n(x.data.begin() + static_cast<std::ptrdiff_t>(begin(p) * stride), count(p) * stride, out.data.begin());
    return out;
  }

  /// Scaled targets of one partition as [n x 1].
  Tensor targets(Partition p) const {
    Tensor out({count(p), 1});
    std::copy_n(y.begin() + static_cast<std::ptrdiff_t>(begin(p)), count(p), out.data.begin());
    return out;
  }
};

inline std::size_t window_count(std::size_t frame_rows, std::size_t window) {
  return frame_rows >= window ? frame_rows - window + 1 : 0;
}

inline std::size_t split_point(std::size_t samples, double split) {
  return static_cast<std::size_t>(std::floor(split * static_cast<double>(samples)));
}

/// Fits x and y scalers on the training partition only, then windows the
/// whole frame with them.
inline WindowedDataset fit_transform_scalers(const FeatureFrame& frame, double split, std::size_t window,
                                             ScalerMode mode = ScalerMode::minmax) {
  if (!(split > 0.0 && split < 1.0)) throw ConfigError("split must lie in (0, 1)");
  if (window == 0) throw ConfigError("window must be positive");
  const std::size_t samples = window_count(frame.size(), window);
  const std::size_t split_index = split_point(samples, split);
  if (split_index < 1 || samples - split_index < 1) {
    throw DataError("not enough rows for a train and a test window (" + std::to_string(frame.size()) +
                    " feature rows, window " + std::to_string(window) + ")");
  }
  const std::size_t train_rows = split_index + window - 1;
  std::vector<double> train_targets(frame.target.begin() + static_cast<std::ptrdiff_t>(window - 1),
                                    frame.target.begin() + static_cast<std::ptrdiff_t>(train_rows));

  WindowedDataset ds;
  ds.window = window;
  ds.split_index = split_index;
  ds.x_scaler = fit_scaler({std::span<const double>(frame.realized_vol).first(train_rows),
                            std::span<const double>(frame.garch_vol).first(train_rows)},
                           {"realized_vol", "garch_vol"}, mode);
  ds.y_scaler = fit_scaler({train_targets}, {"target"}, mode);

  ds.x = Tensor({samples, window, 2});
  ds.y.resize(samples);
  ds.target_step.resize(samples);
  for (std::size_t i = 0; i < samples; ++i) {
    for (std::size_t j = 0; j < window; ++j) {
      const std::size_t row = i + j;
      ds.x[(i * window + j) * 2 + 0] = ds.x_scaler.transform(0, frame.realized_vol[row]);
      ds.x[(i * window + j) * 2 + 1] = ds.x_scaler.transform(1, frame.garch_vol[row]);
    }
    const std::size_t last = i + window - 1;
    ds.y[i] = ds.y_scaler.transform(0, frame.target[last]);
    ds.target_step[i] = frame.step[last] + 1;
  }
  return ds;
}

/// Dumps the frame as `t,realized_vol,garch_vol,target,split`; rows feeding
/// only training samples are labelled train.
inline void write_frame_csv(std::ostream& os, const FeatureFrame& frame, const WindowedDataset& ds) {
  char buf[128];
  os << "t,realized_vol,garch_vol,target,split\n";
  for (std::size_t r = 0; r < frame.size(); ++r) {
    const bool train = r + 1 < ds.split_index + ds.window;
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%s\n", frame.step[r], frame.realized_vol[r],
                  frame.garch_vol[r], frame.target[r], train ? "train" : "test");
    os << buf;
  }
}

}  // namespace afvol
