// afvol: GARCH fitting, LSTM / AF-LSTM volatility forecasting and comparison.
//
// Exit codes: 0 success, 2 invalid configuration or input data,
// 3 numerical failure (fit or training), 1 anything else.

#include <cstdint>
#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "afvol/afvol.hpp"

namespace {

struct Flags {
  std::string input;
  std::string output_dir = "out";
  std::uint64_t seed = 42;
  std::size_t epochs = 1000;
  double lr = 0.001;
  std::size_t hidden = 64;
  std::size_t dim = 2;
  std::size_t t_max = 1000;
  std::size_t window = 5;
  double split = 0.8;
  double clip_norm = 5.0;
  std::string model = "af-lstm";
  std::string af_variant = "simple";
  std::string garch = "garch";
  std::string scaler = "minmax";
  std::int64_t synthetic = -1;
  std::size_t length = 2000;
  bool dump_dataset = false;
};

afvol::RunConfig to_run_config(const Flags& f) {
  afvol::RunConfig cfg;
  cfg.input = f.input;
  if (f.synthetic >= 0) cfg.synthetic = static_cast<std::uint64_t>(f.synthetic);
  cfg.synthetic_length = f.length;
  cfg.output_dir = f.output_dir;
  cfg.dump_dataset = f.dump_dataset;
  cfg.data.window = f.window;
  cfg.data.split = f.split;
  cfg.data.garch = afvol::parse_garch_kind(f.garch);
  cfg.data.scaler = afvol::parse_scaler_mode(f.scaler);
  cfg.train.epochs = f.epochs;
  cfg.train.learning_rate = f.lr;
  cfg.train.seed = f.seed;
  cfg.train.model = afvol::parse_model_kind(f.model);
  cfg.train.hidden = f.hidden;
  cfg.train.dim = f.dim;
  cfg.train.t_max = f.t_max;
  cfg.train.variant = afvol::parse_af_variant(f.af_variant);
  cfg.train.clip_norm = f.clip_norm;
  return cfg;
}

void print_rmse(const afvol::TrainReport& r) {
  std::printf("%-8s train RMSE %.6f  test RMSE %.6f\n", std::string(afvol::to_string(r.model)).c_str(), r.rmse_train,
              r.rmse_test);
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Each training epoch allocates and frees many large tensors; keep them on
  // the heap instead of mmap/munmap round trips.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"GARCH + attention-free LSTM volatility forecasting"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_config("--config", "", "Flat 'key = value' config file; command-line flags take precedence");

  Flags f;
  app.add_option("--input", f.input, "Price CSV with header 'timestamp,close'");
  app.add_option("--output-dir", f.output_dir, "Directory for output artifacts");
  app.add_option("--seed", f.seed, "Seed for parameter initialisation (and simulate)");
  app.add_option("--epochs", f.epochs, "Training epochs (full-batch steps)");
  app.add_option("--lr", f.lr, "Adam learning rate");
  app.add_option("--hidden", f.hidden, "LSTM hidden size");
  app.add_option("--dim", f.dim, "AF block embedding dimension");
  app.add_option("--t-max", f.t_max, "Maximum sequence length for position biases");
  app.add_option("--window", f.window, "Rolling-volatility and input window length");
  app.add_option("--split", f.split, "Train fraction of windowed samples");
  app.add_option("--clip-norm", f.clip_norm, "Global gradient-norm clip (<= 0 disables)");
  app.add_option("--model", f.model, "Model for 'train'")->check(CLI::IsMember({"lstm", "af-lstm"}));
  app.add_option("--af-variant", f.af_variant, "Attention-free block variant")
      ->check(CLI::IsMember({"simple", "position-bias"}));
  app.add_option("--garch", f.garch, "Volatility model")->check(CLI::IsMember({"garch", "gjr"}));
  app.add_option("--scaler", f.scaler, "Feature scaling")->check(CLI::IsMember({"minmax", "standard"}));
  app.add_option("--synthetic", f.synthetic, "Use a simulated GARCH(1,1) price path with this seed (-1: off)");
  app.add_option("--length", f.length, "Number of prices for --synthetic and simulate");
  app.add_flag("--dump-dataset", f.dump_dataset, "Also write dataset.csv (t,realized_vol,garch_vol,target,split)");

  auto* fit_cmd = app.add_subcommand("fit-garch", "Fit GARCH by maximum likelihood; write params and volatility CSV");
  auto* train_cmd = app.add_subcommand("train", "Train one model; write report, params and prediction CSVs");
  auto* compare_cmd = app.add_subcommand("compare", "Train LSTM and AF-LSTM on the same data; write RMSE summary");
  auto* sim_cmd = app.add_subcommand("simulate", "Write a simulated GARCH(1,1) price CSV (uses --seed, --length)");
  for (auto* sub : {fit_cmd, train_cmd, compare_cmd, sim_cmd}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const afvol::RunConfig cfg = to_run_config(f);
    if (*sim_cmd) {
      const auto prices = afvol::run_simulate(cfg, f.seed);
      std::printf("wrote %zu prices to %s/prices.csv\n", prices.size(), cfg.output_dir.c_str());
      return 0;
    }
    if (*fit_cmd) {
      if (cfg.input.empty() == !cfg.synthetic) throw afvol::ConfigError("exactly one of --input or --synthetic is required");
      const afvol::GarchFit fit = afvol::run_fit_garch(cfg);
      std::printf("omega %.6g  alpha %.6g  beta %.6g", fit.params.omega, fit.params.alpha[0], fit.params.beta[0]);
      if (fit.kind == afvol::GarchKind::gjr) std::printf("  gamma %.6g", fit.params.gamma[0]);
      std::printf("  loglik %.6f\n", fit.loglik);
      return 0;
    }
    if (*train_cmd) {
      const afvol::TrainResult r = afvol::run_train(cfg);
      print_rmse(r.report);
      return 0;
    }
    const auto [lstm, af] = afvol::run_compare(cfg);
    std::printf("%-10s %14s %14s\n", "Dataset", "LSTM RMSE", "AF-LSTM RMSE");
    std::printf("%-10s %14.6f %14.6f\n", "Train Set", lstm.report.rmse_train, af.report.rmse_train);
    std::printf("%-10s %14.6f %14.6f\n", "Test Set", lstm.report.rmse_test, af.report.rmse_test);
    return 0;
  } catch (const afvol::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const afvol::DataError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const afvol::ConstraintError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const afvol::FitError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const afvol::DivergenceError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
