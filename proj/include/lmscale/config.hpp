#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lmscale/covstats.hpp"
#include "lmscale/fitkit.hpp"
#include "lmscale/theory.hpp"
#include "lmscale/tokenizer.hpp"

namespace lmscale {

/// Every tolerance, range and grid used by the pipeline. Loaded from an INI
/// file with [tokenizer], [covstats], [fit], [theory], [collapse] and [run]
/// sections; unknown keys are rejected.
struct Config {
  // [tokenizer]
  std::uint32_t vocab_size = 8192;
  DocumentSplit split;

  // [covstats]
  std::string lags = "1..512";
  double power_tol = 1e-8;
  std::uint32_t power_max_iters = 10000;
  std::uint64_t power_seed = 0x5eed;
  bool cross_documents = false;
  std::uint64_t dense_budget_mb = 256;
  bool require_convergence = false;
  double horizon_tol_ratio = 0.5;

  // [fit]
  std::string beta_range = "1:512";
  std::string gamma_range = "1:10";
  bool broken_power_law = false;
  bool mask_outliers = true;
  std::uint32_t outlier_window = 5;
  double outlier_z = 3.5;
  double grid_step = 0.01;
  double min_ratio = 10.0;
  double low_r2 = 0.9;

  // [theory]
  double H_inf = 0.0;
  double threshold_c = 1.0;
  std::string shape = "piecewise";

  // [collapse]
  std::uint32_t bins = 32;
  bool subtract_asymptote = false;
  std::string scan_gamma = "0.05:1.5:0.01";
  std::string scan_beta = "0.3:2.0:0.01";

  // [run]
  unsigned threads = 0;

  static Config defaults() { return {}; }
  static Config load(const std::filesystem::path& path);
  static Config parse(const std::string& ini_text);

  /// Overrides one "section.key" value and re-validates.
  void set(const std::string& key, const std::string& value);

  /// Canonical INI rendering; hashing it identifies the configuration.
  std::string to_ini() const;
  std::string hash() const;

  std::vector<std::uint32_t> lag_list() const;
  PowerIterationOptions power_options() const;
  CountOptions count_options() const;
  FitRange beta_fit_range() const;
  FitRange gamma_fit_range() const;

  /// Checks every value; throws ConfigError.
  void validate() const;
};

/// Parses "lo:hi:step" into an inclusive grid.
std::vector<double> parse_grid(const std::string& text);

}  // namespace lmscale
