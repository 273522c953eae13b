#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lmscale/loss_curves.hpp"

namespace lmscale {

/// One n-gram curve after the rescaling x = P / n^(2 beta), y = n^gamma L_n.
/// Points are sorted by x.
struct RescaledCurve {
  std::uint32_t n = 0;
  std::vector<double> x;
  std::vector<double> y;
};

struct RescaleOptions {
  /// Rescale L_n - H_inf instead of L_n.
  bool subtract_asymptote = false;
  double H_inf = 0.0;
};

/// Regroups the set by n (one curve per n across the P grid of every
/// (dataset, arch, T)) and applies the rescaling.
std::vector<RescaledCurve> rescale(const LossCurveSet& curves, double gamma, double beta,
                                   const RescaleOptions& options = {});

struct MasterBin {
  double x = 0.0;       // geometric bin center
  double mean = 0.0;    // cross-curve mean of the interpolated y
  double spread = 0.0;  // cross-curve population standard deviation
  std::size_t curves = 0;
};

struct CurveResidual {
  std::uint32_t n = 0;
  /// RMS over bins of (y_curve - mean) / mean.
  double rms_relative = 0.0;
};

struct DispersionResult {
  double score = 0.0;
  double x_lo = 0.0;
  double x_hi = 0.0;
  std::vector<MasterBin> bins;
  std::vector<CurveResidual> residuals;
};

/// Bin-wise coefficient of variation averaged over log-spaced bins of the
/// shared x support. Each curve is interpolated at the bin centers
/// (piecewise-linear in log-log, linear where y <= 0). Requires >= 2
/// curves whose supports overlap.
DispersionResult dispersion(const std::vector<RescaledCurve>& family, std::size_t num_bins = 32);

struct CollapseReport {
  double gamma_used = 0.0;
  double beta_used = 0.0;
  bool subtract_asymptote = false;
  double H_inf = 0.0;
  DispersionResult result;
};

CollapseReport collapse(const LossCurveSet& curves, double gamma, double beta, std::size_t num_bins = 32,
                        const RescaleOptions& options = {});

struct ScanResult {
  std::vector<double> gamma_grid;
  std::vector<double> beta_grid;
  /// scores[i * beta_grid.size() + j] for (gamma_grid[i], beta_grid[j]); NaN
  /// marks cells whose rescaled curves no longer overlap.
  std::vector<double> scores;
  double best_gamma = 0.0;
  double best_beta = 0.0;
  double best_score = 0.0;
  std::size_t missing_cells = 0;
};

/// Dispersion over the full grid, evaluated in parallel. The smallest
/// (gamma, beta) wins ties.
ScanResult exponent_scan(const LossCurveSet& curves, std::vector<double> gamma_grid,
                         std::vector<double> beta_grid, std::size_t num_bins = 32,
                         const RescaleOptions& options = {}, unsigned threads = 0);

/// Evenly spaced grid lo, lo + step, ... <= hi (inclusive within 1e-9 step).
std::vector<double> linear_grid(double lo, double hi, double step);

}  // namespace lmscale
