#pragma once

#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace lmscale {

struct Point {
  double x = 0.0;
  double y = 0.0;
  double weight = 1.0;
};

/// Closed interval of x values used by a fit. Unbounded by default.
struct FitRange {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  bool contains(double x) const { return x >= lo && x <= hi; }
};

/// Parses "A:B", ":B", "A:" or "" (everything).
FitRange parse_fit_range(const std::string& text);

/// y ~ exp(log_prefactor) * x^(-exponent); exponent > 0 for decaying data.
struct PowerLawFit {
  double exponent = 0.0;
  double log_prefactor = 0.0;
  double r2 = 0.0;
  double x_min = 0.0;
  double x_max = 0.0;
  std::size_t num_points = 0;
};

/// Ordinary (optionally weighted) least squares of log y on log x over the
/// points inside `range`. r2 is the coefficient of determination on the
/// log scale, 0 when log y is constant. Requires >= 3 points, all positive.
PowerLawFit fit_power_law(const std::vector<Point>& points, const FitRange& range = {});

/// Candidate asymptotes H = h_min + k * step for k = 0, 1, ... while H < h_max.
/// Unset bounds default to [0, min y).
struct AsymptoteGrid {
  std::optional<double> h_min;
  std::optional<double> h_max;
  double step = 1e-2;
};

/// y ~ H + exp(log_prefactor) * x^(-delta).
struct AsymptoteFit {
  double asymptote = 0.0;
  double delta = 0.0;
  double log_prefactor = 0.0;
  double r2 = 0.0;
  double grid_step = 0.0;
  double x_min = 0.0;
  double x_max = 0.0;
  std::size_t num_points = 0;
  std::size_t candidates_tried = 0;
  /// All y are equal, so y - H is either zero or constant for every H.
  bool degenerate = false;
};

struct AsymptoteOptions {
  AsymptoteGrid grid;
  /// Points with x < min_ratio * threshold are dropped (threshold 0 keeps all).
  double min_ratio = 10.0;
  double threshold = 0.0;
  FitRange range;
  unsigned threads = 0;
};

/// Grid search over H maximizing the log-scale R^2 of log(y - H) against
/// log x. Candidates with any y <= H are rejected; ties go to the smallest H.
AsymptoteFit fit_asymptote(const std::vector<Point>& points, const AsymptoteOptions& options = {});

struct BrokenPowerLawFit {
  double breakpoint = 0.0;
  double exponent_left = 0.0;
  double exponent_right = 0.0;
  double log_prefactor_left = 0.0;
  double log_prefactor_right = 0.0;
  double r2_total = 0.0;
  double sse = 0.0;
  std::size_t candidates_tried = 0;
};

/// Two independent log-log fits split at each candidate breakpoint b (left:
/// x <= b, right: x > b). Candidates with fewer than 3 points on a side are
/// skipped. Empty `candidates` means every interior data x.
BrokenPowerLawFit fit_broken_power_law(const std::vector<Point>& points,
                                       std::vector<double> candidates = {},
                                       const FitRange& range = {});

/// Flags spikes: residuals of log y against a global log-log trend, detrended
/// by a running median over `window` points, scaled by a robust deviation.
/// A point is masked when |detrended residual| / scale > z_thresh.
std::vector<bool> outlier_mask(const std::vector<Point>& points, std::size_t window = 5,
                               double z_thresh = 3.5);

/// Points whose mask entry is false.
std::vector<Point> apply_mask(const std::vector<Point>& points, const std::vector<bool>& mask);

/// Reads "x,y[,weight]" rows; a non-numeric first line is taken as a header.
std::vector<Point> read_points_csv(const std::string& path);

}  // namespace lmscale
