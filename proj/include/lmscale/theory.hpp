#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lmscale/loss_curves.hpp"

namespace lmscale {

struct LanguageExponents {
  double gamma = 0.0;
  double beta = 0.0;
  double H_inf = 0.0;
  /// Loss without any context; defaults to H_1 when unset.
  std::optional<double> H_0;
  /// Threshold constant c in P*_n = c^2 n^(2 beta).
  double c = 1.0;

  void validate() const;
};

/// alpha_D = gamma / (2 beta).
double predict_alpha(double gamma, double beta);

/// P*_n = c^2 n^(2 beta).
double data_threshold(double n, double beta, double c = 1.0);

/// n*(P) = (P / c^2)^(1 / (2 beta)), the exact inverse of data_threshold.
double horizon(double P, double beta, double c = 1.0);

/// Delta_n = L_n - L_{n-1} for n = first_n + 1 .. last_n. Throws DataError
/// naming the first gap.
std::vector<double> differential_losses(const LossCurve& curve);

enum class TransitionShape {
  piecewise,  // 0 for x <= 1, 1 - x^-delta above
  smooth,     // 1 - (1 + x)^-delta
  instant,    // 1
  never,      // 0
};

TransitionShape parse_transition_shape(const std::string& name);
std::string to_string(TransitionShape shape);

/// f(x) for x = P / P*_n.
double transition(TransitionShape shape, double x, double delta);

struct AnsatzSpec {
  LanguageExponents exponents;
  /// H_n = H_inf + A n^-gamma.
  double A = 1.0;
  double delta = 1.0;
  /// Optional per-n exponents; delta_table[n - 1] applies to n, the scalar
  /// delta to any n beyond the table.
  std::vector<double> delta_table;
  TransitionShape shape = TransitionShape::piecewise;
  std::uint32_t max_n = 512;
  std::vector<double> P_grid;
  std::string dataset = "ansatz";

  void validate() const;
  double H(std::uint32_t n) const;
  double delta_at(std::uint32_t n) const;
  /// min over n of delta_n, used for regime classification.
  double effective_delta() const;
};

/// L_n(P) = H_0 + sum_{n'=1..n} (H_n' - H_n'-1) f(P / P*_n'), summed exactly.
double ansatz_loss(const AnsatzSpec& spec, std::uint32_t n, double P);

/// All L_n for n = 1..max_n at fixed P.
std::vector<double> ansatz_losses(const AnsatzSpec& spec, double P);

/// Curves for every P in the grid with n = 1..max_n, T = max_n.
LossCurveSet synthesize_curves(const AnsatzSpec& spec, unsigned threads = 0);

/// (1/T) sum_{n=1..T} L_n(P). For the piecewise and never shapes L_n stops
/// changing past the horizon, which makes very large T cheap.
double ansatz_autoregressive_loss(const AnsatzSpec& spec, double P, std::uint64_t T);

/// Mean of L_n over the curve's n range (requires a gap-free curve).
double autoregressive_loss(const LossCurve& curve);

struct ExcessLoss {
  double P = 0.0;
  std::uint32_t n = 0;
  double value = 0.0;
  /// P >= P*_n, i.e. the quantity is defined.
  bool defined = false;
};

struct ExcessLossTable {
  std::vector<ExcessLoss> entries;
  /// Defined entries with value < -tol (they point at a misestimated H_n).
  std::vector<ExcessLoss> negative;
};

/// E_n(P) = Delta_n(P) - (H_n - H_{n-1}) for every curve and n, where
/// H[n] is the entropy estimate for n (H[0] = H_0) and L_0 := H_0.
ExcessLossTable excess_losses(const LossCurveSet& curves, const std::vector<double>& H, double beta,
                              double c, double tol = 1e-12);

enum class Regime { horizon_limited, marginal, within_horizon_limited };

std::string to_string(Regime regime);

struct RegimeClassification {
  Regime regime = Regime::horizon_limited;
  double predicted_exponent = 0.0;
  /// The exponent carries a logarithmic correction (marginal case).
  bool log_correction = false;
};

/// Compares gamma/(2 beta) with delta; equality within relative tolerance.
RegimeClassification classify_regime(double gamma, double beta, double delta, double rel_tol = 1e-9);

struct DecompositionRow {
  double P = 0.0;
  double horizon = 0.0;
  std::uint32_t n_star = 0;
  double boundary_term = 0.0;
  double excess_sum = 0.0;
  /// Same sums with the (T - (n - 1)) / T weights kept.
  double weighted_boundary_term = 0.0;
  double weighted_excess_sum = 0.0;
  double ratio = 0.0;  // excess_sum / boundary_term
  bool missing = false;
  std::string note;
};

/// Per curve (one P each): boundary term H_{n*(P)} and the excess sum
/// sum_{n<=n*(P)} E_n(P), with and without the finite-context weights.
/// H[n] indexes entropies from n = 0.
std::vector<DecompositionRow> decompose_loss(const LossCurveSet& curves, const std::vector<double>& H,
                                             double beta, double c);

/// Entropy table H[0..max_n] realized from an ansatz spec.
std::vector<double> entropy_table(const AnsatzSpec& spec, std::uint32_t max_n);

struct ThresholdCalibration {
  double c = 1.0;
  /// Free-slope fit of log n* against log P for comparison with 1/(2 beta).
  double free_slope = 0.0;
  double rms_log_residual = 0.0;
  std::size_t points = 0;
};

/// Solves log n* = (log P - 2 log c) / (2 beta) for c by least squares over
/// the (P, n*) pairs with n* >= 1.
ThresholdCalibration calibrate_threshold_constant(const std::vector<std::pair<double, double>>& horizon_points,
                                                  double beta);

}  // namespace lmscale
