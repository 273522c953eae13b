#include "lmscale/theory.hpp"

#include <algorithm>
#include <cmath>

#include "lmscale/error.hpp"
#include "lmscale/parallel.hpp"

namespace lmscale {

namespace {

void require_positive(double v, const char* name) {
  if (!(v > 0) || !std::isfinite(v))
    throw ConfigError(std::string(name) + " must be finite and positive, got " + std::to_string(v));
}

constexpr std::uint64_t kMaxExplicitTerms = 100'000'000;

}  // namespace

void LanguageExponents::validate() const {
  require_positive(gamma, "gamma");
  require_positive(beta, "beta");
  require_positive(c, "threshold constant c");
  if (!(H_inf >= 0) || !std::isfinite(H_inf)) throw ConfigError("H_inf must be finite and >= 0");
  if (H_0 && (!(*H_0 >= 0) || !std::isfinite(*H_0))) throw ConfigError("H_0 must be finite and >= 0");
}

double predict_alpha(double gamma, double beta) {
  require_positive(gamma, "gamma");
  require_positive(beta, "beta");
  return gamma / (2.0 * beta);
}

double data_threshold(double n, double beta, double c) {
  if (!(n >= 1) || !std::isfinite(n)) throw ConfigError("data_threshold: n must be >= 1");
  require_positive(beta, "beta");
  require_positive(c, "c");
  return c * c * std::pow(n, 2.0 * beta);
}

double horizon(double P, double beta, double c) {
  if (!(P >= 1) || !std::isfinite(P)) throw ConfigError("horizon: P must be >= 1");
  require_positive(beta, "beta");
  require_positive(c, "c");
  return std::pow(P / (c * c), 1.0 / (2.0 * beta));
}

std::vector<double> differential_losses(const LossCurve& curve) {
  const auto gaps = curve.gaps();
  if (!gaps.empty())
    throw DataError("differential_losses: n range is not contiguous, missing n=" + std::to_string(gaps.front()));
  std::vector<double> out;
  for (std::size_t i = 1; i < curve.losses.size(); ++i) out.push_back(curve.losses[i] - curve.losses[i - 1]);
  return out;
}

TransitionShape parse_transition_shape(const std::string& name) {
  if (name == "piecewise") return TransitionShape::piecewise;
  if (name == "smooth") return TransitionShape::smooth;
  if (name == "instant") return TransitionShape::instant;
  if (name == "never") return TransitionShape::never;
  throw ConfigError("unknown transition shape '" + name + "' (piecewise, smooth, instant, never)");
}

std::string to_string(TransitionShape shape) {
  switch (shape) {
    case TransitionShape::piecewise: return "piecewise";
    case TransitionShape::smooth: return "smooth";
    case TransitionShape::instant: return "instant";
    case TransitionShape::never: return "never";
  }
  return "unknown";
}

double transition(TransitionShape shape, double x, double delta) {
  switch (shape) {
    case TransitionShape::piecewise: return x <= 1.0 ? 0.0 : 1.0 - std::pow(x, -delta);
    case TransitionShape::smooth: return 1.0 - std::pow(1.0 + x, -delta);
    case TransitionShape::instant: return 1.0;
    case TransitionShape::never: return 0.0;
  }
  return 0.0;
}

void AnsatzSpec::validate() const {
  exponents.validate();
  require_positive(A, "A");
  require_positive(delta, "delta");
  for (double d : delta_table) require_positive(d, "delta_n");
  if (max_n == 0) throw ConfigError("max_n must be >= 1");
  for (double P : P_grid)
    if (!(P >= 1) || !std::isfinite(P)) throw ConfigError("P grid values must be >= 1");
}

double AnsatzSpec::H(std::uint32_t n) const {
  if (n == 0) return exponents.H_0.value_or(exponents.H_inf + A);
  return exponents.H_inf + A * std::pow(static_cast<double>(n), -exponents.gamma);
}

double AnsatzSpec::delta_at(std::uint32_t n) const {
  return n >= 1 && n <= delta_table.size() ? delta_table[n - 1] : delta;
}

double AnsatzSpec::effective_delta() const {
  double d = delta;
  if (!delta_table.empty()) {
    d = *std::min_element(delta_table.begin(), delta_table.end());
    if (delta_table.size() < max_n) d = std::min(d, delta);
  }
  return d;
}

double ansatz_loss(const AnsatzSpec& spec, std::uint32_t n, double P) {
  long double L = spec.H(0);
  double prev = spec.H(0);
  for (std::uint32_t k = 1; k <= n; ++k) {
    const double h = spec.H(k);
    const double x = P / data_threshold(k, spec.exponents.beta, spec.exponents.c);
    L += static_cast<long double>(h - prev) * transition(spec.shape, x, spec.delta_at(k));
    prev = h;
  }
  return static_cast<double>(L);
}

std::vector<double> ansatz_losses(const AnsatzSpec& spec, double P) {
  std::vector<double> out(spec.max_n);
  long double L = spec.H(0);
  double prev = spec.H(0);
  for (std::uint32_t k = 1; k <= spec.max_n; ++k) {
    const double h = spec.H(k);
    const double x = P / data_threshold(k, spec.exponents.beta, spec.exponents.c);
    L += static_cast<long double>(h - prev) * transition(spec.shape, x, spec.delta_at(k));
    prev = h;
    out[k - 1] = static_cast<double>(L);
  }
  return out;
}

LossCurveSet synthesize_curves(const AnsatzSpec& spec, unsigned threads) {
  spec.validate();
  if (spec.P_grid.empty()) throw ConfigError("synthesize_curves: P grid is empty");
  std::vector<double> grid = spec.P_grid;
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  LossCurveSet set;
  set.curves.resize(grid.size());
  parallel_for(grid.size(), [&](std::size_t i) {
    auto& c = set.curves[i];
    c.dataset = spec.dataset;
    c.arch = to_string(spec.shape);
    c.T = spec.max_n;
    c.P = grid[i];
    c.first_n = 1;
    c.losses = ansatz_losses(spec, grid[i]);
  }, threads);
  return set;
}

double ansatz_autoregressive_loss(const AnsatzSpec& spec, double P, std::uint64_t T) {
  spec.validate();
  if (T == 0) throw ConfigError("context length T must be >= 1");
  std::uint64_t M = T;
  if (spec.shape == TransitionShape::piecewise || spec.shape == TransitionShape::never) {
    // Terms with P <= P*_n vanish, so L_n is constant for n >= ceil(n*(P)).
    const double n_star = P >= 1 ? horizon(P, spec.exponents.beta, spec.exponents.c) : 0.0;
    M = std::min<std::uint64_t>(T, std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::ceil(n_star))));
  }
  if (M > kMaxExplicitTerms)
    throw ConfigError("ansatz_autoregressive_loss: " + std::to_string(M) + " explicit terms exceed the limit of " +
                      std::to_string(kMaxExplicitTerms));
  long double L = spec.H(0);
  double prev = spec.H(0);
  long double sum = 0;
  for (std::uint64_t k = 1; k <= M; ++k) {
    const double h = spec.H(static_cast<std::uint32_t>(k));
    const double x = P / data_threshold(static_cast<double>(k), spec.exponents.beta, spec.exponents.c);
    L += static_cast<long double>(h - prev) *
         transition(spec.shape, x, spec.delta_at(static_cast<std::uint32_t>(k)));
    prev = h;
    sum += L;
  }
  sum += static_cast<long double>(T - M) * L;
  return static_cast<double>(sum / static_cast<long double>(T));
}

double autoregressive_loss(const LossCurve& curve) {
  const auto gaps = curve.gaps();
  if (!gaps.empty() || curve.losses.empty())
    throw DataError("autoregressive_loss: curve has gaps (first missing n=" +
                    (gaps.empty() ? std::string("?") : std::to_string(gaps.front())) + ")");
  long double s = 0;
  for (double v : curve.losses) s += v;
  return static_cast<double>(s / static_cast<long double>(curve.losses.size()));
}

ExcessLossTable excess_losses(const LossCurveSet& curves, const std::vector<double>& H, double beta, double c,
                              double tol) {
  ExcessLossTable table;
  for (const auto& curve : curves.curves) {
    for (std::uint32_t n = curve.first_n; n <= curve.last_n(); ++n) {
      if (!curve.has(n)) continue;
      if (n >= H.size())
        throw DataError("excess_losses: missing entropy estimate H_" + std::to_string(n));
      double prev_loss;
      if (n == 1) {
        prev_loss = H[0];
      } else if (curve.has(n - 1)) {
        prev_loss = curve.at(n - 1);
      } else {
        continue;
      }
      ExcessLoss e;
      e.P = curve.P;
      e.n = n;
      e.value = (curve.at(n) - prev_loss) - (H[n] - H[n - 1]);
      e.defined = curve.P >= data_threshold(n, beta, c);
      table.entries.push_back(e);
      if (e.defined && e.value < -tol) table.negative.push_back(e);
    }
  }
  return table;
}

std::string to_string(Regime regime) {
  switch (regime) {
    case Regime::horizon_limited: return "horizon_limited";
    case Regime::marginal: return "marginal";
    case Regime::within_horizon_limited: return "within_horizon_limited";
  }
  return "unknown";
}

RegimeClassification classify_regime(double gamma, double beta, double delta, double rel_tol) {
  require_positive(delta, "delta");
  const double alpha = predict_alpha(gamma, beta);
  RegimeClassification out;
  if (std::fabs(alpha - delta) <= rel_tol * std::max(alpha, delta)) {
    out.regime = Regime::marginal;
    out.predicted_exponent = std::min(alpha, delta);
    out.log_correction = true;
  } else if (alpha < delta) {
    out.regime = Regime::horizon_limited;
    out.predicted_exponent = alpha;
  } else {
    out.regime = Regime::within_horizon_limited;
    out.predicted_exponent = delta;
  }
  return out;
}

std::vector<double> entropy_table(const AnsatzSpec& spec, std::uint32_t max_n) {
  std::vector<double> H(static_cast<std::size_t>(max_n) + 1);
  for (std::uint32_t n = 0; n <= max_n; ++n) H[n] = spec.H(n);
  return H;
}

std::vector<DecompositionRow> decompose_loss(const LossCurveSet& curves, const std::vector<double>& H,
                                             double beta, double c) {
  if (H.empty()) throw DataError("decompose_loss: entropy table is empty");
  std::vector<DecompositionRow> rows;
  for (const auto& curve : curves.curves) {
    DecompositionRow row;
    row.P = curve.P;
    row.horizon = horizon(std::max(1.0, curve.P), beta, c);
    const double floor_h = std::floor(row.horizon);
    const std::uint64_t n_star = floor_h >= 4e9 ? 4'000'000'000ull : static_cast<std::uint64_t>(floor_h);
    row.n_star = static_cast<std::uint32_t>(n_star);
    if (n_star >= H.size()) {
      row.missing = true;
      row.note = "entropy table ends at n=" + std::to_string(H.size() - 1) + ", horizon is " + std::to_string(n_star);
      rows.push_back(row);
      continue;
    }
    if (n_star > 0 && (curve.first_n != 1 || curve.last_n() < n_star)) {
      row.missing = true;
      row.note = "curve covers n=" + std::to_string(curve.first_n) + ".." + std::to_string(curve.last_n()) +
                 ", horizon needs 1.." + std::to_string(n_star);
      rows.push_back(row);
      continue;
    }
    bool gap = false;
    const double T = static_cast<double>(curve.T);
    long double excess = 0, weighted_excess = 0, weighted_boundary = H[0];
    double prev_loss = H[0];
    for (std::uint32_t n = 1; n <= n_star; ++n) {
      if (!curve.has(n)) {
        gap = true;
        row.note = "missing L_" + std::to_string(n);
        break;
      }
      const double w = (T - static_cast<double>(n - 1)) / T;
      const double e = (curve.at(n) - prev_loss) - (H[n] - H[n - 1]);
      excess += e;
      weighted_excess += w * e;
      weighted_boundary += w * (H[n] - H[n - 1]);
      prev_loss = curve.at(n);
    }
    if (gap) {
      row.missing = true;
      rows.push_back(row);
      continue;
    }
    row.boundary_term = H[n_star];
    row.excess_sum = static_cast<double>(excess);
    row.weighted_boundary_term = static_cast<double>(weighted_boundary);
    row.weighted_excess_sum = static_cast<double>(weighted_excess);
    row.ratio = row.boundary_term != 0 ? row.excess_sum / row.boundary_term : 0.0;
    rows.push_back(row);
  }
  return rows;
}

ThresholdCalibration calibrate_threshold_constant(const std::vector<std::pair<double, double>>& horizon_points,
                                                  double beta) {
  require_positive(beta, "beta");
  std::vector<double> lp, ln;
  for (const auto& [P, n] : horizon_points) {
    if (P > 0 && n >= 1 && std::isfinite(P) && std::isfinite(n)) {
      lp.push_back(std::log(P));
      ln.push_back(std::log(n));
    }
  }
  if (lp.empty()) throw DataError("calibrate_threshold_constant: no horizon points with n* >= 1");
  ThresholdCalibration out;
  out.points = lp.size();
  long double log_c = 0;
  for (std::size_t i = 0; i < lp.size(); ++i) log_c += 0.5 * (lp[i] - 2.0 * beta * ln[i]);
  log_c /= static_cast<long double>(lp.size());
  out.c = std::exp(static_cast<double>(log_c));
  long double rss = 0;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    const long double pred = (lp[i] - 2.0L * log_c) / (2.0L * beta);
    rss += (ln[i] - pred) * (ln[i] - pred);
  }
  out.rms_log_residual = std::sqrt(static_cast<double>(rss / static_cast<long double>(lp.size())));
  long double mp = 0, mn = 0;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    mp += lp[i];
    mn += ln[i];
  }
  mp /= lp.size();
  mn /= lp.size();
  long double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    sxx += (lp[i] - mp) * (lp[i] - mp);
    sxy += (lp[i] - mp) * (ln[i] - mn);
  }
  out.free_slope = sxx > 0 ? static_cast<double>(sxy / sxx) : 0.0;
  return out;
}

}  // namespace lmscale
