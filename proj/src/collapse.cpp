#include "lmscale/collapse.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <tuple>

#include "lmscale/error.hpp"
#include "lmscale/parallel.hpp"

namespace lmscale {

namespace {

void require_exponent(double v, const char* name) {
  if (!(v > 0) || !std::isfinite(v))
    throw ConfigError(std::string(name) + " must be finite and positive for rescaling");
}

// Raw (P, L) series per (dataset, arch, T, n), sorted by P.
struct RawCurve {
  std::uint32_t n = 0;
  std::vector<double> P;
  std::vector<double> L;
};

std::vector<RawCurve> group_by_n(const LossCurveSet& curves) {
  std::map<std::tuple<std::string, std::string, std::uint32_t, std::uint32_t>, RawCurve> grouped;
  for (const auto& c : curves.curves) {
    for (std::uint32_t n = c.first_n; n <= c.last_n(); ++n) {
      if (!c.has(n)) continue;
      auto& raw = grouped[{c.dataset, c.arch, c.T, n}];
      raw.n = n;
      raw.P.push_back(c.P);
      raw.L.push_back(c.at(n));
    }
  }
  std::vector<RawCurve> out;
  for (auto& [key, raw] : grouped) {
    std::vector<std::size_t> idx(raw.P.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return raw.P[a] < raw.P[b]; });
    RawCurve sorted;
    sorted.n = raw.n;
    for (auto i : idx) {
      sorted.P.push_back(raw.P[i]);
      sorted.L.push_back(raw.L[i]);
    }
    out.push_back(std::move(sorted));
  }
  return out;
}

std::vector<RescaledCurve> rescale_raw(const std::vector<RawCurve>& raw, double gamma, double beta,
                                       const RescaleOptions& options) {
  std::vector<RescaledCurve> out;
  out.reserve(raw.size());
  for (const auto& r : raw) {
    RescaledCurve c;
    c.n = r.n;
    const double nd = static_cast<double>(r.n);
    const double x_scale = std::pow(nd, 2.0 * beta);
    const double y_scale = std::pow(nd, gamma);
    for (std::size_t i = 0; i < r.P.size(); ++i) {
      c.x.push_back(r.P[i] / x_scale);
      c.y.push_back(y_scale * (options.subtract_asymptote ? r.L[i] - options.H_inf : r.L[i]));
    }
    out.push_back(std::move(c));
  }
  return out;
}

double interpolate(const RescaledCurve& c, double x) {
  auto it = std::lower_bound(c.x.begin(), c.x.end(), x);
  if (it == c.x.end()) return c.y.back();
  std::size_t hi = static_cast<std::size_t>(it - c.x.begin());
  if (c.x[hi] == x || hi == 0) return c.y[hi];
  const std::size_t lo = hi - 1;
  const double t = (std::log(x) - std::log(c.x[lo])) / (std::log(c.x[hi]) - std::log(c.x[lo]));
  if (c.y[lo] > 0 && c.y[hi] > 0)
    return std::exp(std::log(c.y[lo]) + t * (std::log(c.y[hi]) - std::log(c.y[lo])));
  return c.y[lo] + t * (c.y[hi] - c.y[lo]);
}

}  // namespace

std::vector<RescaledCurve> rescale(const LossCurveSet& curves, double gamma, double beta,
                                   const RescaleOptions& options) {
  require_exponent(gamma, "gamma");
  require_exponent(beta, "beta");
  return rescale_raw(group_by_n(curves), gamma, beta, options);
}

DispersionResult dispersion(const std::vector<RescaledCurve>& family, std::size_t num_bins) {
  if (num_bins == 0) throw ConfigError("dispersion: num_bins must be positive");
  std::vector<const RescaledCurve*> usable;
  for (const auto& c : family)
    if (c.x.size() >= 2) usable.push_back(&c);
  if (usable.size() < 2)
    throw DataError("dispersion: need at least 2 curves with 2 or more points, have " +
                    std::to_string(usable.size()));
  double lo = 0.0, hi = std::numeric_limits<double>::infinity();
  for (const auto* c : usable) {
    if (!(c->x.front() > 0)) throw DataError("dispersion: rescaled x must be positive");
    lo = std::max(lo, c->x.front());
    hi = std::min(hi, c->x.back());
  }
  if (!(lo < hi))
    throw DataError("dispersion: rescaled curves have no overlapping support");

  DispersionResult out;
  out.x_lo = lo;
  out.x_hi = hi;
  const double llo = std::log(lo), lhi = std::log(hi);
  std::vector<std::vector<double>> values(usable.size(), std::vector<double>(num_bins));
  long double total = 0;
  for (std::size_t b = 0; b < num_bins; ++b) {
    const double center = std::exp(llo + (lhi - llo) * (static_cast<double>(b) + 0.5) / static_cast<double>(num_bins));
    long double sum = 0;
    bool all_equal = true;
    for (std::size_t k = 0; k < usable.size(); ++k) {
      values[k][b] = interpolate(*usable[k], center);
      sum += values[k][b];
      all_equal = all_equal && values[k][b] == values[0][b];
    }
    const long double mean = sum / static_cast<long double>(usable.size());
    long double var = 0;
    for (std::size_t k = 0; k < usable.size(); ++k) var += (values[k][b] - mean) * (values[k][b] - mean);
    var /= static_cast<long double>(usable.size());
    MasterBin bin;
    bin.x = center;
    bin.mean = static_cast<double>(mean);
    bin.spread = all_equal ? 0.0 : static_cast<double>(std::sqrt(var));
    bin.curves = usable.size();
    const double cv = all_equal ? 0.0 : bin.spread / std::fabs(bin.mean);
    total += cv;
    out.bins.push_back(bin);
  }
  out.score = static_cast<double>(total / static_cast<long double>(num_bins));
  for (std::size_t k = 0; k < usable.size(); ++k) {
    long double ss = 0;
    for (std::size_t b = 0; b < num_bins; ++b) {
      const double m = out.bins[b].mean;
      const double r = m != 0 ? (values[k][b] - m) / m : 0.0;
      ss += r * r;
    }
    out.residuals.push_back({usable[k]->n, std::sqrt(static_cast<double>(ss / static_cast<long double>(num_bins)))});
  }
  return out;
}

CollapseReport collapse(const LossCurveSet& curves, double gamma, double beta, std::size_t num_bins,
                        const RescaleOptions& options) {
  CollapseReport report;
  report.gamma_used = gamma;
  report.beta_used = beta;
  report.subtract_asymptote = options.subtract_asymptote;
  report.H_inf = options.H_inf;
  report.result = dispersion(rescale(curves, gamma, beta, options), num_bins);
  return report;
}

ScanResult exponent_scan(const LossCurveSet& curves, std::vector<double> gamma_grid, std::vector<double> beta_grid,
                         std::size_t num_bins, const RescaleOptions& options, unsigned threads) {
  if (gamma_grid.empty() || beta_grid.empty()) throw ConfigError("exponent_scan: grids must be nonempty");
  for (double g : gamma_grid) require_exponent(g, "gamma grid value");
  for (double b : beta_grid) require_exponent(b, "beta grid value");
  std::sort(gamma_grid.begin(), gamma_grid.end());
  std::sort(beta_grid.begin(), beta_grid.end());
  const auto raw = group_by_n(curves);
  std::size_t multi_point = 0;
  for (const auto& r : raw) multi_point += r.P.size() >= 2 ? 1 : 0;
  if (multi_point < 2)
    throw DataError("exponent_scan: need at least 2 curves with 2 or more points, have " +
                    std::to_string(multi_point));

  ScanResult out;
  out.gamma_grid = gamma_grid;
  out.beta_grid = beta_grid;
  const std::size_t nb = beta_grid.size();
  out.scores.assign(gamma_grid.size() * nb, std::numeric_limits<double>::quiet_NaN());
  parallel_for(out.scores.size(), [&](std::size_t cell) {
    try {
      out.scores[cell] =
          dispersion(rescale_raw(raw, gamma_grid[cell / nb], beta_grid[cell % nb], options), num_bins).score;
    } catch (const DataError&) {
    }
  }, threads);

  std::ptrdiff_t best = -1;
  for (std::size_t cell = 0; cell < out.scores.size(); ++cell) {
    if (std::isnan(out.scores[cell])) {
      ++out.missing_cells;
      continue;
    }
    if (best < 0 || out.scores[cell] < out.scores[static_cast<std::size_t>(best)])
      best = static_cast<std::ptrdiff_t>(cell);
  }
  if (best < 0) throw DataError("exponent_scan: no grid cell leaves overlapping rescaled curves");
  out.best_gamma = gamma_grid[static_cast<std::size_t>(best) / nb];
  out.best_beta = beta_grid[static_cast<std::size_t>(best) % nb];
  out.best_score = out.scores[static_cast<std::size_t>(best)];
  return out;
}

std::vector<double> linear_grid(double lo, double hi, double step) {
  if (!(step > 0) || !(hi >= lo) || !std::isfinite(lo) || !std::isfinite(hi))
    throw ConfigError("grid needs lo <= hi and a positive step");
  const auto count = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
  if (count > 10'000'000) throw ConfigError("grid has too many points");
  std::vector<double> out(count);
  for (std::size_t k = 0; k < count; ++k) out[k] = lo + static_cast<double>(k) * step;
  return out;
}

}  // namespace lmscale
