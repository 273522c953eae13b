#include "lmscale/fitkit.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "lmscale/error.hpp"
#include "lmscale/parallel.hpp"

namespace lmscale {

namespace {

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  double sse = 0.0;
  double sst = 0.0;
};

// Weighted least squares of v on u.
LinearFit linear_fit(const std::vector<double>& u, const std::vector<double>& v,
                     const std::vector<double>& w) {
  long double sw = 0, su = 0, sv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    sw += w[i];
    su += w[i] * u[i];
    sv += w[i] * v[i];
  }
  const long double mu = su / sw, mv = sv / sw;
  long double suu = 0, suv = 0, svv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const long double du = u[i] - mu, dv = v[i] - mv;
    suu += w[i] * du * du;
    suv += w[i] * du * dv;
    svv += w[i] * dv * dv;
  }
  if (suu == 0) throw DataError("fit needs at least two distinct x values");
  LinearFit f;
  f.slope = static_cast<double>(suv / suu);
  f.intercept = static_cast<double>(mv - suv / suu * mu);
  long double sse = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const long double r = v[i] - (f.intercept + static_cast<long double>(f.slope) * u[i]);
    sse += w[i] * r * r;
  }
  f.sse = static_cast<double>(sse);
  f.sst = static_cast<double>(svv);
  f.r2 = svv > 0 ? std::clamp(static_cast<double>(1.0L - sse / svv), 0.0, 1.0) : 0.0;
  return f;
}

struct LogData {
  std::vector<double> lx, ly, w;
  double x_min = 0.0, x_max = 0.0;
};

LogData to_log(const std::vector<Point>& points, const FitRange& range, const char* what) {
  LogData d;
  d.x_min = INFINITY;
  d.x_max = -INFINITY;
  for (const auto& p : points) {
    if (!range.contains(p.x)) continue;
    if (!(p.x > 0) || !(p.y > 0) || !std::isfinite(p.x) || !std::isfinite(p.y))
      throw DataError(std::string(what) + ": values must be finite and positive (got x=" +
                      std::to_string(p.x) + ", y=" + std::to_string(p.y) + ")");
    if (!(p.weight > 0) || !std::isfinite(p.weight))
      throw DataError(std::string(what) + ": weights must be positive");
    d.lx.push_back(std::log(p.x));
    d.ly.push_back(std::log(p.y));
    d.w.push_back(p.weight);
    d.x_min = std::min(d.x_min, p.x);
    d.x_max = std::max(d.x_max, p.x);
  }
  return d;
}

double parse_double(const std::string& s, const std::string& context) {
  double v = 0.0;
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
  while (end > begin && (end[-1] == ' ' || end[-1] == '\t' || end[-1] == '\r')) --end;
  if (begin < end && *begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end || begin == end)
    throw DataError(context + ": '" + s + "' is not a number");
  return v;
}

}  // namespace

FitRange parse_fit_range(const std::string& text) {
  FitRange r;
  if (text.empty()) return r;
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw ConfigError("fit range must look like A:B, got '" + text + "'");
  try {
    const std::string a = text.substr(0, colon), b = text.substr(colon + 1);
    if (!a.empty()) r.lo = parse_double(a, "fit range");
    if (!b.empty()) r.hi = parse_double(b, "fit range");
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  if (r.lo > r.hi) throw ConfigError("fit range '" + text + "' is empty");
  return r;
}

PowerLawFit fit_power_law(const std::vector<Point>& points, const FitRange& range) {
  const LogData d = to_log(points, range, "fit_power_law");
  if (d.lx.size() < 3)
    throw DataError("fit_power_law: need at least 3 points in range, have " + std::to_string(d.lx.size()));
  const LinearFit f = linear_fit(d.lx, d.ly, d.w);
  PowerLawFit out;
  out.exponent = -f.slope;
  out.log_prefactor = f.intercept;
  out.r2 = f.r2;
  out.x_min = d.x_min;
  out.x_max = d.x_max;
  out.num_points = d.lx.size();
  return out;
}

AsymptoteFit fit_asymptote(const std::vector<Point>& points, const AsymptoteOptions& options) {
  if (!(options.grid.step > 0)) throw ConfigError("fit_asymptote: grid step must be positive");
  if (options.min_ratio < 0 || options.threshold < 0)
    throw ConfigError("fit_asymptote: min_ratio and threshold must be nonnegative");
  const double x_floor = options.min_ratio * options.threshold;
  std::vector<Point> kept;
  for (const auto& p : points) {
    if (!options.range.contains(p.x) || p.x < x_floor) continue;
    if (!(p.x > 0) || !std::isfinite(p.x) || !std::isfinite(p.y))
      throw DataError("fit_asymptote: x must be positive and values finite");
    kept.push_back(p);
  }
  if (kept.size() < 4)
    throw DataError("fit_asymptote: need at least 4 points with x >= " + std::to_string(x_floor) +
                    " in range, have " + std::to_string(kept.size()));

  double y_min = INFINITY, y_max = -INFINITY;
  for (const auto& p : kept) {
    y_min = std::min(y_min, p.y);
    y_max = std::max(y_max, p.y);
  }
  const double h_min = options.grid.h_min.value_or(0.0);
  const double h_max = std::min(options.grid.h_max.value_or(y_min), y_min);
  if (!(h_min < h_max))
    throw DataError("fit_asymptote: no admissible asymptote; every candidate must satisfy H < min y = " +
                    std::to_string(y_min) + " but the grid starts at " + std::to_string(h_min));

  AsymptoteFit out;
  out.grid_step = options.grid.step;
  out.num_points = kept.size();
  out.x_min = INFINITY;
  out.x_max = -INFINITY;
  std::vector<double> lx, w;
  for (const auto& p : kept) {
    lx.push_back(std::log(p.x));
    w.push_back(p.weight);
    out.x_min = std::min(out.x_min, p.x);
    out.x_max = std::max(out.x_max, p.x);
  }

  const double span = (h_max - h_min) / options.grid.step;
  if (span > 1e8) throw ConfigError("fit_asymptote: grid has more than 1e8 candidates");
  std::size_t count = static_cast<std::size_t>(std::ceil(span));
  while (count > 0 && !(h_min + static_cast<double>(count - 1) * options.grid.step < h_max)) --count;
  while (h_min + static_cast<double>(count) * options.grid.step < h_max) ++count;
  out.candidates_tried = count;

  if (y_min == y_max) {
    out.degenerate = true;
    out.asymptote = y_min;
    return out;
  }

  std::vector<LinearFit> fits(count);
  std::vector<char> admissible(count, 0);
  parallel_for(count, [&](std::size_t k) {
    const double H = h_min + static_cast<double>(k) * options.grid.step;
    std::vector<double> ly(kept.size());
    for (std::size_t i = 0; i < kept.size(); ++i) {
      const double r = kept[i].y - H;
      if (!(r > 0)) return;
      ly[i] = std::log(r);
    }
    fits[k] = linear_fit(lx, ly, w);
    admissible[k] = 1;
  }, options.threads);

  std::ptrdiff_t best = -1;
  for (std::size_t k = 0; k < count; ++k)
    if (admissible[k] && (best < 0 || fits[k].r2 > fits[static_cast<std::size_t>(best)].r2))
      best = static_cast<std::ptrdiff_t>(k);
  if (best < 0)
    throw DataError("fit_asymptote: no grid point satisfies H < min y = " + std::to_string(y_min));
  const auto& f = fits[static_cast<std::size_t>(best)];
  out.asymptote = h_min + static_cast<double>(best) * options.grid.step;
  out.delta = -f.slope;
  out.log_prefactor = f.intercept;
  out.r2 = f.r2;
  return out;
}

BrokenPowerLawFit fit_broken_power_law(const std::vector<Point>& points, std::vector<double> candidates,
                                       const FitRange& range) {
  std::vector<Point> sorted;
  for (const auto& p : points)
    if (range.contains(p.x)) sorted.push_back(p);
  std::stable_sort(sorted.begin(), sorted.end(), [](const Point& a, const Point& b) { return a.x < b.x; });
  const LogData all = to_log(sorted, {}, "fit_broken_power_law");
  const std::size_t n = all.lx.size();
  if (candidates.empty())
    for (const auto& p : sorted) candidates.push_back(p.x);
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  BrokenPowerLawFit best;
  bool found = false;
  for (double b : candidates) {
    const std::size_t split = static_cast<std::size_t>(
        std::upper_bound(sorted.begin(), sorted.end(), b, [](double v, const Point& p) { return v < p.x; }) -
        sorted.begin());
    if (split < 3 || n - split < 3) continue;
    auto slice = [&](std::size_t lo, std::size_t hi, const std::vector<double>& v) {
      return std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(lo),
                                 v.begin() + static_cast<std::ptrdiff_t>(hi));
    };
    LinearFit left, right;
    try {
      left = linear_fit(slice(0, split, all.lx), slice(0, split, all.ly), slice(0, split, all.w));
      right = linear_fit(slice(split, n, all.lx), slice(split, n, all.ly), slice(split, n, all.w));
    } catch (const DataError&) {
      continue;
    }
    ++best.candidates_tried;
    const double sse = left.sse + right.sse;
    if (!found || sse < best.sse) {
      found = true;
      const std::size_t tried = best.candidates_tried;
      best = {};
      best.candidates_tried = tried;
      best.breakpoint = b;
      best.exponent_left = -left.slope;
      best.exponent_right = -right.slope;
      best.log_prefactor_left = left.intercept;
      best.log_prefactor_right = right.intercept;
      best.sse = sse;
    }
  }
  if (!found)
    throw DataError("fit_broken_power_law: no candidate breakpoint leaves 3 points on each side (" +
                    std::to_string(n) + " points)");
  const LinearFit whole = linear_fit(all.lx, all.ly, all.w);
  best.r2_total = whole.sst > 0 ? std::clamp(1.0 - best.sse / whole.sst, 0.0, 1.0) : 0.0;
  return best;
}

std::vector<bool> outlier_mask(const std::vector<Point>& points, std::size_t window, double z_thresh) {
  if (window < 3 || window % 2 == 0) throw ConfigError("outlier_mask: window must be odd and >= 3");
  if (!(z_thresh > 0)) throw ConfigError("outlier_mask: z_thresh must be positive");
  const std::size_t n = points.size();
  std::vector<bool> mask(n, false);
  if (n < 3) return mask;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return points[a].x < points[b].x; });
  std::vector<Point> sorted;
  for (auto i : order) sorted.push_back(points[i]);
  const LogData d = to_log(sorted, {}, "outlier_mask");
  const LinearFit trend = linear_fit(d.lx, d.ly, std::vector<double>(n, 1.0));

  std::vector<double> resid(n);
  for (std::size_t i = 0; i < n; ++i) resid[i] = d.ly[i] - (trend.intercept + trend.slope * d.lx[i]);

  auto median = [](std::vector<double> v) {
    const std::size_t m = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m), v.end());
    double mid = v[m];
    if (v.size() % 2 == 0) {
      const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m));
      mid = 0.5 * (mid + lower);
    }
    return mid;
  };

  const std::size_t w = std::min(window, n % 2 ? n : n - 1);
  std::vector<double> detrended(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t lo = i >= w / 2 ? i - w / 2 : 0;
    if (lo + w > n) lo = n - w;
    detrended[i] = resid[i] - median(std::vector<double>(resid.begin() + static_cast<std::ptrdiff_t>(lo),
                                                         resid.begin() + static_cast<std::ptrdiff_t>(lo + w)));
  }
  const double center = median(detrended);
  std::vector<double> abs_dev(n);
  for (std::size_t i = 0; i < n; ++i) abs_dev[i] = std::fabs(detrended[i] - center);
  constexpr double kMinScale = 0.05;
  const double scale = std::max(1.4826 * median(abs_dev), kMinScale);
  for (std::size_t i = 0; i < n; ++i)
    if (std::fabs(detrended[i] - center) / scale > z_thresh) mask[order[i]] = true;
  return mask;
}

std::vector<Point> apply_mask(const std::vector<Point>& points, const std::vector<bool>& mask) {
  if (mask.size() != points.size()) throw DataError("mask length does not match the points");
  std::vector<Point> out;
  for (std::size_t i = 0; i < points.size(); ++i)
    if (!mask[i]) out.push_back(points[i]);
  return out;
}

std::vector<Point> read_points_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  std::vector<Point> points;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
    if (fields.size() < 2 || fields.size() > 3)
      throw DataError(path + ":" + std::to_string(line_no) + ": expected x,y[,weight]");
    const std::string where = path + ":" + std::to_string(line_no);
    try {
      Point p;
      p.x = parse_double(fields[0], where);
      p.y = parse_double(fields[1], where);
      if (fields.size() == 3) p.weight = parse_double(fields[2], where);
      points.push_back(p);
    } catch (const DataError&) {
      if (points.empty() && line_no == 1) continue;  // header
      throw;
    }
  }
  return points;
}

}  // namespace lmscale
