#include "lmscale/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <tuple>

#include "lmscale/digest.hpp"
#include "lmscale/error.hpp"
#include "lmscale/svg_plot.hpp"
#include "lmscale/synthlang.hpp"

namespace lmscale {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::size_t kBatchBytes = std::size_t{32} << 20;

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

TokenizedCorpus tokenize_corpus(const fs::path& corpus, const Config& config, const Vocabulary* vocab) {
  auto open = [&corpus]() {
    std::ifstream in(corpus, std::ios::binary);
    if (!in) throw DataError("cannot read corpus " + corpus.string());
    return in;
  };
  TokenizedCorpus out;
  if (vocab) {
    out.vocab = *vocab;
  } else {
    WordCounter words;
    auto in = open();
    for_each_document(in, config.split, [&words](std::string_view doc) { words.add_document(doc); });
    out.vocab = train_bpe(words, config.vocab_size);
  }
  out.stream.vocab_size = out.vocab.size();

  std::vector<std::string> batch;
  std::size_t batch_bytes = 0;
  auto flush = [&]() {
    TokenStream part = encode(batch, out.vocab);
    if (!part.ids.empty()) {
      if (!out.stream.ids.empty()) out.stream.ids.push_back(out.vocab.eos_id());
      out.stream.ids.insert(out.stream.ids.end(), part.ids.begin(), part.ids.end());
    }
    batch.clear();
    batch_bytes = 0;
  };
  auto in = open();
  for_each_document(in, config.split, [&](std::string_view doc) {
    ++out.documents;
    batch.emplace_back(doc);
    batch_bytes += doc.size();
    if (batch_bytes >= kBatchBytes) flush();
  });
  flush();
  return out;
}

std::vector<LagCovarianceSummary> measure_covariance(const TokenStream& stream, const Config& config) {
  stream.validate();
  const auto counts = count_pairs(stream, config.lag_list(), config.count_options());
  return summarize(counts, config.power_options(), config.threads);
}

BetaMeasurement fit_beta(const std::vector<LagCovarianceSummary>& lags, const Config& config) {
  BetaMeasurement m;
  m.lags = lags;
  std::vector<std::uint32_t> failed;
  for (const auto& row : lags)
    if (!row.converged) failed.push_back(row.lag);
  m.nonconverged = failed.size();
  if (!failed.empty()) {
    std::string list;
    for (std::size_t i = 0; i < failed.size() && i < 8; ++i) list += (i ? "," : "") + std::to_string(failed[i]);
    const std::string msg = "power iteration did not converge for " + std::to_string(failed.size()) +
                            " lag(s) (" + list + (failed.size() > 8 ? ",..." : "") + ")";
    if (config.require_convergence) throw ConvergenceError(msg);
    m.warnings.push_back(msg);
  }

  const FitRange range = config.beta_fit_range();
  std::vector<Point> points;
  std::vector<std::uint32_t> point_lags;
  for (const auto& row : lags) {
    if (!range.contains(row.lag) || row.empty || !(row.op_norm > 0)) continue;
    points.push_back({static_cast<double>(row.lag), row.op_norm, 1.0});
    point_lags.push_back(row.lag);
  }
  if (points.size() < 3)
    throw DataError("beta fit: need at least 3 lags with a nonzero covariance inside " + config.beta_range +
                    ", have " + std::to_string(points.size()));
  if (config.mask_outliers && points.size() >= config.outlier_window + 2) {
    const auto mask = outlier_mask(points, config.outlier_window, config.outlier_z);
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask[i]) m.masked_lags.push_back(point_lags[i]);
    if (points.size() - m.masked_lags.size() >= 3) points = apply_mask(points, mask);
    else m.masked_lags.clear();
  }
  m.fit = fit_power_law(points);
  if (config.broken_power_law) m.broken = fit_broken_power_law(points);
  m.low_r2 = m.fit.r2 < config.low_r2;
  if (m.low_r2)
    m.warnings.push_back("power-law fit of the covariance norms has low R^2 (" + format_double(m.fit.r2) + ")");
  return m;
}

BetaMeasurement run_measure_beta(const TokenStream& stream, const Config& config) {
  return fit_beta(measure_covariance(stream, config), config);
}

GammaMeasurement run_measure_gamma(const LossCurveSet& curves, const Config& config) {
  if (curves.curves.empty()) throw DataError("gamma fit: no loss curves");
  const LossCurve* best = &curves.curves.front();
  for (const auto& c : curves.curves)
    if (c.P > best->P) best = &c;
  GammaMeasurement m;
  m.dataset = best->dataset;
  m.arch = best->arch;
  m.T = best->T;
  m.P_max = best->P;

  const FitRange range = config.gamma_fit_range();
  std::vector<Point> points;
  for (std::uint32_t n = best->first_n; n <= best->last_n(); ++n) {
    if (!best->has(n) || !range.contains(n)) continue;
    const double y = best->at(n) - config.H_inf;
    if (!(y > 0))
      throw DataError("gamma fit: L_" + std::to_string(n) + " - H_inf is not positive at P = " +
                      format_double(best->P));
    points.push_back({static_cast<double>(n), y, 1.0});
  }
  m.fit = fit_power_law(points);

  const LossCurve* second = nullptr;
  for (const auto& c : curves.curves) {
    if (c.dataset != best->dataset || c.arch != best->arch || c.T != best->T || !(c.P < best->P)) continue;
    if (!second || c.P > second->P) second = &c;
  }
  if (second) {
    m.P_second = second->P;
    double gap = 0.0;
    for (const auto& p : points) {
      const auto n = static_cast<std::uint32_t>(p.x);
      if (second->has(n)) gap = std::max(gap, std::fabs(best->at(n) - second->at(n)));
    }
    m.convergence_gap = gap;
  } else {
    m.warnings.push_back("only one P available; convergence diagnostic omitted");
  }
  return m;
}

std::vector<DeltaMeasurement> measure_deltas(const LossCurveSet& curves, double beta, const Config& config) {
  std::map<std::uint32_t, std::vector<Point>> by_n;
  for (const auto& c : curves.curves)
    for (std::uint32_t n = c.first_n; n <= c.last_n(); ++n)
      if (c.has(n)) by_n[n].push_back({c.P, c.at(n), 1.0});
  std::vector<DeltaMeasurement> out;
  for (auto& [n, points] : by_n) {
    std::sort(points.begin(), points.end(), [](const Point& a, const Point& b) { return a.x < b.x; });
    DeltaMeasurement d;
    d.n = n;
    AsymptoteOptions options;
    options.grid.step = config.grid_step;
    options.grid.h_min = config.H_inf;
    options.min_ratio = config.min_ratio;
    options.threshold = data_threshold(n, beta, config.threshold_c);
    options.threads = config.threads;
    try {
      d.fit = fit_asymptote(points, options);
    } catch (const DataError& e) {
      d.error = e.what();
    }
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<double> entropy_from_gamma(const GammaMeasurement& gamma, double H_inf, std::uint32_t max_n) {
  std::vector<double> H(static_cast<std::size_t>(max_n) + 1);
  const double A = std::exp(gamma.fit.log_prefactor);
  for (std::uint32_t n = 1; n <= max_n; ++n) H[n] = H_inf + A * std::pow(static_cast<double>(n), -gamma.gamma());
  H[0] = max_n >= 1 ? H[1] : H_inf + A;
  return H;
}

ScalingReport run_full_report(const TokenStream* tokens, const LossCurveSet* curves, const Config& config) {
  ScalingReport r;
  auto guard = [&r](const std::string& stage, auto&& body) {
    try {
      body();
    } catch (const ConvergenceError&) {
      throw;
    } catch (const Error& e) {
      r.gaps.push_back({stage, e.what()});
    }
  };

  if (tokens) guard("beta", [&] { r.beta = run_measure_beta(*tokens, config); });
  else r.gaps.push_back({"beta", "no corpus or token stream supplied"});
  if (r.beta)
    for (const auto& w : r.beta->warnings) r.warnings.push_back("beta: " + w);

  if (!curves) {
    for (const char* stage : {"gamma", "alpha", "delta", "regime", "decomposition", "collapse"})
      r.gaps.push_back({stage, "no loss curves supplied"});
    return r;
  }

  guard("gamma", [&] { r.gamma = run_measure_gamma(*curves, config); });
  if (r.gamma)
    for (const auto& w : r.gamma->warnings) r.warnings.push_back("gamma: " + w);

  if (r.gamma && r.beta) r.alpha_pred = predict_alpha(r.gamma->gamma(), r.beta->beta());
  else r.gaps.push_back({"alpha", "needs both gamma and beta"});

  guard("alpha_fit", [&] {
    if (!r.gamma) throw DataError("needs the gamma stage to select a curve family");
    std::vector<Point> points;
    for (const auto& c : curves->curves) {
      if (c.dataset != r.gamma->dataset || c.arch != r.gamma->arch || c.T != r.gamma->T) continue;
      const double y = autoregressive_loss(c) - config.H_inf;
      if (!(y > 0)) throw DataError("L_AR - H_inf is not positive at P = " + format_double(c.P));
      points.push_back({c.P, y, 1.0});
    }
    r.alpha_fit = fit_power_law(points);
  });

  if (r.beta) {
    r.deltas = measure_deltas(*curves, r.beta->beta(), config);
    std::vector<double> fitted;
    for (const auto& d : r.deltas)
      if (d.fit && !d.fit->degenerate) fitted.push_back(d.fit->delta);
    if (fitted.empty()) {
      r.gaps.push_back({"delta", "no n has enough points above min_ratio * P*_n"});
    } else {
      std::sort(fitted.begin(), fitted.end());
      const std::size_t k = fitted.size();
      r.delta = k % 2 ? fitted[k / 2] : 0.5 * (fitted[k / 2 - 1] + fitted[k / 2]);
    }
  } else {
    r.gaps.push_back({"delta", "needs beta for the data thresholds"});
  }

  if (r.gamma && r.beta && r.delta) r.regime = classify_regime(r.gamma->gamma(), r.beta->beta(), *r.delta);
  else r.gaps.push_back({"regime", "needs gamma, beta and at least one delta_n fit"});

  guard("decomposition", [&] {
    if (!r.gamma || !r.beta) throw DataError("needs gamma and beta");
    std::uint32_t max_n = 0;
    for (const auto& c : curves->curves) max_n = std::max(max_n, c.last_n());
    r.decomposition =
        decompose_loss(*curves, entropy_from_gamma(*r.gamma, config.H_inf, max_n), r.beta->beta(), config.threshold_c);
  });

  guard("collapse", [&] {
    if (!r.gamma || !r.beta) throw DataError("needs gamma and beta");
    r.collapse = collapse(*curves, r.gamma->gamma(), r.beta->beta(), config.bins,
                          {config.subtract_asymptote, config.H_inf});
  });
  return r;
}

AnsatzSpec ansatz_from_json(const json& j) {
  try {
    AnsatzSpec s;
    s.exponents.gamma = j.at("gamma").get<double>();
    s.exponents.beta = j.at("beta").get<double>();
    s.exponents.H_inf = j.value("H_inf", 0.0);
    if (j.contains("H_0") && !j["H_0"].is_null()) s.exponents.H_0 = j["H_0"].get<double>();
    s.exponents.c = j.value("c", 1.0);
    s.A = j.value("A", 1.0);
    s.delta = j.value("delta", 1.0);
    s.delta_table = j.value("delta_table", std::vector<double>{});
    s.shape = parse_transition_shape(j.value("shape", std::string("piecewise")));
    s.max_n = j.value("max_n", 512u);
    s.dataset = j.value("dataset", std::string("ansatz"));
    if (j.contains("P_grid")) {
      s.P_grid = j["P_grid"].get<std::vector<double>>();
    } else {
      const double lo = j.at("P_min").get<double>(), hi = j.at("P_max").get<double>();
      const auto count = j.at("points").get<std::size_t>();
      if (!(lo > 0) || !(hi > lo) || count < 2) throw ConfigError("ansatz: need 0 < P_min < P_max and points >= 2");
      for (std::size_t k = 0; k < count; ++k)
        s.P_grid.push_back(std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * static_cast<double>(k) /
                                                       static_cast<double>(count - 1)));
    }
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("ansatz: ") + e.what());
  }
}

json json_of(const PowerLawFit& fit) {
  return {{"exponent", fit.exponent}, {"log_prefactor", fit.log_prefactor}, {"r2", fit.r2},
          {"x_min", fit.x_min},       {"x_max", fit.x_max},                 {"num_points", fit.num_points}};
}

json json_of(const BrokenPowerLawFit& fit) {
  return {{"breakpoint", fit.breakpoint},
          {"exponent_left", fit.exponent_left},
          {"exponent_right", fit.exponent_right},
          {"log_prefactor_left", fit.log_prefactor_left},
          {"log_prefactor_right", fit.log_prefactor_right},
          {"r2_total", fit.r2_total},
          {"sse", fit.sse},
          {"candidates_tried", fit.candidates_tried}};
}

json json_of(const AsymptoteFit& fit) {
  return {{"asymptote", fit.asymptote}, {"delta", fit.delta},   {"log_prefactor", fit.log_prefactor},
          {"r2", fit.r2},               {"grid_step", fit.grid_step}, {"x_min", fit.x_min},
          {"x_max", fit.x_max},         {"num_points", fit.num_points},
          {"candidates_tried", fit.candidates_tried}, {"degenerate", fit.degenerate}};
}

json json_of(const BetaMeasurement& m) {
  json lags = json::array();
  for (const auto& row : m.lags) lags.push_back(json::parse(summary_to_json(row)));
  return {{"beta", m.beta()},
          {"fit", json_of(m.fit)},
          {"broken", m.broken ? json_of(*m.broken) : json(nullptr)},
          {"masked_lags", m.masked_lags},
          {"low_r2", m.low_r2},
          {"nonconverged", m.nonconverged},
          {"warnings", m.warnings},
          {"lags", lags}};
}

json json_of(const GammaMeasurement& m) {
  return {{"gamma", m.gamma()},
          {"dataset", m.dataset},
          {"arch", m.arch},
          {"T", m.T},
          {"P_max", m.P_max},
          {"P_second", optional_number(m.P_second)},
          {"convergence_gap", optional_number(m.convergence_gap)},
          {"fit", json_of(m.fit)},
          {"warnings", m.warnings}};
}

json json_of(const DeltaMeasurement& m) {
  json j = {{"n", m.n}};
  if (m.fit) j["fit"] = json_of(*m.fit);
  else j["error"] = m.error;
  return j;
}

json json_of(const RegimeClassification& r) {
  return {{"regime", to_string(r.regime)},
          {"predicted_exponent", r.predicted_exponent},
          {"log_correction", r.log_correction}};
}

json json_of(const DecompositionRow& row) {
  return {{"P", row.P},
          {"horizon", row.horizon},
          {"n_star", row.n_star},
          {"boundary_term", row.boundary_term},
          {"excess_sum", row.excess_sum},
          {"weighted_boundary_term", row.weighted_boundary_term},
          {"weighted_excess_sum", row.weighted_excess_sum},
          {"ratio", row.ratio},
          {"missing", row.missing},
          {"note", row.note}};
}

json json_of(const CollapseReport& report) {
  json bins = json::array();
  for (const auto& b : report.result.bins)
    bins.push_back({{"x", b.x}, {"mean", b.mean}, {"spread", b.spread}, {"curves", b.curves}});
  json residuals = json::array();
  for (const auto& r : report.result.residuals) residuals.push_back({{"n", r.n}, {"rms_relative", r.rms_relative}});
  return {{"gamma", report.gamma_used},
          {"beta", report.beta_used},
          {"subtract_asymptote", report.subtract_asymptote},
          {"H_inf", report.H_inf},
          {"dispersion", report.result.score},
          {"x_lo", report.result.x_lo},
          {"x_hi", report.result.x_hi},
          {"bins", bins},
          {"residuals", residuals}};
}

json json_of(const ScanResult& scan) {
  return {{"best_gamma", scan.best_gamma},
          {"best_beta", scan.best_beta},
          {"best_score", scan.best_score},
          {"missing_cells", scan.missing_cells},
          {"gamma_grid", scan.gamma_grid},
          {"beta_grid", scan.beta_grid},
          {"scores", scan.scores}};
}

json json_of(const HorizonResult& horizon) {
  json points = json::array();
  for (const auto& p : horizon.points)
    points.push_back({{"prefix", p.prefix},
                      {"raw", p.raw},
                      {"horizon", p.horizon},
                      {"dipped", p.dipped},
                      {"missing_lags", p.missing_lags},
                      {"relative_error", p.relative_error}});
  return {{"lags", horizon.lags}, {"full_op_norm", horizon.full_op_norm}, {"degenerate", horizon.degenerate},
          {"points", points}};
}

json json_of(const ScalingReport& report) {
  json gaps = json::array();
  for (const auto& g : report.gaps) gaps.push_back({{"stage", g.stage}, {"message", g.message}});
  json deltas = json::array();
  for (const auto& d : report.deltas) deltas.push_back(json_of(d));
  json decomposition = json::array();
  for (const auto& row : report.decomposition) decomposition.push_back(json_of(row));
  return {{"beta", report.beta ? json_of(*report.beta) : json(nullptr)},
          {"gamma", report.gamma ? json_of(*report.gamma) : json(nullptr)},
          {"alpha_pred", optional_number(report.alpha_pred)},
          {"alpha_fit", report.alpha_fit ? json_of(*report.alpha_fit) : json(nullptr)},
          {"delta", optional_number(report.delta)},
          {"delta_table", deltas},
          {"regime", report.regime ? json_of(*report.regime) : json(nullptr)},
          {"decomposition", decomposition},
          {"collapse", report.collapse ? json_of(*report.collapse) : json(nullptr)},
          {"gaps", gaps},
          {"warnings", report.warnings}};
}

void write_beta_svg(const fs::path& path, const BetaMeasurement& m) {
  PlotSeries data{"||C(n)||_op", {}, {}, true};
  for (const auto& row : m.lags) {
    if (row.empty || !(row.op_norm > 0)) continue;
    data.x.push_back(row.lag);
    data.y.push_back(row.op_norm);
  }
  PlotSeries fit{"fit n^-" + format_double(std::round(m.fit.exponent * 1000) / 1000), {}, {}, false};
  for (double x : {m.fit.x_min, m.fit.x_max}) {
    fit.x.push_back(x);
    fit.y.push_back(std::exp(m.fit.log_prefactor) * std::pow(x, -m.fit.exponent));
  }
  write_svg(path, {"token covariance decay", "lag n", "operator norm", true, true, 640, 480}, {data, fit});
}

void write_collapse_svg(const fs::path& path, const LossCurveSet& curves, double gamma, double beta,
                        const RescaleOptions& options) {
  const auto family = rescale(curves, gamma, beta, options);
  std::vector<PlotSeries> series;
  for (const auto& c : family) {
    if ((c.n & (c.n - 1)) != 0 || c.x.size() < 2) continue;
    series.push_back({"n=" + std::to_string(c.n), c.x, c.y, false});
  }
  write_svg(path, {"rescaled loss curves", "P / n^(2 beta)", "n^gamma L_n", true, true, 640, 480}, series);
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

namespace {

const std::set<std::string> kInputKeys = {"corpus", "tokens", "vocab_in", "curves", "spec", "ansatz", "in"};

bool is_output_key(const std::string& key) { return key.size() >= 3 && key.compare(key.size() - 3, 3, "out") == 0; }

struct Params {
  const json& j;
  const std::string& verb;

  bool has(const char* key) const { return j.contains(key) && !j[key].is_null(); }
  template <class T>
  T get(const char* key) const {
    if (!has(key)) throw ConfigError(verb + ": missing parameter '" + key + "'");
    try {
      return j[key].get<T>();
    } catch (const json::exception&) {
      throw ConfigError(verb + ": parameter '" + key + "' has the wrong type");
    }
  }
  template <class T>
  T get(const char* key, T fallback) const { return has(key) ? get<T>(key) : fallback; }
  fs::path path(const char* key) const { return get<std::string>(key); }
};

void require_known(const Params& p, std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : p.j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(p.verb + ": unknown parameter '" + key + "'");
  }
}

TokenStream load_tokens(const Params& p, const Config& config, JobResult& result) {
  if (p.has("tokens")) {
    result.inputs["tokens"] = p.path("tokens");
    return read_token_stream(p.path("tokens"));
  }
  if (p.has("corpus")) {
    result.inputs["corpus"] = p.path("corpus");
    std::optional<Vocabulary> vocab;
    if (p.has("vocab_in")) {
      result.inputs["vocab_in"] = p.path("vocab_in");
      vocab = Vocabulary::load(p.path("vocab_in"));
    }
    return tokenize_corpus(p.path("corpus"), config, vocab ? &*vocab : nullptr).stream;
  }
  throw ConfigError(p.verb + ": needs 'tokens' or 'corpus'");
}

LossCurveSet load_curves(const Params& p, JobResult& result, const char* key = "curves") {
  result.inputs[key] = p.path(key);
  return read_loss_csv(p.path(key));
}

std::vector<std::uint64_t> default_prefixes(std::uint64_t total) {
  std::vector<std::uint64_t> out;
  if (total < 100) return {total};
  const double lo = std::log(static_cast<double>(std::max<std::uint64_t>(100, total / 1000)));
  const double hi = std::log(static_cast<double>(total));
  for (int k = 0; k < 10; ++k) out.push_back(static_cast<std::uint64_t>(std::llround(std::exp(lo + (hi - lo) * k / 9.0))));
  out.back() = total;
  return out;
}

JobResult job_tokenize(const Params& p, const Config& config) {
  require_known(p, {"corpus", "vocab_in", "vocab_out", "tokens_out"});
  JobResult result;
  result.inputs["corpus"] = p.path("corpus");
  std::optional<Vocabulary> vocab;
  if (p.has("vocab_in")) {
    result.inputs["vocab_in"] = p.path("vocab_in");
    vocab = Vocabulary::load(p.path("vocab_in"));
  } else if (!p.has("vocab_out")) {
    throw ConfigError("tokenize: a trained vocabulary needs 'vocab_out'");
  }
  const auto tokenized = tokenize_corpus(p.path("corpus"), config, vocab ? &*vocab : nullptr);
  if (p.has("vocab_out")) {
    tokenized.vocab.save(p.path("vocab_out"));
    result.outputs["vocab_out"] = p.path("vocab_out");
  }
  write_token_stream(p.path("tokens_out"), tokenized.stream);
  result.outputs["tokens_out"] = p.path("tokens_out");
  result.summary = {{"vocab_size", tokenized.vocab.size()},
                    {"merges", tokenized.vocab.merges().size()},
                    {"documents", tokenized.documents},
                    {"tokens", tokenized.stream.total_tokens()}};
  return result;
}

JobResult job_covstats(const Params& p, const Config& config) {
  require_known(p, {"tokens", "corpus", "vocab_in", "out", "fit_out", "svg_out", "horizon_out", "prefixes"});
  JobResult result;
  const TokenStream stream = load_tokens(p, config, result);
  const auto lags = measure_covariance(stream, config);
  write_summary_jsonl(p.path("out"), lags);
  result.outputs["out"] = p.path("out");
  result.summary = {{"tokens", stream.total_tokens()}, {"lags", lags.size()}};
  if (p.has("fit_out") || p.has("svg_out")) {
    const BetaMeasurement m = fit_beta(lags, config);
    result.summary["beta"] = m.beta();
    result.summary["r2"] = m.fit.r2;
    result.summary["low_r2"] = m.low_r2;
    if (p.has("fit_out")) {
      write_json(p.path("fit_out"), json_of(m));
      result.outputs["fit_out"] = p.path("fit_out");
    }
    if (p.has("svg_out")) {
      write_beta_svg(p.path("svg_out"), m);
      result.outputs["svg_out"] = p.path("svg_out");
    }
  }
  if (p.has("horizon_out")) {
    HorizonOptions options;
    options.tol_ratio = config.horizon_tol_ratio;
    options.power = config.power_options();
    options.count = config.count_options();
    const auto prefixes = p.get<std::vector<std::uint64_t>>("prefixes", default_prefixes(stream.total_tokens()));
    const HorizonResult h = empirical_horizon(stream, prefixes, config.lag_list(), options);
    json out = json_of(h);
    std::vector<Point> points;
    for (const auto& pt : h.points)
      if (pt.horizon >= 1) points.push_back({static_cast<double>(pt.prefix), static_cast<double>(pt.horizon), 1.0});
    try {
      const PowerLawFit fit = fit_power_law(points);
      out["slope"] = -fit.exponent;
      out["fit"] = json_of(fit);
    } catch (const DataError& e) {
      out["slope"] = nullptr;
      out["fit_error"] = e.what();
    }
    write_json(p.path("horizon_out"), out);
    result.outputs["horizon_out"] = p.path("horizon_out");
    result.summary["horizon_slope"] = out["slope"];
  }
  return result;
}

JobResult job_fit(const Params& p, const Config& config) {
  require_known(p, {"kind", "in", "curves", "out", "range", "beta", "threshold", "svg_out"});
  JobResult result;
  const auto kind = p.get<std::string>("kind");
  json out;
  if (kind == "powerlaw" || kind == "asymptote" || kind == "broken") {
    result.inputs["in"] = p.path("in");
    const auto points = read_points_csv(p.path("in"));
    const FitRange range = parse_fit_range(p.get<std::string>("range", ""));
    if (kind == "powerlaw") {
      out = json_of(fit_power_law(points, range));
    } else if (kind == "broken") {
      out = json_of(fit_broken_power_law(points, {}, range));
    } else {
      AsymptoteOptions options;
      options.grid.step = config.grid_step;
      options.min_ratio = config.min_ratio;
      options.threshold = p.get<double>("threshold", 0.0);
      options.range = range;
      options.threads = config.threads;
      out = json_of(fit_asymptote(points, options));
    }
  } else if (kind == "beta") {
    result.inputs["in"] = p.path("in");
    const BetaMeasurement m = fit_beta(read_summary_jsonl(p.path("in")), config);
    out = json_of(m);
    if (p.has("svg_out")) {
      write_beta_svg(p.path("svg_out"), m);
      result.outputs["svg_out"] = p.path("svg_out");
    }
  } else if (kind == "gamma") {
    out = json_of(run_measure_gamma(load_curves(p, result), config));
  } else if (kind == "delta") {
    const auto deltas = measure_deltas(load_curves(p, result), p.get<double>("beta"), config);
    out = json::array();
    for (const auto& d : deltas) out.push_back(json_of(d));
  } else {
    throw ConfigError("fit: kind must be powerlaw, asymptote, broken, beta, gamma or delta");
  }
  write_json(p.path("out"), out);
  result.outputs["out"] = p.path("out");
  result.summary = out.is_object() ? out : json{{"rows", out.size()}};
  if (result.summary.contains("lags")) result.summary.erase("lags");
  return result;
}

JobResult job_predict(const Params& p, const Config& config) {
  require_known(p, {"gamma", "beta", "delta", "c", "P", "ansatz", "T", "out"});
  JobResult result;
  json out;
  if (p.has("ansatz")) {
    result.inputs["ansatz"] = p.path("ansatz");
    const AnsatzSpec spec = ansatz_from_json(read_json(p.path("ansatz")));
    const auto T = p.get<std::uint64_t>("T", spec.max_n);
    json rows = json::array();
    std::vector<Point> points;
    for (double P : spec.P_grid) {
      const double L = ansatz_autoregressive_loss(spec, P, T);
      rows.push_back({{"P", P}, {"L_AR", L}, {"horizon", horizon(P, spec.exponents.beta, spec.exponents.c)}});
      if (L - spec.exponents.H_inf > 0) points.push_back({P, L - spec.exponents.H_inf, 1.0});
    }
    const auto regime = classify_regime(spec.exponents.gamma, spec.exponents.beta, spec.effective_delta());
    out = {{"alpha_pred", predict_alpha(spec.exponents.gamma, spec.exponents.beta)},
           {"regime", json_of(regime)},
           {"T", T},
           {"curve", rows}};
    try {
      out["alpha_fit"] = json_of(fit_power_law(points));
    } catch (const DataError& e) {
      out["alpha_fit"] = nullptr;
      out["alpha_fit_error"] = e.what();
    }
  } else {
    const double gamma = p.get<double>("gamma"), beta = p.get<double>("beta");
    const double c = p.get<double>("c", config.threshold_c);
    out = {{"gamma", gamma}, {"beta", beta}, {"c", c}, {"alpha_pred", predict_alpha(gamma, beta)}};
    if (p.has("delta")) out["regime"] = json_of(classify_regime(gamma, beta, p.get<double>("delta")));
    json rows = json::array();
    for (double P : p.get<std::vector<double>>("P", {}))
      rows.push_back({{"P", P}, {"horizon", horizon(P, beta, c)}});
    out["horizons"] = rows;
  }
  write_json(p.path("out"), out);
  result.outputs["out"] = p.path("out");
  result.summary = out;
  result.summary.erase("curve");
  return result;
}

JobResult job_collapse(const Params& p, const Config& config) {
  require_known(p, {"curves", "gamma", "beta", "scan", "out", "svg_out"});
  JobResult result;
  const LossCurveSet curves = load_curves(p, result);
  const RescaleOptions options{config.subtract_asymptote, config.H_inf};
  json out = json::object();
  std::optional<double> gamma, beta;
  if (p.has("gamma")) gamma = p.get<double>("gamma");
  if (p.has("beta")) beta = p.get<double>("beta");
  if (p.get<bool>("scan", false)) {
    const ScanResult scan = exponent_scan(curves, parse_grid(config.scan_gamma), parse_grid(config.scan_beta),
                                          config.bins, options, config.threads);
    out["scan"] = json_of(scan);
    if (!gamma) gamma = scan.best_gamma;
    if (!beta) beta = scan.best_beta;
  }
  if (!gamma || !beta) throw ConfigError("collapse: needs gamma and beta, or scan = true");
  const CollapseReport report = collapse(curves, *gamma, *beta, config.bins, options);
  out["collapse"] = json_of(report);
  write_json(p.path("out"), out);
  result.outputs["out"] = p.path("out");
  if (p.has("svg_out")) {
    write_collapse_svg(p.path("svg_out"), curves, *gamma, *beta, options);
    result.outputs["svg_out"] = p.path("svg_out");
  }
  result.summary = {{"gamma", *gamma}, {"beta", *beta}, {"dispersion", report.result.score}};
  return result;
}

JobResult job_synth(const Params& p, const Config& config) {
  require_known(p, {"spec", "ansatz", "tokens_out", "out"});
  JobResult result;
  if (p.has("spec")) {
    result.inputs["spec"] = p.path("spec");
    const SynthSpec spec = SynthSpec::load(p.path("spec").string());
    const TokenStream stream = generate(spec, config.threads);
    write_token_stream(p.path("tokens_out"), stream);
    result.outputs["tokens_out"] = p.path("tokens_out");
    result.summary = {{"tokens", stream.total_tokens()}, {"vocab_size", stream.vocab_size}};
  } else if (p.has("ansatz")) {
    result.inputs["ansatz"] = p.path("ansatz");
    const AnsatzSpec spec = ansatz_from_json(read_json(p.path("ansatz")));
    const LossCurveSet curves = synthesize_curves(spec, config.threads);
    write_loss_csv(p.path("out"), curves);
    result.outputs["out"] = p.path("out");
    result.summary = {{"curves", curves.curves.size()}, {"max_n", spec.max_n}};
  } else {
    throw ConfigError("synth: needs 'spec' (token corpus) or 'ansatz' (loss curves)");
  }
  return result;
}

JobResult job_report(const Params& p, const Config& config) {
  require_known(p, {"tokens", "corpus", "vocab_in", "curves", "out", "beta_svg_out", "collapse_svg_out"});
  JobResult result;
  std::optional<TokenStream> tokens;
  std::optional<LossCurveSet> curves;
  std::vector<StageGap> early;
  if (p.has("tokens") || p.has("corpus")) {
    try {
      tokens = load_tokens(p, config, result);
    } catch (const DataError& e) {
      early.push_back({"tokens", e.what()});
    }
  }
  if (p.has("curves")) {
    try {
      curves = load_curves(p, result);
    } catch (const DataError& e) {
      early.push_back({"curves", e.what()});
    }
  }
  ScalingReport report = run_full_report(tokens ? &*tokens : nullptr, curves ? &*curves : nullptr, config);
  report.gaps.insert(report.gaps.begin(), early.begin(), early.end());
  write_json(p.path("out"), json_of(report));
  result.outputs["out"] = p.path("out");
  if (p.has("beta_svg_out") && report.beta) {
    write_beta_svg(p.path("beta_svg_out"), *report.beta);
    result.outputs["beta_svg_out"] = p.path("beta_svg_out");
  }
  if (p.has("collapse_svg_out") && report.collapse) {
    write_collapse_svg(p.path("collapse_svg_out"), *curves, report.collapse->gamma_used, report.collapse->beta_used,
                       {config.subtract_asymptote, config.H_inf});
    result.outputs["collapse_svg_out"] = p.path("collapse_svg_out");
  }
  result.summary = {{"beta", report.beta ? json(report.beta->beta()) : json(nullptr)},
                    {"gamma", report.gamma ? json(report.gamma->gamma()) : json(nullptr)},
                    {"alpha_pred", optional_number(report.alpha_pred)},
                    {"alpha_fit", report.alpha_fit ? json(report.alpha_fit->exponent) : json(nullptr)},
                    {"regime", report.regime ? json(to_string(report.regime->regime)) : json(nullptr)},
                    {"gaps", report.gaps.size()}};
  return result;
}

}  // namespace

JobResult run_job(const std::string& verb, const json& params, const Config& config) {
  if (!params.is_object()) throw ConfigError(verb + ": parameters must be a JSON object");
  config.validate();
  const Params p{params, verb};
  if (verb == "tokenize") return job_tokenize(p, config);
  if (verb == "covstats") return job_covstats(p, config);
  if (verb == "fit") return job_fit(p, config);
  if (verb == "predict") return job_predict(p, config);
  if (verb == "collapse") return job_collapse(p, config);
  if (verb == "synth") return job_synth(p, config);
  if (verb == "report") return job_report(p, config);
  throw ConfigError("unknown verb '" + verb + "'");
}

RunManifest run_recorded(const std::string& verb, json params, const Config& config,
                         const std::optional<fs::path>& manifest_path) {
  for (auto& [key, value] : params.items())
    if ((kInputKeys.count(key) || is_output_key(key)) && value.is_string())
      value = fs::absolute(value.get<std::string>()).lexically_normal().string();
  RunManifest m;
  m.tool_version = LMSCALE_VERSION;
  m.module_versions = module_versions();
  m.verb = verb;
  m.params = params;
  m.config_ini = config.to_ini();
  m.config_hash = config.hash();
  m.started_at = utc_timestamp();
  const JobResult result = run_job(verb, params, config);
  m.finished_at = utc_timestamp();
  for (const auto& [key, path] : result.inputs) m.inputs[key] = digest_file(path);
  for (const auto& [key, path] : result.outputs) m.outputs[key] = digest_file(path);
  if (manifest_path) m.save(*manifest_path);
  return m;
}

SelftestResult selftest(const fs::path& manifest_path, std::optional<fs::path> workdir) {
  const RunManifest m = RunManifest::load(manifest_path);
  const Config config = Config::parse(m.config_ini);
  if (config.hash() != m.config_hash)
    throw ConfigError("selftest: config text does not match the recorded hash");
  SelftestResult r;
  for (const auto& [key, d] : m.inputs) {
    if (!fs::exists(d.path)) throw DataError("selftest: input " + key + " is missing: " + d.path);
    if (sha256_file(d.path) != d.sha256) r.mismatches.push_back("input " + key + " changed: " + d.path);
  }
  if (!r.mismatches.empty()) return r;

  if (!workdir) {
    std::random_device rd;
    workdir = fs::temp_directory_path() / ("lmscale-selftest-" + std::to_string(rd()));
  }
  fs::create_directories(*workdir);
  r.workdir = *workdir;
  json params = m.params;
  for (auto& [key, value] : params.items())
    if (is_output_key(key) && value.is_string())
      value = (*workdir / (key + "-" + fs::path(value.get<std::string>()).filename().string())).string();
  const JobResult rerun = run_job(m.verb, params, config);
  for (const auto& [key, d] : m.outputs) {
    const auto it = rerun.outputs.find(key);
    if (it == rerun.outputs.end()) {
      r.mismatches.push_back("output " + key + " was not produced");
      continue;
    }
    const std::string got = sha256_file(it->second);
    if (got != d.sha256) r.mismatches.push_back("output " + key + " differs: " + d.sha256 + " vs " + got);
  }
  for (const auto& [key, path] : rerun.outputs)
    if (!m.outputs.count(key)) r.mismatches.push_back("output " + key + " was not recorded");
  r.ok = r.mismatches.empty();
  return r;
}

}  // namespace lmscale
