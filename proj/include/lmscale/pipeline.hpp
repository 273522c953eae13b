#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lmscale/collapse.hpp"
#include "lmscale/config.hpp"
#include "lmscale/covstats.hpp"
#include "lmscale/fitkit.hpp"
#include "lmscale/loss_curves.hpp"
#include "lmscale/manifest.hpp"
#include "lmscale/theory.hpp"
#include "lmscale/token_stream.hpp"
#include "lmscale/tokenizer.hpp"

namespace lmscale {

struct TokenizedCorpus {
  Vocabulary vocab;
  TokenStream stream;
  std::uint64_t documents = 0;
};

/// Trains a vocabulary of config.vocab_size (unless `vocab` is given) and
/// encodes the corpus, reading documents in bounded batches.
TokenizedCorpus tokenize_corpus(const std::filesystem::path& corpus, const Config& config,
                                const Vocabulary* vocab = nullptr);

struct BetaMeasurement {
  std::vector<LagCovarianceSummary> lags;
  PowerLawFit fit;
  std::optional<BrokenPowerLawFit> broken;
  std::vector<std::uint32_t> masked_lags;
  bool low_r2 = false;
  std::size_t nonconverged = 0;
  std::vector<std::string> warnings;

  /// Short-lag exponent of the broken fit when enabled, else the plain fit.
  double beta() const { return broken ? broken->exponent_left : fit.exponent; }
};

/// Pair counts and norms for every configured lag.
std::vector<LagCovarianceSummary> measure_covariance(const TokenStream& stream, const Config& config);

/// Power-law fit of ||C(n)||_op over fit.beta_range. Throws ConvergenceError
/// when covstats.require_convergence is set and a lag did not converge.
BetaMeasurement fit_beta(const std::vector<LagCovarianceSummary>& lags, const Config& config);

BetaMeasurement run_measure_beta(const TokenStream& stream, const Config& config);

struct GammaMeasurement {
  std::string dataset;
  std::string arch;
  std::uint32_t T = 0;
  double P_max = 0.0;
  std::optional<double> P_second;
  /// max |L_n(P_max) - L_n(P_second)| over the fit window.
  std::optional<double> convergence_gap;
  PowerLawFit fit;
  std::vector<std::string> warnings;

  double gamma() const { return fit.exponent; }
};

/// Fits L_n - H_inf against n over fit.gamma_range on the largest-P curve.
GammaMeasurement run_measure_gamma(const LossCurveSet& curves, const Config& config);

struct DeltaMeasurement {
  std::uint32_t n = 0;
  std::optional<AsymptoteFit> fit;
  std::string error;
};

/// fit_asymptote of L_n(P) for every n, keeping P >= min_ratio * P*_n.
std::vector<DeltaMeasurement> measure_deltas(const LossCurveSet& curves, double beta, const Config& config);

struct StageGap {
  std::string stage;
  std::string message;
};

struct ScalingReport {
  std::optional<BetaMeasurement> beta;
  std::optional<GammaMeasurement> gamma;
  std::optional<double> alpha_pred;
  /// Fit of L_AR - H_inf against P over the curves sharing the gamma curve's
  /// (dataset, arch, T).
  std::optional<PowerLawFit> alpha_fit;
  std::vector<DeltaMeasurement> deltas;
  /// Median of the fitted delta_n.
  std::optional<double> delta;
  std::optional<RegimeClassification> regime;
  std::vector<DecompositionRow> decomposition;
  std::optional<CollapseReport> collapse;
  std::vector<StageGap> gaps;
  std::vector<std::string> warnings;
};

/// Every stage whose inputs are present; failures become labelled gaps.
ScalingReport run_full_report(const TokenStream* tokens, const LossCurveSet* curves, const Config& config);

/// H_n = H_inf + exp(log_prefactor) n^-gamma for n = 0..max_n, with H_0 = H_1.
std::vector<double> entropy_from_gamma(const GammaMeasurement& gamma, double H_inf, std::uint32_t max_n);

/// Reads an ansatz description: gamma, beta, and optionally H_inf, H_0, c,
/// A, delta, delta_table, shape, max_n, dataset, and either P_grid or
/// {P_min, P_max, points}.
AnsatzSpec ansatz_from_json(const nlohmann::json& j);

nlohmann::json json_of(const PowerLawFit& fit);
nlohmann::json json_of(const BrokenPowerLawFit& fit);
nlohmann::json json_of(const AsymptoteFit& fit);
nlohmann::json json_of(const BetaMeasurement& m);
nlohmann::json json_of(const GammaMeasurement& m);
nlohmann::json json_of(const DeltaMeasurement& m);
nlohmann::json json_of(const RegimeClassification& r);
nlohmann::json json_of(const DecompositionRow& row);
nlohmann::json json_of(const CollapseReport& report);
nlohmann::json json_of(const ScanResult& scan);
nlohmann::json json_of(const HorizonResult& horizon);
nlohmann::json json_of(const ScalingReport& report);

void write_beta_svg(const std::filesystem::path& path, const BetaMeasurement& m);
void write_collapse_svg(const std::filesystem::path& path, const LossCurveSet& curves, double gamma, double beta,
                        const RescaleOptions& options);

/// Writes `j` with two-space indentation and a trailing newline.
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

struct JobResult {
  nlohmann::json summary;
  std::map<std::string, std::filesystem::path> inputs;
  std::map<std::string, std::filesystem::path> outputs;
};

/// Runs one CLI verb. Parameter keys ending in "out" name output files; the
/// keys corpus, tokens, vocab_in, curves, spec, ansatz and in name inputs.
JobResult run_job(const std::string& verb, const nlohmann::json& params, const Config& config);

/// Runs a job with absolute paths and returns its manifest, saving it when
/// `manifest_path` is given.
RunManifest run_recorded(const std::string& verb, nlohmann::json params, const Config& config,
                         const std::optional<std::filesystem::path>& manifest_path = std::nullopt);

struct SelftestResult {
  bool ok = false;
  std::filesystem::path workdir;
  std::vector<std::string> mismatches;
};

/// Re-runs a manifest with outputs redirected into `workdir` (a fresh
/// temporary directory by default) and compares output digests.
SelftestResult selftest(const std::filesystem::path& manifest_path,
                        std::optional<std::filesystem::path> workdir = std::nullopt);

}  // namespace lmscale
