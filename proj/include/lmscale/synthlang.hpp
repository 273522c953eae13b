#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lmscale/token_stream.hpp"

namespace lmscale {

using Matrix = std::vector<std::vector<double>>;

enum class ProcessKind { iid, markov, powerlaw_copy };
enum class UnigramLaw { uniform, zipf };
enum class DocLengthLaw { single, fixed, geometric };

/// Generator settings. The emitted stream has vocab_size + 1 ids; the extra
/// id vocab_size is EOS. `length` counts every emitted id, EOS included.
struct SynthSpec {
  std::uint32_t vocab_size = 50;
  std::uint64_t length = 100000;
  std::uint64_t seed = 1;
  ProcessKind process = ProcessKind::iid;

  UnigramLaw unigram = UnigramLaw::uniform;
  double zipf_exponent = 1.0;

  /// Row-stochastic order-1 transition matrix (markov only).
  Matrix transition;

  /// powerlaw_copy: with probability copy_prob the token repeats the one
  /// `lag` positions back, lag ~ lag^-(1 + lag_exponent) on 1..max_lag; a
  /// copied token is replaced by a fresh draw with probability noise_prob.
  /// Lags reaching before the document start fall back to a fresh draw.
  double copy_prob = 0.5;
  double lag_exponent = 0.8;
  double noise_prob = 0.0;
  std::uint32_t max_lag = 1024;

  DocLengthLaw doc_law = DocLengthLaw::single;
  /// Document length for `fixed`, mean length for `geometric`.
  double doc_length = 1000.0;

  void validate() const;
  std::string to_json() const;
  static SynthSpec from_json(const std::string& json);
  static SynthSpec load(const std::string& path);
};

/// Deterministic given the SynthSpec; documents are generated in parallel from
/// per-document seeds.
TokenStream generate(const SynthSpec& spec, unsigned threads = 0);

/// Base unigram law over the vocab_size regular tokens.
std::vector<double> unigram_probabilities(const SynthSpec& spec);

/// Irreducible and aperiodic (the transition matrix is primitive).
bool is_ergodic(const Matrix& transition);

/// Solves pi T = pi with sum(pi) = 1.
std::vector<double> stationary_distribution(const Matrix& transition);

/// Exact C(n) = D_pi T^n - pi pi^T (row-major V x V) for each lag.
std::vector<std::vector<double>> analytic_covariance(const SynthSpec& spec, const std::vector<std::uint32_t>& lags);

/// T = lambda I + (1 - lambda) 1 pi^T: a chain whose second eigenvalue is
/// lambda and whose stationary law is pi.
Matrix lazy_mixing_chain(const std::vector<double>& pi, double lambda);

/// Stateless seed derivation used for per-document streams.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace lmscale
