#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lmscale/token_stream.hpp"

namespace lmscale {

struct PairCount {
  TokenId left = 0;
  TokenId right = 0;
  std::uint64_t count = 0;
  bool operator==(const PairCount&) const = default;
};

/// Exact co-occurrence counts of (x_i, x_{i+lag}) over valid positions.
/// Marginals are taken over the same valid positions, so sum(left_counts) ==
/// sum(right_counts) == num_pairs.
struct CooccurrenceCounts {
  std::uint32_t lag = 0;
  std::uint32_t vocab_size = 0;
  std::vector<PairCount> pairs;  // sorted by (left, right), counts > 0
  std::vector<std::uint64_t> left_counts;
  std::vector<std::uint64_t> right_counts;
  std::uint64_t num_pairs = 0;

  /// No position pair fits inside any document at this lag.
  bool empty() const { return num_pairs == 0; }

  /// Exact addition of counts from a disjoint shard with the same lag and V.
  void merge(const CooccurrenceCounts& other);

  /// Row-major V x V joint counts (testing and small V only).
  std::vector<std::uint64_t> dense() const;

  bool operator==(const CooccurrenceCounts&) const = default;
};

struct CountOptions {
  /// Let pairs span document boundaries (EOS tokens are still never counted).
  bool cross_documents = false;
  /// Per-lag accumulators use a dense V x V table while the total stays
  /// under this many bytes, and hash maps otherwise.
  std::size_t dense_budget_bytes = std::size_t{256} << 20;
  unsigned threads = 0;
};

/// Single-pass streaming counter for any set of lags. Keeps a ring buffer of
/// the last max(lags) tokens of the current document.
class PairCounter {
 public:
  PairCounter(std::uint32_t vocab_size, std::vector<std::uint32_t> lags,
              const CountOptions& options = {});
  ~PairCounter();
  PairCounter(PairCounter&&) noexcept;
  PairCounter& operator=(PairCounter&&) noexcept;

  /// Consumes ids in stream order; the EOS id (vocab_size - 1) ends a document.
  void feed(std::span<const TokenId> ids);
  std::uint64_t tokens_seen() const;

  /// Counts accumulated so far, one entry per lag in the constructor order.
  std::vector<CooccurrenceCounts> snapshot() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Counts every lag in one pass. With several threads the stream is split at
/// EOS positions and the shard counts are merged.
std::vector<CooccurrenceCounts> count_pairs(const TokenStream& stream,
                                            std::span<const std::uint32_t> lags,
                                            const CountOptions& options = {});

/// Same as count_pairs, streaming the ids from a TokenStream file.
std::vector<CooccurrenceCounts> count_pairs_file(const std::filesystem::path& tokens,
                                                 std::span<const std::uint32_t> lags,
                                                 const CountOptions& options = {});

/// Any real matrix available only through products with a vector.
template <class Op>
concept LinearOperator = requires(const Op& op, std::span<const double> in, std::span<double> out) {
  { op.rows() } -> std::convertible_to<std::size_t>;
  { op.cols() } -> std::convertible_to<std::size_t>;
  op.apply(in, out);            // out = A in        (out.size() == rows)
  op.apply_transpose(in, out);  // out = A^T in      (out.size() == cols)
};

/// C(n) = J / N - p q^T held as a CSR joint-count matrix plus the two
/// marginal frequency vectors; never densified.
class CovarianceOperator {
 public:
  explicit CovarianceOperator(const CooccurrenceCounts& counts);

  std::size_t rows() const { return p_.size(); }
  std::size_t cols() const { return q_.size(); }
  void apply(std::span<const double> in, std::span<double> out) const;
  void apply_transpose(std::span<const double> in, std::span<double> out) const;

  /// Single entry C_{mu,nu}.
  double entry(TokenId mu, TokenId nu) const;
  std::vector<double> dense() const;

  const std::vector<double>& p() const { return p_; }
  const std::vector<double>& q() const { return q_; }

 private:
  std::vector<std::uint64_t> row_start_;
  std::vector<TokenId> col_;
  std::vector<double> val_;
  std::vector<double> p_;
  std::vector<double> q_;
};

/// Row-major dense matrix.
class DenseOperator {
 public:
  DenseOperator(std::size_t rows, std::size_t cols, std::vector<double> values);
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  void apply(std::span<const double> in, std::span<double> out) const;
  void apply_transpose(std::span<const double> in, std::span<double> out) const;
  double at(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> values_;
};

/// A - B for two operators of equal shape.
template <LinearOperator A, LinearOperator B>
class DifferenceOperator {
 public:
  DifferenceOperator(const A& a, const B& b) : a_(&a), b_(&b) {}
  std::size_t rows() const { return a_->rows(); }
  std::size_t cols() const { return a_->cols(); }
  void apply(std::span<const double> in, std::span<double> out) const {
    scratch_.resize(out.size());
    a_->apply(in, out);
    b_->apply(in, scratch_);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= scratch_[i];
  }
  void apply_transpose(std::span<const double> in, std::span<double> out) const {
    scratch_.resize(out.size());
    a_->apply_transpose(in, out);
    b_->apply_transpose(in, scratch_);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= scratch_[i];
  }

 private:
  const A* a_;
  const B* b_;
  mutable std::vector<double> scratch_;
};

struct PowerIterationOptions {
  double tol = 1e-8;  // relative residual |A^T A v - lambda v| / lambda
  std::uint32_t max_iters = 10000;
  std::uint64_t seed = 0x5eed;
};

struct OperatorNormResult {
  double value = 0.0;
  std::uint32_t iterations = 0;
  double residual = 0.0;
  bool converged = false;
};

/// Largest singular value by power iteration on A^T A from a seeded random
/// start. A zero operator yields exactly 0. Non-convergence is reported
/// through `converged` and `residual`, never by throwing.
template <LinearOperator Op>
OperatorNormResult operator_norm(const Op& op, const PowerIterationOptions& opt = {}) {
  const std::size_t n = op.cols();
  OperatorNormResult result;
  if (n == 0 || op.rows() == 0) {
    result.converged = true;
    return result;
  }
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> normal;
  std::vector<double> v(n), av(op.rows()), w(n);
  auto normalize = [](std::vector<double>& x) {
    long double s = 0;
    for (double e : x) s += static_cast<long double>(e) * e;
    const double norm = std::sqrt(static_cast<double>(s));
    if (norm > 0)
      for (double& e : x) e /= norm;
    return norm;
  };
  for (double& e : v) e = normal(rng);
  normalize(v);
  double lambda = 0.0;
  for (std::uint32_t it = 1; it <= opt.max_iters; ++it) {
    op.apply(v, av);
    op.apply_transpose(av, w);
    long double rq = 0;
    for (std::size_t i = 0; i < n; ++i) rq += static_cast<long double>(v[i]) * w[i];
    lambda = static_cast<double>(rq);
    result.iterations = it;
    if (!(lambda > 0.0)) {
      // A^T A v = 0 from a random start: the operator vanishes.
      bool all_zero = true;
      for (double e : w) all_zero = all_zero && e == 0.0;
      if (all_zero) {
        result.value = 0.0;
        result.residual = 0.0;
        result.converged = true;
        return result;
      }
    }
    long double r = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const long double d = static_cast<long double>(w[i]) - static_cast<long double>(lambda) * v[i];
      r += d * d;
    }
    result.residual = lambda > 0 ? std::sqrt(static_cast<double>(r)) / lambda : INFINITY;
    v = w;
    normalize(v);
    if (result.residual < opt.tol) {
      result.converged = true;
      break;
    }
  }
  result.value = std::sqrt(std::max(0.0, lambda));
  return result;
}

/// Exact ||C(n)||_F: sum over the joint-count support plus the rank-one
/// complement, accumulated in extended precision.
double frobenius_norm(const CooccurrenceCounts& counts);

struct LagCovarianceSummary {
  std::uint32_t lag = 0;
  double op_norm = 0.0;
  double frob_norm = 0.0;
  std::uint64_t num_pairs = 0;
  std::uint32_t iters = 0;
  double residual = 0.0;
  bool converged = true;
  bool empty = false;
};

/// Norms for every lag, computed in parallel over lags.
std::vector<LagCovarianceSummary> summarize(const std::vector<CooccurrenceCounts>& counts,
                                            const PowerIterationOptions& options = {},
                                            unsigned threads = 0);

/// JSON Lines: one {lag, op_norm, frob_norm, num_pairs, iters, residual}
/// record per lag (plus converged/empty flags).
void write_summary_jsonl(const std::filesystem::path& path,
                         const std::vector<LagCovarianceSummary>& rows);
std::vector<LagCovarianceSummary> read_summary_jsonl(const std::filesystem::path& path);
std::string summary_to_json(const LagCovarianceSummary& row);

struct HorizonOptions {
  double tol_ratio = 0.5;
  PowerIterationOptions power;
  CountOptions count;
};

struct HorizonPoint {
  std::uint64_t prefix = 0;
  /// Largest lag whose prefix estimate is within tolerance (0 if none).
  std::uint32_t raw = 0;
  /// Running maximum of `raw` over smaller prefixes.
  std::uint32_t horizon = 0;
  /// Set when raw < horizon, i.e. the raw estimate dipped.
  bool dipped = false;
  /// Lags without any pair inside this prefix.
  std::vector<std::uint32_t> missing_lags;
  /// ||C_P(n) - C(n)||_op / ||C(n)||_op per lag (NaN for missing cells).
  std::vector<double> relative_error;
};

struct HorizonResult {
  std::vector<std::uint32_t> lags;
  std::vector<double> full_op_norm;
  std::vector<HorizonPoint> points;
  /// Every full-corpus norm is zero, so no horizon is defined.
  bool degenerate = false;
};

/// For each prefix size P, the largest lag n with
/// ||C_P(n) - C(n)||_op <= tol_ratio * ||C(n)||_op, where C is estimated from
/// the whole stream and C_P from its first P tokens.
HorizonResult empirical_horizon(const TokenStream& stream, std::vector<std::uint64_t> prefix_sizes,
                                std::vector<std::uint32_t> lags,
                                const HorizonOptions& options = {});

/// Parses "1..512", "1,2,4" or mixtures such as "1..8,16,32".
std::vector<std::uint32_t> parse_lag_list(const std::string& text);

}  // namespace lmscale
