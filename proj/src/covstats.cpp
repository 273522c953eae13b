#include "lmscale/covstats.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <absl/container/flat_hash_map.h>
#include <json.hpp>

#include "lmscale/error.hpp"
#include "lmscale/parallel.hpp"

namespace lmscale {

namespace {

std::uint64_t pair_key(TokenId a, TokenId b) { return (static_cast<std::uint64_t>(a) << 32) | b; }

void check_lags(std::span<const std::uint32_t> lags) {
  if (lags.empty()) throw ConfigError("at least one lag is required");
  for (auto l : lags)
    if (l == 0) throw ConfigError("lags must be positive");
}

}  // namespace

void CooccurrenceCounts::merge(const CooccurrenceCounts& other) {
  if (other.lag != lag || other.vocab_size != vocab_size)
    throw DataError("cannot merge counts with different lag or vocabulary size");
  std::vector<PairCount> out;
  out.reserve(pairs.size() + other.pairs.size());
  std::size_t i = 0, j = 0;
  auto less = [](const PairCount& a, const PairCount& b) {
    return a.left != b.left ? a.left < b.left : a.right < b.right;
  };
  while (i < pairs.size() || j < other.pairs.size()) {
    if (j == other.pairs.size() || (i < pairs.size() && less(pairs[i], other.pairs[j]))) {
      out.push_back(pairs[i++]);
    } else if (i == pairs.size() || less(other.pairs[j], pairs[i])) {
      out.push_back(other.pairs[j++]);
    } else {
      out.push_back({pairs[i].left, pairs[i].right, pairs[i].count + other.pairs[j].count});
      ++i;
      ++j;
    }
  }
  pairs = std::move(out);
  for (std::size_t k = 0; k < left_counts.size(); ++k) {
    left_counts[k] += other.left_counts[k];
    right_counts[k] += other.right_counts[k];
  }
  num_pairs += other.num_pairs;
}

std::vector<std::uint64_t> CooccurrenceCounts::dense() const {
  std::vector<std::uint64_t> out(static_cast<std::size_t>(vocab_size) * vocab_size, 0);
  for (const auto& pc : pairs) out[static_cast<std::size_t>(pc.left) * vocab_size + pc.right] = pc.count;
  return out;
}

struct PairCounter::Impl {
  std::uint32_t vocab_size;
  std::vector<std::uint32_t> lags;
  std::uint32_t max_lag;
  bool cross_documents;
  bool dense_mode;
  std::vector<std::vector<std::uint64_t>> dense;
  std::vector<absl::flat_hash_map<std::uint64_t, std::uint64_t>> sparse;
  std::vector<TokenId> ring;
  std::uint64_t doc_pos = 0;
  std::uint64_t seen = 0;

  void push(TokenId x) {
    const std::size_t slot = static_cast<std::size_t>(doc_pos % ring.size());
    for (std::size_t k = 0; k < lags.size(); ++k) {
      const std::uint32_t l = lags[k];
      if (l > doc_pos) continue;
      const TokenId left = ring[(doc_pos - l) % ring.size()];
      if (dense_mode)
        ++dense[k][static_cast<std::size_t>(left) * vocab_size + x];
      else
        ++sparse[k][pair_key(left, x)];
    }
    ring[slot] = x;
    ++doc_pos;
  }
};

PairCounter::PairCounter(std::uint32_t vocab_size, std::vector<std::uint32_t> lags,
                         const CountOptions& options)
    : impl_(std::make_unique<Impl>()) {
  check_lags(lags);
  if (vocab_size < 2) throw ConfigError("vocabulary size must be >= 2");
  impl_->vocab_size = vocab_size;
  impl_->max_lag = *std::max_element(lags.begin(), lags.end());
  impl_->lags = std::move(lags);
  impl_->cross_documents = options.cross_documents;
  const long double dense_bytes = static_cast<long double>(vocab_size) * vocab_size * 8.0L *
                                  static_cast<long double>(impl_->lags.size());
  impl_->dense_mode = dense_bytes <= static_cast<long double>(options.dense_budget_bytes);
  if (impl_->dense_mode)
    impl_->dense.assign(impl_->lags.size(),
                        std::vector<std::uint64_t>(static_cast<std::size_t>(vocab_size) * vocab_size, 0));
  else
    impl_->sparse.resize(impl_->lags.size());
  impl_->ring.assign(static_cast<std::size_t>(impl_->max_lag) + 1, 0);
}

PairCounter::~PairCounter() = default;
PairCounter::PairCounter(PairCounter&&) noexcept = default;
PairCounter& PairCounter::operator=(PairCounter&&) noexcept = default;

void PairCounter::feed(std::span<const TokenId> ids) {
  Impl& s = *impl_;
  const TokenId eos = s.vocab_size - 1;
  for (TokenId x : ids) {
    ++s.seen;
    if (x >= s.vocab_size)
      throw DataError("token id " + std::to_string(x) + " exceeds vocabulary size " +
                      std::to_string(s.vocab_size));
    if (x == eos) {
      if (!s.cross_documents) s.doc_pos = 0;
      continue;
    }
    s.push(x);
  }
}

std::uint64_t PairCounter::tokens_seen() const { return impl_->seen; }

std::vector<CooccurrenceCounts> PairCounter::snapshot() const {
  const Impl& s = *impl_;
  std::vector<CooccurrenceCounts> out(s.lags.size());
  for (std::size_t k = 0; k < s.lags.size(); ++k) {
    auto& c = out[k];
    c.lag = s.lags[k];
    c.vocab_size = s.vocab_size;
    c.left_counts.assign(s.vocab_size, 0);
    c.right_counts.assign(s.vocab_size, 0);
    if (s.dense_mode) {
      const auto& table = s.dense[k];
      for (TokenId a = 0; a < s.vocab_size; ++a)
        for (TokenId b = 0; b < s.vocab_size; ++b) {
          const std::uint64_t n = table[static_cast<std::size_t>(a) * s.vocab_size + b];
          if (n) c.pairs.push_back({a, b, n});
        }
    } else {
      c.pairs.reserve(s.sparse[k].size());
      for (const auto& [key, n] : s.sparse[k])
        c.pairs.push_back({static_cast<TokenId>(key >> 32), static_cast<TokenId>(key), n});
      std::sort(c.pairs.begin(), c.pairs.end(), [](const PairCount& a, const PairCount& b) {
        return a.left != b.left ? a.left < b.left : a.right < b.right;
      });
    }
    for (const auto& pc : c.pairs) {
      c.left_counts[pc.left] += pc.count;
      c.right_counts[pc.right] += pc.count;
      c.num_pairs += pc.count;
    }
  }
  return out;
}

std::vector<CooccurrenceCounts> count_pairs(const TokenStream& stream,
                                            std::span<const std::uint32_t> lags,
                                            const CountOptions& options) {
  check_lags(lags);
  if (stream.ids.empty()) throw DataError("count_pairs: token stream is empty");
  const std::vector<std::uint32_t> lag_list(lags.begin(), lags.end());
  const TokenId eos = stream.eos();

  // Shard boundaries sit just after EOS tokens so no document is split.
  unsigned shards = options.cross_documents ? 1u : resolve_threads(options.threads);
  std::vector<std::size_t> cuts{0};
  if (shards > 1) {
    const std::size_t target = stream.ids.size() / shards;
    for (unsigned s = 1; s < shards; ++s) {
      std::size_t pos = std::max(cuts.back(), s * target);
      while (pos < stream.ids.size() && stream.ids[pos] != eos) ++pos;
      if (pos >= stream.ids.size()) break;
      cuts.push_back(pos + 1);
    }
  }
  cuts.push_back(stream.ids.size());
  shards = static_cast<unsigned>(cuts.size() - 1);

  CountOptions shard_options = options;
  shard_options.dense_budget_bytes = options.dense_budget_bytes / std::max(1u, shards);
  std::vector<std::vector<CooccurrenceCounts>> parts(shards);
  parallel_for(shards, [&](std::size_t s) {
    PairCounter counter(stream.vocab_size, lag_list, shard_options);
    counter.feed(std::span<const TokenId>(stream.ids).subspan(cuts[s], cuts[s + 1] - cuts[s]));
    parts[s] = counter.snapshot();
  }, shards);

  auto result = std::move(parts[0]);
  for (unsigned s = 1; s < shards; ++s)
    for (std::size_t k = 0; k < result.size(); ++k) result[k].merge(parts[s][k]);
  return result;
}

std::vector<CooccurrenceCounts> count_pairs_file(const std::filesystem::path& tokens,
                                                 std::span<const std::uint32_t> lags,
                                                 const CountOptions& options) {
  TokenStreamReader reader(tokens);
  if (reader.header().total_tokens == 0) throw DataError("count_pairs: token stream is empty");
  PairCounter counter(reader.header().vocab_size, std::vector<std::uint32_t>(lags.begin(), lags.end()),
                      options);
  std::vector<TokenId> buffer(1 << 20);
  for (std::size_t n; (n = reader.read(buffer)) > 0;)
    counter.feed(std::span<const TokenId>(buffer).first(n));
  return counter.snapshot();
}

CovarianceOperator::CovarianceOperator(const CooccurrenceCounts& counts) {
  const std::size_t V = counts.vocab_size;
  p_.assign(V, 0.0);
  q_.assign(V, 0.0);
  row_start_.assign(V + 1, 0);
  if (counts.num_pairs == 0) return;
  const double N = static_cast<double>(counts.num_pairs);
  for (std::size_t i = 0; i < V; ++i) {
    p_[i] = static_cast<double>(counts.left_counts[i]) / N;
    q_[i] = static_cast<double>(counts.right_counts[i]) / N;
  }
  col_.reserve(counts.pairs.size());
  val_.reserve(counts.pairs.size());
  for (const auto& pc : counts.pairs) {
    ++row_start_[pc.left + 1];
    col_.push_back(pc.right);
    val_.push_back(static_cast<double>(pc.count) / N);
  }
  for (std::size_t i = 0; i < V; ++i) row_start_[i + 1] += row_start_[i];
}

void CovarianceOperator::apply(std::span<const double> in, std::span<double> out) const {
  double qv = 0.0;
  for (std::size_t j = 0; j < q_.size(); ++j) qv += q_[j] * in[j];
  for (std::size_t i = 0; i < p_.size(); ++i) {
    double s = 0.0;
    for (std::uint64_t k = row_start_[i]; k < row_start_[i + 1]; ++k) s += val_[k] * in[col_[k]];
    out[i] = s - p_[i] * qv;
  }
}

void CovarianceOperator::apply_transpose(std::span<const double> in, std::span<double> out) const {
  double pu = 0.0;
  for (std::size_t i = 0; i < p_.size(); ++i) pu += p_[i] * in[i];
  for (std::size_t j = 0; j < q_.size(); ++j) out[j] = -q_[j] * pu;
  for (std::size_t i = 0; i < p_.size(); ++i) {
    const double u = in[i];
    if (u == 0.0) continue;
    for (std::uint64_t k = row_start_[i]; k < row_start_[i + 1]; ++k) out[col_[k]] += val_[k] * u;
  }
}

double CovarianceOperator::entry(TokenId mu, TokenId nu) const {
  double j = 0.0;
  const auto begin = col_.begin() + static_cast<std::ptrdiff_t>(row_start_[mu]);
  const auto end = col_.begin() + static_cast<std::ptrdiff_t>(row_start_[mu + 1]);
  const auto it = std::lower_bound(begin, end, nu);
  if (it != end && *it == nu) j = val_[static_cast<std::size_t>(it - col_.begin())];
  return j - p_[mu] * q_[nu];
}

std::vector<double> CovarianceOperator::dense() const {
  const std::size_t V = p_.size();
  std::vector<double> out(V * V);
  for (std::size_t i = 0; i < V; ++i)
    for (std::size_t j = 0; j < V; ++j) out[i * V + j] = -p_[i] * q_[j];
  for (std::size_t i = 0; i < V; ++i)
    for (std::uint64_t k = row_start_[i]; k < row_start_[i + 1]; ++k) out[i * V + col_[k]] += val_[k];
  return out;
}

DenseOperator::DenseOperator(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows * cols) throw ConfigError("dense operator: shape mismatch");
}

void DenseOperator::apply(std::span<const double> in, std::span<double> out) const {
  for (std::size_t r = 0; r < rows_; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols_; ++c) s += values_[r * cols_ + c] * in[c];
    out[r] = s;
  }
}

void DenseOperator::apply_transpose(std::span<const double> in, std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) out[c] += values_[r * cols_ + c] * in[r];
}

double frobenius_norm(const CooccurrenceCounts& counts) {
  if (counts.num_pairs == 0) return 0.0;
  const std::size_t V = counts.vocab_size;
  const long double N = static_cast<long double>(counts.num_pairs);
  std::vector<long double> p(V), q(V);
  long double q2 = 0;
  std::size_t q_support = 0;
  for (std::size_t i = 0; i < V; ++i) {
    p[i] = counts.left_counts[i] / N;
    q[i] = counts.right_counts[i] / N;
    q2 += q[i] * q[i];
    if (counts.right_counts[i]) ++q_support;
  }
  long double total = 0;
  std::size_t k = 0;
  while (k < counts.pairs.size()) {
    const TokenId mu = counts.pairs[k].left;
    long double row_q2 = 0;
    std::size_t row_len = 0;
    for (; k < counts.pairs.size() && counts.pairs[k].left == mu; ++k, ++row_len) {
      const auto& pc = counts.pairs[k];
      const long double d = pc.count / N - p[mu] * q[pc.right];
      total += d * d;
      row_q2 += q[pc.right] * q[pc.right];
    }
    // Entries outside the row support equal -p_mu q_nu.
    if (row_len < q_support) total += p[mu] * p[mu] * (q2 - row_q2);
  }
  // Rows without any pair have p_mu = 0 since marginals come from the pairs.
  return static_cast<double>(std::sqrt(std::max<long double>(0, total)));
}

std::vector<LagCovarianceSummary> summarize(const std::vector<CooccurrenceCounts>& counts,
                                            const PowerIterationOptions& options, unsigned threads) {
  std::vector<LagCovarianceSummary> rows(counts.size());
  parallel_for(counts.size(), [&](std::size_t k) {
    const auto& c = counts[k];
    auto& row = rows[k];
    row.lag = c.lag;
    row.num_pairs = c.num_pairs;
    row.empty = c.empty();
    if (row.empty) return;
    const CovarianceOperator op(c);
    const auto norm = operator_norm(op, options);
    row.op_norm = norm.value;
    row.iters = norm.iterations;
    row.residual = norm.residual;
    row.converged = norm.converged;
    row.frob_norm = frobenius_norm(c);
  }, threads);
  return rows;
}

std::string summary_to_json(const LagCovarianceSummary& row) {
  nlohmann::ordered_json j;
  j["lag"] = row.lag;
  j["op_norm"] = row.op_norm;
  j["frob_norm"] = row.frob_norm;
  j["num_pairs"] = row.num_pairs;
  j["iters"] = row.iters;
  j["residual"] = row.residual;
  j["converged"] = row.converged;
  j["empty"] = row.empty;
  return j.dump();
}

void write_summary_jsonl(const std::filesystem::path& path,
                         const std::vector<LagCovarianceSummary>& rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& r : rows) out << summary_to_json(r) << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

std::vector<LagCovarianceSummary> read_summary_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<LagCovarianceSummary> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      LagCovarianceSummary r;
      r.lag = j.at("lag").get<std::uint32_t>();
      r.op_norm = j.at("op_norm").get<double>();
      r.frob_norm = j.value("frob_norm", 0.0);
      r.num_pairs = j.value("num_pairs", std::uint64_t{0});
      r.iters = j.value("iters", 0u);
      r.residual = j.value("residual", 0.0);
      r.converged = j.value("converged", true);
      r.empty = j.value("empty", r.num_pairs == 0 && r.op_norm == 0.0);
      rows.push_back(r);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

HorizonResult empirical_horizon(const TokenStream& stream, std::vector<std::uint64_t> prefix_sizes,
                                std::vector<std::uint32_t> lags, const HorizonOptions& options) {
  check_lags(lags);
  if (prefix_sizes.empty()) throw ConfigError("empirical_horizon: no prefix sizes given");
  if (prefix_sizes.front() == 0) throw ConfigError("empirical_horizon: prefix sizes must be positive");
  if (!std::is_sorted(prefix_sizes.begin(), prefix_sizes.end()))
    throw ConfigError("empirical_horizon: prefix sizes must be sorted");
  if (prefix_sizes.back() > stream.ids.size())
    throw ConfigError("empirical_horizon: prefix " + std::to_string(prefix_sizes.back()) +
                      " exceeds the stream length " + std::to_string(stream.ids.size()));
  if (!(options.tol_ratio > 0)) throw ConfigError("empirical_horizon: tol_ratio must be positive");
  std::sort(lags.begin(), lags.end());
  lags.erase(std::unique(lags.begin(), lags.end()), lags.end());

  HorizonResult result;
  result.lags = lags;
  CountOptions count = options.count;
  count.threads = 1;
  const auto full_counts = count_pairs(stream, lags, count);
  std::vector<CovarianceOperator> full;
  full.reserve(lags.size());
  for (const auto& c : full_counts) full.emplace_back(c);
  result.full_op_norm.resize(lags.size());
  parallel_for(lags.size(), [&](std::size_t k) {
    result.full_op_norm[k] = full_counts[k].empty() ? 0.0 : operator_norm(full[k], options.power).value;
  });
  result.degenerate = std::all_of(result.full_op_norm.begin(), result.full_op_norm.end(),
                                  [](double v) { return v == 0.0; });

  PairCounter counter(stream.vocab_size, lags, count);
  std::uint64_t fed = 0;
  std::uint32_t running = 0;
  for (const std::uint64_t P : prefix_sizes) {
    counter.feed(std::span<const TokenId>(stream.ids).subspan(fed, P - fed));
    fed = P;
    const auto prefix_counts = counter.snapshot();
    HorizonPoint point;
    point.prefix = P;
    point.relative_error.assign(lags.size(), std::numeric_limits<double>::quiet_NaN());
    std::vector<double> diff(lags.size(), 0.0);
    parallel_for(lags.size(), [&](std::size_t k) {
      if (prefix_counts[k].empty() || full_counts[k].empty()) return;
      const CovarianceOperator estimate(prefix_counts[k]);
      const DifferenceOperator<CovarianceOperator, CovarianceOperator> delta(estimate, full[k]);
      diff[k] = operator_norm(delta, options.power).value;
      point.relative_error[k] =
          result.full_op_norm[k] > 0 ? diff[k] / result.full_op_norm[k]
                                     : (diff[k] == 0 ? 0.0 : std::numeric_limits<double>::infinity());
    });
    for (std::size_t k = 0; k < lags.size(); ++k) {
      if (prefix_counts[k].empty() || full_counts[k].empty()) {
        point.missing_lags.push_back(lags[k]);
        continue;
      }
      if (!result.degenerate && diff[k] <= options.tol_ratio * result.full_op_norm[k])
        point.raw = lags[k];
    }
    point.dipped = point.raw < running;
    running = std::max(running, point.raw);
    point.horizon = running;
    result.points.push_back(std::move(point));
  }
  return result;
}

std::vector<std::uint32_t> parse_lag_list(const std::string& text) {
  std::vector<std::uint32_t> lags;
  std::stringstream ss(text);
  std::string item;
  auto parse_one = [&](const std::string& s) -> std::uint32_t {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(s, &used);
      if (used != s.size() || v <= 0 || v > 0xffffffffLL) throw std::invalid_argument(s);
      return static_cast<std::uint32_t>(v);
    } catch (const std::exception&) {
      throw ConfigError("invalid lag '" + s + "' in '" + text + "'");
    }
  };
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto dots = item.find("..");
    if (dots == std::string::npos) {
      lags.push_back(parse_one(item));
    } else {
      const std::uint32_t a = parse_one(item.substr(0, dots));
      const std::uint32_t b = parse_one(item.substr(dots + 2));
      if (b < a) throw ConfigError("empty lag range '" + item + "'");
      for (std::uint32_t l = a; l <= b; ++l) lags.push_back(l);
    }
  }
  if (lags.empty()) throw ConfigError("no lags in '" + text + "'");
  std::sort(lags.begin(), lags.end());
  lags.erase(std::unique(lags.begin(), lags.end()), lags.end());
  return lags;
}

}  // namespace lmscale
