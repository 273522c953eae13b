#include <doctest.h>

#include <cmath>
#include <random>

#include "lmscale/covstats.hpp"
#include "lmscale/error.hpp"
#include "oracles.hpp"
#include "scratch.hpp"

using namespace lmscale;

namespace {

TokenStream random_stream(std::mt19937_64& rng, std::uint32_t V, std::size_t length, double eos_rate) {
  TokenStream s;
  s.vocab_size = V;
  std::uniform_real_distribution<double> u(0, 1);
  // Skewed draws so the covariance is not trivially flat.
  for (std::size_t i = 0; i < length; ++i) {
    if (u(rng) < eos_rate) {
      s.ids.push_back(V - 1);
      continue;
    }
    const double r = u(rng);
    TokenId x = static_cast<TokenId>(r * r * (V - 1));
    if (i > 0 && s.ids.back() != V - 1 && u(rng) < 0.3) x = s.ids.back();
    s.ids.push_back(std::min<TokenId>(x, V - 2));
  }
  return s;
}

void check_against_oracle(const CooccurrenceCounts& got, const oracle::DenseCounts& want) {
  CHECK(got.lag == want.lag);
  CHECK(got.num_pairs == want.total);
  CHECK(got.left_counts == want.left);
  CHECK(got.right_counts == want.right);
  CHECK(got.dense() == want.joint);
}

}  // namespace

TEST_CASE("streaming counts equal brute force, within and across documents") {
  std::mt19937_64 rng(1);
  const std::vector<std::uint32_t> lags = {1, 2, 3, 5, 8, 13, 40};
  for (int trial = 0; trial < 8; ++trial) {
    const auto s = random_stream(rng, 30, 3000, 0.01);
    for (bool cross : {false, true}) {
      CountOptions opt;
      opt.cross_documents = cross;
      const auto want = oracle::brute_force_counts(s.ids, s.vocab_size, lags, cross);
      const auto got = count_pairs(s, lags, opt);
      REQUIRE(got.size() == lags.size());
      for (std::size_t k = 0; k < lags.size(); ++k) check_against_oracle(got[k], want[k]);
    }
  }
}

TEST_CASE("sparse and dense accumulators, shards and chunked feeding agree") {
  std::mt19937_64 rng(2);
  const auto s = random_stream(rng, 60, 20000, 0.005);
  const std::vector<std::uint32_t> lags = {1, 4, 16, 64};
  CountOptions dense_opt;
  CountOptions sparse_opt;
  sparse_opt.dense_budget_bytes = 0;
  CountOptions sharded = sparse_opt;
  sharded.threads = 4;
  const auto a = count_pairs(s, lags, dense_opt);
  CHECK(a == count_pairs(s, lags, sparse_opt));
  CHECK(a == count_pairs(s, lags, sharded));

  PairCounter counter(s.vocab_size, lags);
  for (std::size_t i = 0; i < s.ids.size(); i += 777)
    counter.feed(std::span<const TokenId>(s.ids).subspan(i, std::min<std::size_t>(777, s.ids.size() - i)));
  CHECK(counter.tokens_seen() == s.ids.size());
  CHECK(counter.snapshot() == a);

  ScratchDir dir("cov");
  write_token_stream(dir / "s.bin", s);
  CHECK(count_pairs_file(dir / "s.bin", lags) == a);
}

TEST_CASE("lags longer than every document yield empty counts") {
  TokenStream s;
  s.vocab_size = 4;
  s.ids = {0, 1, 2, 3, 0, 1, 3, 2};
  const std::vector<std::uint32_t> lags = {1, 3, 10};
  const auto c = count_pairs(s, lags);
  CHECK(c[0].num_pairs == 3);
  CHECK(c[1].num_pairs == 0);
  CHECK(c[1].empty());
  CHECK(c[2].empty());
  CHECK(operator_norm(CovarianceOperator(c[2])).value == 0.0);
  CHECK(frobenius_norm(c[2]) == 0.0);
}

TEST_CASE("covariance operator matches the dense oracle entrywise and in both norms") {
  std::mt19937_64 rng(3);
  const auto s = random_stream(rng, 40, 20000, 0.002);
  const std::vector<std::uint32_t> lags = {1, 2, 7, 30};
  const auto counts = count_pairs(s, lags);
  const auto want = oracle::brute_force_counts(s.ids, s.vocab_size, lags);
  for (std::size_t k = 0; k < lags.size(); ++k) {
    const CovarianceOperator op(counts[k]);
    const auto dense = oracle::dense_covariance(want[k]);
    const auto mine = op.dense();
    for (std::size_t i = 0; i < dense.size(); ++i) CHECK(mine[i] == doctest::Approx(dense[i]).epsilon(1e-12));
    CHECK(op.entry(3, 5) == doctest::Approx(dense[3 * 40 + 5]).epsilon(1e-12));
    const double sigma = oracle::jacobi_top_singular_value(dense, 40, 40);
    CHECK(std::fabs(operator_norm(op).value - sigma) <= 1e-9 * sigma);
    const double frob = oracle::frobenius(dense);
    CHECK(std::fabs(frobenius_norm(counts[k]) - frob) <= 1e-9 * frob);
  }
}

TEST_CASE("power iteration on small dense matrices") {
  SUBCASE("diagonal") {
    DenseOperator d(3, 3, {1, 0, 0, 0, -5, 0, 0, 0, 2});
    const auto r = operator_norm(d);
    CHECK(r.converged);
    CHECK(r.value == doctest::Approx(5.0).epsilon(1e-12));
  }
  SUBCASE("rectangular rank one") {
    DenseOperator d(2, 3, {1, 2, 2, 2, 4, 4});
    CHECK(operator_norm(d).value == doctest::Approx(std::sqrt(5.0) * 3.0).epsilon(1e-12));
  }
  SUBCASE("zero operator returns exactly zero") {
    DenseOperator z(4, 4, std::vector<double>(16, 0.0));
    const auto r = operator_norm(z);
    CHECK(r.value == 0.0);
    CHECK(r.converged);
  }
  SUBCASE("difference operator") {
    DenseOperator a(2, 2, {3, 0, 0, 1});
    DenseOperator b(2, 2, {1, 0, 0, 1});
    CHECK(operator_norm(DifferenceOperator(a, b)).value == doctest::Approx(2.0).epsilon(1e-12));
  }
  SUBCASE("iteration cap is reported, not thrown") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g;
    std::vector<double> v(400);
    for (auto& x : v) x = g(rng);
    PowerIterationOptions opt;
    opt.max_iters = 2;
    opt.tol = 1e-15;
    const auto r = operator_norm(DenseOperator(20, 20, v), opt);
    CHECK_FALSE(r.converged);
    CHECK(r.iterations == 2);
  }
}

TEST_CASE("power iteration agrees with two independent SVDs on random matrices") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> v(30 * 30);
    for (auto& x : v) x = g(rng);
    const double jac = oracle::jacobi_top_singular_value(v, 30, 30);
    const double eig = oracle::eigen_top_singular_value(v, 30, 30);
    CHECK(jac == doctest::Approx(eig).epsilon(1e-12));
    CHECK(operator_norm(DenseOperator(30, 30, v)).value == doctest::Approx(jac).epsilon(1e-9));
  }
}

TEST_CASE("summaries and their JSON Lines file") {
  std::mt19937_64 rng(7);
  const auto s = random_stream(rng, 20, 5000, 0.0);
  const std::vector<std::uint32_t> lags = {1, 2, 3};
  const auto rows = summarize(count_pairs(s, lags));
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].lag == 1);
  CHECK(rows[0].op_norm > 0);
  CHECK(rows[0].op_norm <= rows[0].frob_norm * (1 + 1e-12));
  ScratchDir dir("sum");
  write_summary_jsonl(dir / "s.jsonl", rows);
  const auto back = read_summary_jsonl(dir / "s.jsonl");
  REQUIRE(back.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(back[k].lag == rows[k].lag);
    CHECK(back[k].op_norm == rows[k].op_norm);
    CHECK(back[k].frob_norm == rows[k].frob_norm);
    CHECK(back[k].num_pairs == rows[k].num_pairs);
  }
  write_text(dir / "bad.jsonl", "{\"lag\": 1}\nnot json\n");
  CHECK_THROWS_AS(read_summary_jsonl(dir / "bad.jsonl"), DataError);
}

TEST_CASE("lag list parsing") {
  CHECK(parse_lag_list("1..4,8,16") == std::vector<std::uint32_t>{1, 2, 3, 4, 8, 16});
  CHECK(parse_lag_list("3,1,3") == std::vector<std::uint32_t>{1, 3});
  CHECK_THROWS_AS(parse_lag_list("0..3"), ConfigError);
  CHECK_THROWS_AS(parse_lag_list("5..2"), ConfigError);
  CHECK_THROWS_AS(parse_lag_list("a"), ConfigError);
  CHECK_THROWS_AS(parse_lag_list(""), ConfigError);
}

TEST_CASE("empirical horizon is a running maximum that grows with the prefix") {
  std::mt19937_64 rng(8);
  const auto s = random_stream(rng, 12, 200000, 0.0);
  const std::vector<std::uint32_t> lags = {1, 2, 3, 4, 6, 8, 12, 16};
  const auto h = empirical_horizon(s, {1000, 10000, 100000, 200000}, lags);
  REQUIRE(h.points.size() == 4);
  for (std::size_t i = 1; i < h.points.size(); ++i) CHECK(h.points[i].horizon >= h.points[i - 1].horizon);
  CHECK(h.points.back().raw == 16);
  for (const auto& p : h.points) CHECK(p.relative_error.size() == lags.size());
  CHECK(h.points.back().relative_error[0] == doctest::Approx(0.0));
  CHECK_THROWS_AS(empirical_horizon(s, {0}, lags), ConfigError);
}
