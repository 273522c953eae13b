#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "lmscale/collapse.hpp"
#include "lmscale/covstats.hpp"
#include "lmscale/fitkit.hpp"
#include "lmscale/synthlang.hpp"
#include "lmscale/theory.hpp"
#include "lmscale/tokenizer.hpp"
#include "lmscale/unicode_text.hpp"
#include "oracles.hpp"

using namespace lmscale;

namespace {

constexpr int kTrials = 30;

std::string random_text(std::mt19937_64& rng, std::size_t words) {
  static const std::vector<std::string> pieces = {"a", "ab", "the", "é", "日本", "🙂", "x1", "  ", "\n", "über", "-"};
  std::string out;
  for (std::size_t i = 0; i < words; ++i) {
    out += pieces[rng() % pieces.size()];
    if (rng() % 3) out += ' ';
  }
  return out;
}

SynthSpec random_spec(std::mt19937_64& rng) {
  SynthSpec s;
  s.vocab_size = 2 + static_cast<std::uint32_t>(rng() % 40);
  s.length = 2000 + rng() % 20000;
  s.seed = rng();
  s.process = static_cast<ProcessKind>(rng() % 3);
  s.unigram = rng() % 2 ? UnigramLaw::zipf : UnigramLaw::uniform;
  if (s.process == ProcessKind::markov)
    s.transition = lazy_mixing_chain(unigram_probabilities(s), std::uniform_real_distribution<double>(0, 0.95)(rng));
  s.doc_law = static_cast<DocLengthLaw>(rng() % 3);
  s.doc_length = 20 + static_cast<double>(rng() % 500);
  return s;
}

}  // namespace

TEST_CASE("vocabulary ids are dense and EOS is never a merge product") {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 10; ++t) {
    std::vector<std::string> docs;
    for (int d = 0; d < 20; ++d) docs.push_back(random_text(rng, 40));
    const Vocabulary v = train_bpe(docs, 256 + 1 + static_cast<std::uint32_t>(rng() % 30));
    std::set<std::string> seen;
    for (TokenId id = 0; id < v.eos_id(); ++id) seen.insert(v.token_bytes(id));
    CHECK(seen.size() == v.size() - 1);
    CHECK(v.eos_id() == v.size() - 1);
    for (const auto& [l, r] : v.merges()) {
      CHECK(l < v.eos_id());
      CHECK(r < v.eos_id());
    }

    const TokenStream s = encode(docs, v);
    std::size_t eos = 0;
    for (auto id : s.ids) {
      CHECK(id < v.size());
      eos += id == v.eos_id();
    }
    std::vector<std::string> expected;
    for (const auto& d : docs)
      if (!text::normalize(d).empty()) expected.push_back(text::normalize(d));
    CHECK(eos == expected.size() - 1);
    CHECK(decode_documents(s.ids, v) == expected);
  }
}

TEST_CASE("count invariants on random corpora") {
  std::mt19937_64 rng(2);
  const std::vector<std::uint32_t> lags = {1, 2, 3, 5, 8, 13, 40};
  for (int t = 0; t < kTrials; ++t) {
    const TokenStream s = generate(random_spec(rng));
    const auto counts = count_pairs(s, lags);
    const auto rows = summarize(counts);
    for (std::size_t i = 0; i < lags.size(); ++i) {
      const auto& c = counts[i];
      std::uint64_t sum = 0;
      std::vector<std::uint64_t> left(s.vocab_size, 0), right(s.vocab_size, 0);
      for (const auto& p : c.pairs) {
        sum += p.count;
        left[p.left] += p.count;
        right[p.right] += p.count;
      }
      CHECK(sum == c.num_pairs);
      CHECK(left == c.left_counts);
      CHECK(right == c.right_counts);
      CHECK(c.left_counts[s.vocab_size - 1] == 0);

      const auto& r = rows[i];
      if (r.empty) continue;
      CHECK(r.op_norm <= r.frob_norm * (1 + 1e-12));
      CHECK(r.frob_norm <= std::sqrt(double(s.vocab_size)) * r.op_norm * (1 + 1e-12));
      // The residual bounds the distance of sigma^2 from the spectrum of C^T C.
      const double truth = oracle::eigen_top_singular_value(CovarianceOperator(c).dense(), s.vocab_size, s.vocab_size);
      if (r.converged && truth > 0)
        CHECK(std::fabs(r.op_norm * r.op_norm - truth * truth) <= (r.residual + 1e-12) * r.op_norm * r.op_norm);
    }
  }
}

TEST_CASE("generated streams respect the vocabulary and spec probabilities") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < kTrials; ++t) {
    const SynthSpec spec = random_spec(rng);
    const TokenStream s = generate(spec);
    CHECK(s.ids.size() == spec.length);
    CHECK(s.vocab_size == spec.vocab_size + 1);
    CHECK(std::all_of(s.ids.begin(), s.ids.end(), [&](TokenId id) { return id < s.vocab_size; }));
    const auto p = unigram_probabilities(spec);
    CHECK(std::all_of(p.begin(), p.end(), [](double v) { return v >= 0 && v <= 1; }));
    for (const auto& row : spec.transition) {
      CHECK(std::all_of(row.begin(), row.end(), [](double v) { return v >= 0 && v <= 1; }));
      CHECK(std::fabs(std::accumulate(row.begin(), row.end(), 0.0) - 1) < 1e-12);
    }
  }
}

TEST_CASE("power-law fits: sign, range and R^2") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int t = 0; t < kTrials; ++t) {
    const double e = 2 * u(rng);
    std::vector<Point> pts;
    for (int x = 1; x <= 60; ++x) pts.push_back({double(x), std::exp(u(rng)) * std::pow(x, -e), 1.0});
    const auto f = fit_power_law(pts);
    CHECK(f.r2 >= 0);
    CHECK(f.r2 <= 1);

    std::vector<Point> clean;
    for (int x = 1; x <= 60; ++x) clean.push_back({double(x), 3 * std::pow(x, -e), 1.0});
    CHECK(fit_power_law(clean).exponent == doctest::Approx(e).epsilon(1e-9));

    // Points outside the range do not move the fit.
    auto polluted = clean;
    polluted.push_back({1000, 1e6, 1.0});
    FitRange r;
    r.lo = 1;
    r.hi = 60;
    const auto g = fit_power_law(polluted, r);
    CHECK(g.exponent == doctest::Approx(e).epsilon(1e-9));
    CHECK(g.num_points == 60);
  }
}

TEST_CASE("asymptote fits land on the grid below every point") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < kTrials; ++t) {
    const double H = 3 * u(rng), A = 0.1 + u(rng), d = 0.1 + u(rng);
    std::vector<Point> pts;
    for (int k = 0; k < 15; ++k) {
      const double P = std::pow(10.0, 2 + 0.4 * k);
      pts.push_back({P, (H + A * std::pow(P, -d)) * (1 + 0.01 * (u(rng) - 0.5)), 1.0});
    }
    AsymptoteOptions opt;
    opt.grid.h_min = 0.0;
    opt.grid.step = 0.005;
    opt.min_ratio = 0;
    const auto f = fit_asymptote(pts, opt);
    const double k = f.asymptote / 0.005;
    CHECK(std::fabs(k - std::round(k)) < 1e-6);
    for (const auto& p : pts) CHECK(p.y > f.asymptote);
  }
}

TEST_CASE("broken fits put the break strictly inside the data") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < kTrials; ++t) {
    std::vector<Point> pts;
    for (int x = 1; x <= 40; ++x) pts.push_back({double(x), std::pow(x, -u(rng) * 2) + u(rng), 1.0});
    const auto f = fit_broken_power_law(pts);
    CHECK(f.breakpoint > 1);
    CHECK(f.breakpoint < 40);
  }
}

TEST_CASE("transition shapes are monotone and bounded") {
  for (auto shape : {TransitionShape::piecewise, TransitionShape::smooth, TransitionShape::instant,
                     TransitionShape::never}) {
    for (double delta : {0.05, 0.3, 1.0, 3.0}) {
      double prev = 0;
      for (double lx = -6; lx <= 6; lx += 0.01) {
        const double f = transition(shape, std::pow(10.0, lx), delta);
        CHECK(f >= 0);
        CHECK(f <= 1);
        CHECK(f >= prev);
        prev = f;
      }
    }
  }
}

TEST_CASE("ansatz curves are nonnegative and nonincreasing in n") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < kTrials; ++t) {
    AnsatzSpec s;
    s.exponents.gamma = 0.1 + u(rng);
    s.exponents.beta = 0.3 + u(rng);
    s.exponents.H_inf = 2 * u(rng);
    s.delta = 0.05 + 2 * u(rng);
    s.shape = static_cast<TransitionShape>(rng() % 4);
    s.max_n = 64;
    for (double P : {1e2, 1e4, 1e6}) {
      const auto L = ansatz_losses(s, P);
      CHECK(L.front() >= 0);
      for (std::size_t n = 1; n < L.size(); ++n) CHECK(L[n] <= L[n - 1] + 1e-12);
    }
  }
}

TEST_CASE("dispersion vanishes exactly for identical rescaled curves") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < kTrials; ++t) {
    RescaledCurve base{1, {}, {}};
    double x = 0.1;
    for (int k = 0; k < 30; ++k) {
      x *= 1.2 + u(rng);
      base.x.push_back(x);
      base.y.push_back(1 + u(rng));
    }
    std::vector<RescaledCurve> same = {base, base, base};
    same[1].n = 2;
    same[2].n = 3;
    CHECK(dispersion(same).score == 0.0);
    auto moved = same;
    moved[2].y[15] += 1e-3;
    CHECK(dispersion(moved).score > 0.0);
  }
}

TEST_CASE("rescaling keeps the order of P within each curve") {
  AnsatzSpec s;
  s.exponents.gamma = 0.34;
  s.exponents.beta = 0.88;
  s.max_n = 16;
  s.P_grid = {1e2, 1e3, 1e4, 1e5};
  const auto family = rescale(synthesize_curves(s), 0.5, 1.3);
  for (const auto& c : family) {
    CHECK(std::is_sorted(c.x.begin(), c.x.end()));
    for (std::size_t i = 0; i < c.x.size(); ++i)
      CHECK(c.x[i] == doctest::Approx(s.P_grid[i] / std::pow(double(c.n), 2.6)).epsilon(1e-12));
  }
}

TEST_CASE("iid corpora sit at the sampling noise floor") {
  SynthSpec s;
  s.vocab_size = 49;
  s.length = 1000000;
  const std::vector<std::uint32_t> lags = {1, 2, 4, 8, 16, 32, 64};
  std::vector<double> floor_samples;
  for (std::uint64_t seed = 100; seed < 120; ++seed) {
    s.seed = seed;
    floor_samples.push_back(summarize(count_pairs(generate(s), std::vector<std::uint32_t>{1}))[0].op_norm);
  }
  std::sort(floor_samples.begin(), floor_samples.end());
  const double floor = floor_samples[floor_samples.size() / 2];
  CHECK(floor < 10 / std::sqrt(1e6));
  s.seed = 1;
  for (const auto& row : summarize(count_pairs(generate(s), lags))) CHECK(row.op_norm < 3 * floor);
}

TEST_CASE("lazy markov chains decay geometrically") {
  const std::vector<double> pi = {0.4, 0.3, 0.2, 0.1};
  SynthSpec s;
  s.vocab_size = 4;
  s.length = 4000000;
  s.process = ProcessKind::markov;
  s.transition = lazy_mixing_chain(pi, 0.8);
  std::vector<std::uint32_t> lags(20);
  std::iota(lags.begin(), lags.end(), 1u);

  // Exact covariance from transition-matrix powers.
  const auto exact = analytic_covariance(s, lags);
  std::vector<double> n, log_norm;
  for (std::size_t k = 0; k < lags.size(); ++k) {
    n.push_back(lags[k]);
    log_norm.push_back(std::log(operator_norm(DenseOperator(4, 4, exact[k])).value));
  }
  const auto slope = [](const std::vector<double>& x, const std::vector<double>& y) {
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / x.size();
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / y.size();
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      sxy += (x[i] - mx) * (y[i] - my);
      sxx += (x[i] - mx) * (x[i] - mx);
    }
    return sxy / sxx;
  };
  CHECK(std::fabs(slope(n, log_norm) / std::log(0.8) - 1) < 0.05);

  // The sampled norms follow the same line over the lags they resolve.
  const auto rows = summarize(count_pairs(generate(s), std::vector<std::uint32_t>(lags.begin(), lags.begin() + 10)));
  std::vector<double> m, log_sampled;
  for (const auto& r : rows) {
    m.push_back(r.lag);
    log_sampled.push_back(std::log(r.op_norm));
  }
  CHECK(std::fabs(slope(m, log_sampled) / std::log(0.8) - 1) < 0.05);
}
