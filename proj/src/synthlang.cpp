#include "lmscale/synthlang.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "lmscale/error.hpp"
#include "lmscale/parallel.hpp"

namespace lmscale {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::vector<double> cumulative(const std::vector<double>& weights) {
  std::vector<double> cdf(weights.size());
  long double s = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    s += weights[i];
    cdf[i] = static_cast<double>(s);
  }
  for (double& v : cdf) v /= static_cast<double>(s);
  cdf.back() = 1.0;
  return cdf;
}

std::uint32_t draw(const std::vector<double>& cdf, std::mt19937_64& rng) {
  const double u = uniform01(rng);
  const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  return static_cast<std::uint32_t>(std::min<std::ptrdiff_t>(it - cdf.begin(), static_cast<std::ptrdiff_t>(cdf.size()) - 1));
}

const char* to_string(ProcessKind k) {
  switch (k) {
    case ProcessKind::iid: return "iid";
    case ProcessKind::markov: return "markov";
    case ProcessKind::powerlaw_copy: return "powerlaw_copy";
  }
  return "?";
}

const char* to_string(DocLengthLaw k) {
  switch (k) {
    case DocLengthLaw::single: return "single";
    case DocLengthLaw::fixed: return "fixed";
    case DocLengthLaw::geometric: return "geometric";
  }
  return "?";
}

// Document lengths (regular tokens only) laid out so that the lengths plus
// the separating EOS ids add up to spec.length.
std::vector<std::uint64_t> document_layout(const SynthSpec& spec) {
  std::vector<std::uint64_t> docs;
  if (spec.doc_law == DocLengthLaw::single) {
    docs.push_back(spec.length);
    return docs;
  }
  std::mt19937_64 rng(derive_seed(spec.seed, ~0ull));
  std::geometric_distribution<std::uint64_t> geom(1.0 / std::max(1.0, spec.doc_length));
  std::uint64_t used = 0;
  while (used < spec.length) {
    if (!docs.empty()) ++used;  // EOS before this document
    if (used >= spec.length) {
      // A trailing EOS would leave an empty document; give the id back.
      --used;
      ++docs.back();
      break;
    }
    std::uint64_t len = spec.doc_law == DocLengthLaw::fixed
                            ? static_cast<std::uint64_t>(spec.doc_length)
                            : geom(rng) + 1;
    len = std::min(len, spec.length - used);
    docs.push_back(len);
    used += len;
  }
  return docs;
}

Matrix parse_matrix(const nlohmann::json& j) {
  Matrix m;
  for (const auto& row : j) m.push_back(row.get<std::vector<double>>());
  return m;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(splitmix64(seed) ^ splitmix64(index + 0x632BE59BD9B4E019ull));
}

void SynthSpec::validate() const {
  if (vocab_size < 1) throw ConfigError("synth: vocab_size must be >= 1");
  if (length == 0) throw ConfigError("synth: length must be >= 1");
  auto prob = [](double p, const char* name) {
    if (!(p >= 0 && p <= 1)) throw ConfigError(std::string("synth: ") + name + " must lie in [0, 1]");
  };
  if (unigram == UnigramLaw::zipf && !(zipf_exponent >= 0 && std::isfinite(zipf_exponent)))
    throw ConfigError("synth: zipf exponent must be finite and >= 0");
  if (process == ProcessKind::markov) {
    if (transition.size() != vocab_size)
      throw ConfigError("synth: transition matrix must be " + std::to_string(vocab_size) + " x " +
                        std::to_string(vocab_size));
    for (std::size_t i = 0; i < transition.size(); ++i) {
      if (transition[i].size() != vocab_size) throw ConfigError("synth: transition matrix is not square");
      long double s = 0;
      for (double v : transition[i]) {
        prob(v, "transition probabilities");
        s += v;
      }
      if (std::fabs(static_cast<double>(s) - 1.0) > 1e-12)
        throw ConfigError("synth: transition row " + std::to_string(i) + " sums to " +
                          std::to_string(static_cast<double>(s)) + ", expected 1 within 1e-12");
    }
  }
  if (process == ProcessKind::powerlaw_copy) {
    prob(copy_prob, "copy_prob");
    prob(noise_prob, "noise_prob");
    if (!(lag_exponent > 0) || !std::isfinite(lag_exponent)) throw ConfigError("synth: lag_exponent must be positive");
    if (max_lag < 1) throw ConfigError("synth: max_lag must be >= 1");
  }
  if (doc_law != DocLengthLaw::single && !(doc_length >= 1) )
    throw ConfigError("synth: doc_length must be >= 1");
}

std::string SynthSpec::to_json() const {
  nlohmann::ordered_json j;
  j["vocab_size"] = vocab_size;
  j["length"] = length;
  j["seed"] = seed;
  j["process"] = to_string(process);
  j["unigram"] = {{"law", unigram == UnigramLaw::zipf ? "zipf" : "uniform"}, {"exponent", zipf_exponent}};
  if (process == ProcessKind::markov) j["transition"] = transition;
  if (process == ProcessKind::powerlaw_copy) {
    j["copy_prob"] = copy_prob;
    j["lag_exponent"] = lag_exponent;
    j["noise_prob"] = noise_prob;
    j["max_lag"] = max_lag;
  }
  j["doc_length"] = {{"law", to_string(doc_law)}, {"value", doc_length}};
  return j.dump(2);
}

SynthSpec SynthSpec::from_json(const std::string& text) {
  SynthSpec s;
  try {
    const auto j = nlohmann::json::parse(text);
    s.vocab_size = j.at("vocab_size").get<std::uint32_t>();
    s.length = j.at("length").get<std::uint64_t>();
    s.seed = j.value("seed", std::uint64_t{1});
    const std::string process = j.value("process", std::string("iid"));
    if (process == "iid") s.process = ProcessKind::iid;
    else if (process == "markov") s.process = ProcessKind::markov;
    else if (process == "powerlaw_copy") s.process = ProcessKind::powerlaw_copy;
    else throw ConfigError("synth: unknown process '" + process + "'");
    if (j.contains("unigram")) {
      const auto& u = j.at("unigram");
      const std::string law = u.is_string() ? u.get<std::string>() : u.value("law", std::string("uniform"));
      if (law == "uniform") s.unigram = UnigramLaw::uniform;
      else if (law == "zipf") s.unigram = UnigramLaw::zipf;
      else throw ConfigError("synth: unknown unigram law '" + law + "'");
      if (u.is_object()) s.zipf_exponent = u.value("exponent", 1.0);
    }
    if (j.contains("transition")) s.transition = parse_matrix(j.at("transition"));
    if (j.contains("lambda") && s.process == ProcessKind::markov && s.transition.empty()) {
      SynthSpec base = s;
      base.process = ProcessKind::iid;
      s.transition = lazy_mixing_chain(unigram_probabilities(base), j.at("lambda").get<double>());
    }
    s.copy_prob = j.value("copy_prob", s.copy_prob);
    s.lag_exponent = j.value("lag_exponent", s.lag_exponent);
    s.noise_prob = j.value("noise_prob", s.noise_prob);
    s.max_lag = j.value("max_lag", s.max_lag);
    if (j.contains("doc_length")) {
      const auto& d = j.at("doc_length");
      if (d.is_number()) {
        s.doc_law = DocLengthLaw::fixed;
        s.doc_length = d.get<double>();
      } else {
        const std::string law = d.value("law", std::string("single"));
        if (law == "single") s.doc_law = DocLengthLaw::single;
        else if (law == "fixed") s.doc_law = DocLengthLaw::fixed;
        else if (law == "geometric") s.doc_law = DocLengthLaw::geometric;
        else throw ConfigError("synth: unknown doc_length law '" + law + "'");
        s.doc_length = d.value("value", d.value("mean", s.doc_length));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synth spec: ") + e.what());
  }
  s.validate();
  return s;
}

SynthSpec SynthSpec::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read synth spec " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return from_json(buffer.str());
}

std::vector<double> unigram_probabilities(const SynthSpec& spec) {
  std::vector<double> w(spec.vocab_size, 1.0);
  if (spec.unigram == UnigramLaw::zipf)
    for (std::uint32_t i = 0; i < spec.vocab_size; ++i) w[i] = std::pow(static_cast<double>(i + 1), -spec.zipf_exponent);
  long double s = 0;
  for (double v : w) s += v;
  for (double& v : w) v = static_cast<double>(v / s);
  return w;
}

TokenStream generate(const SynthSpec& spec, unsigned threads) {
  spec.validate();
  const auto layout = document_layout(spec);
  std::vector<std::uint64_t> offsets(layout.size());
  std::uint64_t pos = 0;
  for (std::size_t d = 0; d < layout.size(); ++d) {
    if (d > 0) ++pos;
    offsets[d] = pos;
    pos += layout[d];
  }
  TokenStream stream;
  stream.vocab_size = spec.vocab_size + 1;
  stream.ids.assign(pos, spec.vocab_size);

  const auto base_cdf = cumulative(unigram_probabilities(spec));
  std::vector<std::vector<double>> row_cdf;
  std::vector<double> start_cdf;
  if (spec.process == ProcessKind::markov) {
    for (const auto& row : spec.transition) row_cdf.push_back(cumulative(row));
    start_cdf = cumulative(stationary_distribution(spec.transition));
  }
  std::vector<double> lag_cdf;
  if (spec.process == ProcessKind::powerlaw_copy) {
    std::vector<double> w(spec.max_lag);
    for (std::uint32_t l = 1; l <= spec.max_lag; ++l) w[l - 1] = std::pow(static_cast<double>(l), -(1.0 + spec.lag_exponent));
    lag_cdf = cumulative(w);
  }

  parallel_for(layout.size(), [&](std::size_t d) {
    std::mt19937_64 rng(derive_seed(spec.seed, d));
    TokenId* out = stream.ids.data() + offsets[d];
    const std::uint64_t len = layout[d];
    switch (spec.process) {
      case ProcessKind::iid:
        for (std::uint64_t i = 0; i < len; ++i) out[i] = draw(base_cdf, rng);
        break;
      case ProcessKind::markov:
        for (std::uint64_t i = 0; i < len; ++i) out[i] = i == 0 ? draw(start_cdf, rng) : draw(row_cdf[out[i - 1]], rng);
        break;
      case ProcessKind::powerlaw_copy:
        for (std::uint64_t i = 0; i < len; ++i) {
          if (uniform01(rng) < spec.copy_prob) {
            const std::uint64_t lag = draw(lag_cdf, rng) + 1;
            if (lag <= i) {
              out[i] = uniform01(rng) < spec.noise_prob ? draw(base_cdf, rng) : out[i - lag];
              continue;
            }
          }
          out[i] = draw(base_cdf, rng);
        }
        break;
    }
  }, threads);
  return stream;
}

bool is_ergodic(const Matrix& transition) {
  const std::size_t V = transition.size();
  if (V == 0) return false;
  using Bool = std::vector<std::vector<char>>;
  Bool a(V, std::vector<char>(V, 0));
  for (std::size_t i = 0; i < V; ++i) {
    if (transition[i].size() != V) return false;
    for (std::size_t j = 0; j < V; ++j) a[i][j] = transition[i][j] > 0;
  }
  // A nonnegative matrix is primitive iff A^m > 0 for m = (V-1)^2 + 1, and
  // then every higher power is positive too.
  const std::uint64_t bound = static_cast<std::uint64_t>(V - 1) * (V - 1) + 1;
  std::uint64_t power = 1;
  while (power < bound) {
    Bool sq(V, std::vector<char>(V, 0));
    for (std::size_t i = 0; i < V; ++i)
      for (std::size_t k = 0; k < V; ++k)
        if (a[i][k])
          for (std::size_t j = 0; j < V; ++j) sq[i][j] |= a[k][j];
    a = std::move(sq);
    power *= 2;
  }
  for (const auto& row : a)
    for (char v : row)
      if (!v) return false;
  return true;
}

std::vector<double> stationary_distribution(const Matrix& transition) {
  const std::size_t V = transition.size();
  if (V == 0) throw ConfigError("stationary_distribution: empty matrix");
  // (T^T - I) pi = 0 with the last equation replaced by sum(pi) = 1.
  std::vector<std::vector<long double>> a(V, std::vector<long double>(V + 1, 0));
  for (std::size_t i = 0; i < V; ++i) {
    for (std::size_t j = 0; j < V; ++j) a[i][j] = transition[j][i] - (i == j ? 1.0L : 0.0L);
  }
  for (std::size_t j = 0; j < V; ++j) a[V - 1][j] = 1;
  a[V - 1][V] = 1;
  for (std::size_t col = 0; col < V; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < V; ++r)
      if (std::fabs(a[r][col]) > std::fabs(a[pivot][col])) pivot = r;
    if (std::fabs(a[pivot][col]) < 1e-300L) throw DataError("stationary_distribution: chain has no unique stationary law");
    std::swap(a[col], a[pivot]);
    for (std::size_t r = 0; r < V; ++r) {
      if (r == col || a[r][col] == 0) continue;
      const long double f = a[r][col] / a[col][col];
      for (std::size_t k = col; k <= V; ++k) a[r][k] -= f * a[col][k];
    }
  }
  std::vector<double> pi(V);
  for (std::size_t i = 0; i < V; ++i) pi[i] = static_cast<double>(a[i][V] / a[i][i]);
  return pi;
}

std::vector<std::vector<double>> analytic_covariance(const SynthSpec& spec, const std::vector<std::uint32_t>& lags) {
  if (spec.process != ProcessKind::markov) throw ConfigError("analytic_covariance requires a markov spec");
  spec.validate();
  if (!is_ergodic(spec.transition)) throw DataError("analytic_covariance: chain is not ergodic (irreducible and aperiodic)");
  const std::size_t V = spec.vocab_size;
  const auto pi = stationary_distribution(spec.transition);
  std::vector<std::vector<double>> out;
  for (std::uint32_t n : lags) {
    if (n == 0) throw ConfigError("analytic_covariance: lags must be positive");
    std::vector<long double> power(V * V, 0);
    for (std::size_t i = 0; i < V; ++i) power[i * V + i] = 1;
    std::vector<long double> base(V * V);
    for (std::size_t i = 0; i < V; ++i)
      for (std::size_t j = 0; j < V; ++j) base[i * V + j] = spec.transition[i][j];
    auto multiply = [V](const std::vector<long double>& x, const std::vector<long double>& y) {
      std::vector<long double> z(V * V, 0);
      for (std::size_t i = 0; i < V; ++i)
        for (std::size_t k = 0; k < V; ++k) {
          const long double v = x[i * V + k];
          if (v == 0) continue;
          for (std::size_t j = 0; j < V; ++j) z[i * V + j] += v * y[k * V + j];
        }
      return z;
    };
    for (std::uint32_t e = n; e > 0; e >>= 1) {
      if (e & 1) power = multiply(power, base);
      if (e > 1) base = multiply(base, base);
    }
    std::vector<double> c(V * V);
    for (std::size_t i = 0; i < V; ++i)
      for (std::size_t j = 0; j < V; ++j)
        c[i * V + j] = static_cast<double>(pi[i] * power[i * V + j] - static_cast<long double>(pi[i]) * pi[j]);
    out.push_back(std::move(c));
  }
  return out;
}

Matrix lazy_mixing_chain(const std::vector<double>& pi, double lambda) {
  if (!(lambda >= 0 && lambda < 1)) throw ConfigError("lazy_mixing_chain: lambda must lie in [0, 1)");
  const std::size_t V = pi.size();
  Matrix t(V, std::vector<double>(V));
  for (std::size_t i = 0; i < V; ++i) {
    for (std::size_t j = 0; j < V; ++j) t[i][j] = (1.0 - lambda) * pi[j] + (i == j ? lambda : 0.0);
  }
  return t;
}

}  // namespace lmscale
