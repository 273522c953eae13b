#include <cstdlib>
#include <iostream>
#include <list>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lmscale/config.hpp"
#include "lmscale/error.hpp"
#include "lmscale/fetch.hpp"
#include "lmscale/loss_curves.hpp"
#include "lmscale/pipeline.hpp"

namespace {

using nlohmann::json;

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  unsigned threads = 0;
  std::string manifest;
  bool no_manifest = false;
};

lmscale::Config load_config(const Common& common) {
  lmscale::Config config = common.config_path.empty() ? lmscale::Config::defaults()
                                                      : lmscale::Config::load(common.config_path);
  for (const auto& item : common.overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw lmscale::ConfigError("--set expects section.key=value, got '" + item + "'");
    config.set(item.substr(0, eq), item.substr(eq + 1));
  }
  if (common.threads) config.threads = common.threads;
  return config;
}

// Options that map one-to-one onto job parameters.
struct ParamBinder {
  CLI::App* app;

  void path(const std::string& flag, const std::string& key, const std::string& help, bool required = false) {
    strings_storage.emplace_back();
    auto* opt = app->add_option(flag, strings_storage.back(), help);
    if (required) opt->required();
    keys.push_back({key, opt, false});
  }
  void number(const std::string& flag, const std::string& key, const std::string& help) {
    numbers_storage.emplace_back();
    auto* opt = app->add_option(flag, numbers_storage.back(), help);
    keys.push_back({key, opt, true});
  }

  json params() const {
    json p = json::object();
    auto s = strings_storage.begin();
    auto n = numbers_storage.begin();
    for (const auto& k : keys) {
      if (k.numeric) {
        if (k.opt->count()) p[k.key] = *n;
        ++n;
      } else {
        if (k.opt->count()) p[k.key] = *s;
        ++s;
      }
    }
    return p;
  }

  struct Key {
    std::string key;
    CLI::Option* opt;
    bool numeric;
  };
  std::vector<Key> keys;
  std::list<std::string> strings_storage;
  std::list<double> numbers_storage;
};

std::string default_manifest(const json& params) {
  for (const char* key : {"out", "tokens_out", "vocab_out"})
    if (params.contains(key)) return params[key].get<std::string>() + ".manifest.json";
  return "lmscale.manifest.json";
}

int run_verb(const std::string& verb, const json& params, const Common& common) {
  const lmscale::Config config = load_config(common);
  std::optional<std::filesystem::path> manifest;
  if (!common.no_manifest) manifest = common.manifest.empty() ? default_manifest(params) : common.manifest;
  const lmscale::RunManifest m = lmscale::run_recorded(verb, params, config, manifest);
  json out = {{"verb", verb}, {"config_hash", m.config_hash}};
  json outputs = json::object();
  for (const auto& [key, d] : m.outputs) outputs[key] = d.path;
  out["outputs"] = outputs;
  if (manifest) out["manifest"] = manifest->string();
  std::cout << out.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scaling-law measurements from corpora and loss curves"};
  app.set_version_flag("--version", std::string(LMSCALE_VERSION));
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("-c,--config", common.config_path, "INI configuration file")->check(CLI::ExistingFile);
  app.add_option("--set", common.overrides, "Override a config value, e.g. --set fit.grid_step=0.005");
  app.add_option("-j,--threads", common.threads, "Worker threads (0 = all cores)");
  app.add_option("--manifest", common.manifest, "Where to write the run manifest");
  app.add_flag("--no-manifest", common.no_manifest, "Skip writing a manifest");

  std::list<ParamBinder> binders;
  std::vector<std::pair<CLI::App*, std::string>> verbs;
  auto verb = [&](const std::string& name, const std::string& help) {
    CLI::App* sub = app.add_subcommand(name, help);
    binders.push_back({sub, {}, {}, {}});
    verbs.push_back({sub, name});
    return &binders.back();
  };

  auto* tokenize = verb("tokenize", "Train a byte-level BPE vocabulary and encode a corpus");
  tokenize->path("corpus", "corpus", "Text corpus", true);
  tokenize->path("--vocab", "vocab_in", "Existing vocabulary JSON (skips training)");
  tokenize->path("--vocab-out", "vocab_out", "Where to save the trained vocabulary");
  tokenize->path("-o,--tokens-out", "tokens_out", "Token stream output", true);

  auto* covstats = verb("covstats", "Token covariance norms per lag, beta fit and horizon");
  covstats->path("--tokens", "tokens", "Token stream input");
  covstats->path("--corpus", "corpus", "Text corpus input (tokenized on the fly)");
  covstats->path("--vocab", "vocab_in", "Vocabulary for --corpus");
  covstats->path("-o,--out", "out", "Per-lag summary (JSON Lines)", true);
  covstats->path("--fit-out", "fit_out", "Beta fit JSON");
  covstats->path("--svg-out", "svg_out", "Covariance decay plot");
  covstats->path("--horizon-out", "horizon_out", "Empirical horizon JSON");
  std::vector<std::uint64_t> prefixes;
  covstats->app->add_option("--prefix", prefixes, "Prefix sizes for the horizon (repeatable)");

  auto* fit = verb("fit", "Fit power laws, asymptotes or exponents");
  fit->path("kind", "kind", "powerlaw | asymptote | broken | beta | gamma | delta", true);
  fit->path("--in", "in", "Points CSV (x,y[,w]) or covariance summary JSONL");
  fit->path("--curves", "curves", "Loss curve CSV (gamma, delta)");
  fit->path("--range", "range", "Fit window lo:hi");
  fit->number("--beta", "beta", "Correlation exponent (delta)");
  fit->number("--threshold", "threshold", "Data threshold for min_ratio filtering (asymptote)");
  fit->path("--svg-out", "svg_out", "Plot (beta)");
  fit->path("-o,--out", "out", "Fit JSON", true);

  auto* predict = verb("predict", "Predicted exponents, horizons and regime");
  predict->number("--gamma", "gamma", "Entropy exponent");
  predict->number("--beta", "beta", "Correlation exponent");
  predict->number("--delta", "delta", "Within-horizon exponent");
  predict->number("--c", "c", "Threshold constant");
  predict->number("--T", "T", "Context length for --ansatz");
  predict->path("--ansatz", "ansatz", "Ansatz JSON; evaluates L_AR over its P grid");
  predict->path("-o,--out", "out", "Prediction JSON", true);
  std::vector<double> predict_P;
  predict->app->add_option("--P", predict_P, "Dataset sizes for horizons (repeatable)");

  auto* collapse = verb("collapse", "Rescale loss curves and score the collapse");
  collapse->path("curves", "curves", "Loss curve CSV", true);
  collapse->number("--gamma", "gamma", "Entropy exponent");
  collapse->number("--beta", "beta", "Correlation exponent");
  bool scan = false;
  collapse->app->add_flag("--scan", scan, "Grid-search (gamma, beta) over the configured grids");
  collapse->path("--svg-out", "svg_out", "Collapse plot");
  collapse->path("-o,--out", "out", "Collapse JSON", true);

  auto* synth = verb("synth", "Synthetic token corpora or ansatz loss curves");
  synth->path("--spec", "spec", "Corpus generator JSON");
  synth->path("--ansatz", "ansatz", "Ansatz JSON");
  synth->path("--tokens-out", "tokens_out", "Token stream output (--spec)");
  synth->path("-o,--out", "out", "Loss curve CSV output (--ansatz)");

  auto* report = verb("report", "Every stage whose inputs are present");
  report->path("--tokens", "tokens", "Token stream input");
  report->path("--corpus", "corpus", "Text corpus input");
  report->path("--vocab", "vocab_in", "Vocabulary for --corpus");
  report->path("--curves", "curves", "Loss curve CSV");
  report->path("--beta-svg-out", "beta_svg_out", "Covariance decay plot");
  report->path("--collapse-svg-out", "collapse_svg_out", "Collapse plot");
  report->path("-o,--out", "out", "Report JSON", true);

  CLI::App* selftest = app.add_subcommand("selftest", "Re-run a manifest and compare output digests");
  std::string selftest_manifest, selftest_dir;
  selftest->add_option("manifest", selftest_manifest, "Manifest JSON")->required()->check(CLI::ExistingFile);
  selftest->add_option("--workdir", selftest_dir, "Directory for the re-run outputs");

  CLI::App* validate = app.add_subcommand("validate", "Strict check of a loss curve CSV");
  std::string validate_path;
  validate->add_option("curves", validate_path, "Loss curve CSV")->required();

  CLI::App* fetch = app.add_subcommand("fetch", "Download a corpus archive over HTTP(S)");
  std::string fetch_url, fetch_dest, fetch_sha;
  fetch->add_option("url", fetch_url, "Source URL")->required();
  fetch->add_option("-o,--out", fetch_dest, "Destination (default: cache directory)");
  fetch->add_option("--sha256", fetch_sha, "Expected checksum");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    for (const auto& b : binders) {
      if (!b.app->parsed()) continue;
      json params = b.params();
      std::string name;
      for (const auto& [sub, n] : verbs)
        if (sub == b.app) name = n;
      if (name == "covstats" && !prefixes.empty()) params["prefixes"] = prefixes;
      if (name == "predict" && !predict_P.empty()) params["P"] = predict_P;
      if (name == "predict" && params.contains("T")) params["T"] = static_cast<std::uint64_t>(params["T"].get<double>());
      if (name == "collapse" && scan) params["scan"] = true;
      return run_verb(name, params, common);
    }
    if (selftest->parsed()) {
      std::optional<std::filesystem::path> dir;
      if (!selftest_dir.empty()) dir = selftest_dir;
      const auto r = lmscale::selftest(selftest_manifest, dir);
      for (const auto& m : r.mismatches) std::cerr << "mismatch: " << m << '\n';
      std::cout << (r.ok ? "selftest: outputs reproduced" : "selftest: outputs differ") << " (" << r.workdir.string()
                << ")\n";
      return r.ok ? 0 : 3;
    }
    if (validate->parsed()) {
      const auto r = lmscale::validate_loss_csv_file(validate_path);
      std::cout << r.summary();
      return r.ok() ? 0 : 3;
    }
    if (fetch->parsed()) {
      std::optional<std::filesystem::path> dest;
      std::optional<std::string> sha;
      if (!fetch_dest.empty()) dest = fetch_dest;
      if (!fetch_sha.empty()) sha = fetch_sha;
      const auto r = lmscale::fetch_file(fetch_url, dest, sha);
      std::cout << r.path.string() << ' ' << r.sha256 << (r.from_cache ? " (cached)" : "") << '\n';
      return 0;
    }
  } catch (const lmscale::ConfigError& e) {
    std::cerr << "lmscale: config error: " << e.what() << '\n';
    return 2;
  } catch (const lmscale::DataError& e) {
    std::cerr << "lmscale: data error: " << e.what() << '\n';
    return 3;
  } catch (const lmscale::ConvergenceError& e) {
    std::cerr << "lmscale: no convergence: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "lmscale: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
