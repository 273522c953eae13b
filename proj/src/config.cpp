#include "lmscale/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "lmscale/collapse.hpp"
#include "lmscale/digest.hpp"
#include "lmscale/error.hpp"
#include "lmscale/loss_curves.hpp"

namespace lmscale {

namespace {

namespace pt = boost::property_tree;

std::string split_mode_name(DocumentSplit::Mode m) {
  switch (m) {
    case DocumentSplit::Mode::separator: return "separator";
    case DocumentSplit::Mode::line: return "line";
    case DocumentSplit::Mode::blank_line: return "blank_line";
  }
  return "separator";
}

template <class T>
T convert(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  T out{};
  in >> out;
  if (!in || !(in >> std::ws).eof()) throw ConfigError("config: " + key + " has invalid value '" + value + "'");
  return out;
}

template <>
bool convert<bool>(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw ConfigError("config: " + key + " must be a boolean, got '" + value + "'");
}

// Binds every known key to a field so parsing and rendering stay in sync.
struct Binding {
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

std::map<std::string, Binding> bindings(Config& c) {
  std::map<std::string, Binding> b;
  auto num = [&b](const std::string& key, auto& field) {
    using T = std::decay_t<decltype(field)>;
    b[key] = {[&field, key](const std::string& v) { field = convert<T>(key, v); },
              [&field]() {
                if constexpr (std::is_same_v<T, bool>) return std::string(field ? "true" : "false");
                else if constexpr (std::is_floating_point_v<T>) return format_double(field);
                else return std::to_string(field);
              }};
  };
  auto str = [&b](const std::string& key, std::string& field) {
    b[key] = {[&field](const std::string& v) { field = v; }, [&field]() { return field; }};
  };
  num("tokenizer.vocab_size", c.vocab_size);
  b["tokenizer.split"] = {[&c](const std::string& v) {
                            if (v == "separator") c.split.mode = DocumentSplit::Mode::separator;
                            else if (v == "line") c.split.mode = DocumentSplit::Mode::line;
                            else if (v == "blank_line") c.split.mode = DocumentSplit::Mode::blank_line;
                            else throw ConfigError("config: tokenizer.split must be separator, line or blank_line");
                          },
                          [&c]() { return split_mode_name(c.split.mode); }};
  str("tokenizer.separator", c.split.separator);
  str("covstats.lags", c.lags);
  num("covstats.power_tol", c.power_tol);
  num("covstats.power_max_iters", c.power_max_iters);
  num("covstats.power_seed", c.power_seed);
  num("covstats.cross_documents", c.cross_documents);
  num("covstats.dense_budget_mb", c.dense_budget_mb);
  num("covstats.require_convergence", c.require_convergence);
  num("covstats.horizon_tol_ratio", c.horizon_tol_ratio);
  str("fit.beta_range", c.beta_range);
  str("fit.gamma_range", c.gamma_range);
  num("fit.broken_power_law", c.broken_power_law);
  num("fit.mask_outliers", c.mask_outliers);
  num("fit.outlier_window", c.outlier_window);
  num("fit.outlier_z", c.outlier_z);
  num("fit.grid_step", c.grid_step);
  num("fit.min_ratio", c.min_ratio);
  num("fit.low_r2", c.low_r2);
  num("theory.H_inf", c.H_inf);
  num("theory.threshold_c", c.threshold_c);
  str("theory.shape", c.shape);
  num("collapse.bins", c.bins);
  num("collapse.subtract_asymptote", c.subtract_asymptote);
  str("collapse.scan_gamma", c.scan_gamma);
  str("collapse.scan_beta", c.scan_beta);
  num("run.threads", c.threads);
  return b;
}

}  // namespace

Config Config::parse(const std::string& ini_text) {
  Config c;
  pt::ptree tree;
  try {
    std::istringstream in(ini_text);
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  auto b = bindings(c);
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw ConfigError("config: key '" + section + "' must live inside a section");
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      const auto it = b.find(full);
      if (it == b.end()) throw ConfigError("config: unknown key '" + full + "'");
      it->second.set(value.data());
    }
  }
  c.validate();
  return c;
}

void Config::set(const std::string& key, const std::string& value) {
  Config next = *this;
  auto b = bindings(next);
  const auto it = b.find(key);
  if (it == b.end()) throw ConfigError("config: unknown key '" + key + "'");
  it->second.set(value);
  next.validate();
  *this = next;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str());
}

std::string Config::to_ini() const {
  Config copy = *this;
  auto b = bindings(copy);
  std::map<std::string, std::vector<std::pair<std::string, std::string>>> sections;
  for (const auto& [full, binding] : b) {
    const auto dot = full.find('.');
    sections[full.substr(0, dot)].emplace_back(full.substr(dot + 1), binding.get());
  }
  std::string out;
  for (const auto& [section, keys] : sections) {
    out += "[" + section + "]\n";
    for (const auto& [k, v] : keys) out += k + " = " + v + "\n";
    out += "\n";
  }
  return out;
}

std::string Config::hash() const { return sha256_hex(to_ini()); }

std::vector<std::uint32_t> Config::lag_list() const { return parse_lag_list(lags); }

PowerIterationOptions Config::power_options() const {
  PowerIterationOptions o;
  o.tol = power_tol;
  o.max_iters = power_max_iters;
  o.seed = power_seed;
  return o;
}

CountOptions Config::count_options() const {
  CountOptions o;
  o.cross_documents = cross_documents;
  o.dense_budget_bytes = static_cast<std::size_t>(dense_budget_mb) << 20;
  o.threads = threads;
  return o;
}

FitRange Config::beta_fit_range() const { return parse_fit_range(beta_range); }
FitRange Config::gamma_fit_range() const { return parse_fit_range(gamma_range); }

void Config::validate() const {
  if (vocab_size < Vocabulary::kByteSymbols + 1) throw ConfigError("config: tokenizer.vocab_size must be >= 257");
  if (split.mode == DocumentSplit::Mode::separator && split.separator.empty())
    throw ConfigError("config: tokenizer.separator must be nonempty");
  lag_list();
  if (!(power_tol > 0)) throw ConfigError("config: covstats.power_tol must be positive");
  if (power_max_iters == 0) throw ConfigError("config: covstats.power_max_iters must be positive");
  if (!(horizon_tol_ratio > 0)) throw ConfigError("config: covstats.horizon_tol_ratio must be positive");
  beta_fit_range();
  gamma_fit_range();
  if (outlier_window < 3 || outlier_window % 2 == 0) throw ConfigError("config: fit.outlier_window must be odd and >= 3");
  if (!(outlier_z > 0)) throw ConfigError("config: fit.outlier_z must be positive");
  if (!(grid_step > 0)) throw ConfigError("config: fit.grid_step must be positive");
  if (!(min_ratio >= 0)) throw ConfigError("config: fit.min_ratio must be >= 0");
  if (!(H_inf >= 0)) throw ConfigError("config: theory.H_inf must be >= 0");
  if (!(threshold_c > 0)) throw ConfigError("config: theory.threshold_c must be positive");
  parse_transition_shape(shape);
  if (bins == 0) throw ConfigError("config: collapse.bins must be positive");
  parse_grid(scan_gamma);
  parse_grid(scan_beta);
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> parts;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ':');) {
    try {
      std::size_t used = 0;
      parts.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("grid '" + text + "' must look like lo:hi:step");
    }
  }
  if (parts.size() == 1) return parts;
  if (parts.size() != 3) throw ConfigError("grid '" + text + "' must look like lo:hi:step");
  return linear_grid(parts[0], parts[1], parts[2]);
}

}  // namespace lmscale
