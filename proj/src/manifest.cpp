#include "lmscale/manifest.hpp"

#include <chrono>
#include <ctime>
#include <fstream>

#include <boost/version.hpp>
#include <curl/curlver.h>
#include <openssl/opensslv.h>
#include <unicode/uvernum.h>

#include "lmscale/digest.hpp"
#include "lmscale/error.hpp"

namespace lmscale {

using nlohmann::json;

FileDigest digest_file(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw DataError("cannot digest missing file " + path.string());
  return {path.string(), sha256_file(path), static_cast<std::uint64_t>(std::filesystem::file_size(path))};
}

namespace {

json digests_to_json(const std::map<std::string, FileDigest>& digests) {
  json out = json::object();
  for (const auto& [key, d] : digests) out[key] = {{"path", d.path}, {"sha256", d.sha256}, {"bytes", d.bytes}};
  return out;
}

std::map<std::string, FileDigest> digests_from_json(const json& j) {
  std::map<std::string, FileDigest> out;
  for (const auto& [key, d] : j.items())
    out[key] = {d.at("path").get<std::string>(), d.at("sha256").get<std::string>(), d.at("bytes").get<std::uint64_t>()};
  return out;
}

}  // namespace

json RunManifest::to_json() const {
  return {{"format", format},
          {"tool_version", tool_version},
          {"module_versions", module_versions},
          {"verb", verb},
          {"params", params},
          {"config", config_ini},
          {"config_hash", config_hash},
          {"inputs", digests_to_json(inputs)},
          {"outputs", digests_to_json(outputs)},
          {"started_at", started_at},
          {"finished_at", finished_at}};
}

RunManifest RunManifest::from_json(const json& j) {
  try {
    RunManifest m;
    m.format = j.at("format").get<int>();
    if (m.format != 1) throw ConfigError("manifest: unsupported format " + std::to_string(m.format));
    m.tool_version = j.at("tool_version").get<std::string>();
    m.module_versions = j.at("module_versions").get<std::map<std::string, std::string>>();
    m.verb = j.at("verb").get<std::string>();
    m.params = j.at("params");
    m.config_ini = j.at("config").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.inputs = digests_from_json(j.at("inputs"));
    m.outputs = digests_from_json(j.at("outputs"));
    m.started_at = j.value("started_at", "");
    m.finished_at = j.value("finished_at", "");
    return m;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("manifest: ") + e.what());
  }
}

void RunManifest::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest " + path.string());
  out << to_json().dump(2) << '\n';
}

RunManifest RunManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read manifest " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("manifest " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

std::map<std::string, std::string> module_versions() {
  const std::string own = LMSCALE_VERSION;
  return {{"lmscale", own},
          {"tokenizer", own},
          {"covstats", own},
          {"fitkit", own},
          {"theory", own},
          {"collapse", own},
          {"synthlang", own},
          {"pipeline", own},
          {"icu", U_ICU_VERSION},
          {"boost", BOOST_LIB_VERSION},
          {"openssl", OPENSSL_VERSION_TEXT},
          {"libcurl", LIBCURL_VERSION},
          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace lmscale
