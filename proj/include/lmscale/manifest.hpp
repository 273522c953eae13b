#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

namespace lmscale {

struct FileDigest {
  std::string path;
  std::string sha256;
  std::uint64_t bytes = 0;
};

FileDigest digest_file(const std::filesystem::path& path);

/// Everything needed to re-run one job: the verb, its parameters, the full
/// configuration text, and digests of every input and output file.
struct RunManifest {
  int format = 1;
  std::string tool_version;
  std::map<std::string, std::string> module_versions;
  std::string verb;
  nlohmann::json params = nlohmann::json::object();
  std::string config_ini;
  std::string config_hash;
  std::map<std::string, FileDigest> inputs;
  std::map<std::string, FileDigest> outputs;
  std::string started_at;
  std::string finished_at;

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static RunManifest load(const std::filesystem::path& path);
};

/// Version strings of this library and of the libraries it links.
std::map<std::string, std::string> module_versions();

/// Current UTC time as YYYY-MM-DDTHH:MM:SSZ.
std::string utc_timestamp();

}  // namespace lmscale
