#include "lmscale/fetch.hpp"

#include <cstdio>
#include <cstdlib>
#include <memory>

#include <curl/curl.h>

#include "lmscale/digest.hpp"
#include "lmscale/error.hpp"

namespace lmscale {

namespace {

std::size_t write_to_file(char* data, std::size_t size, std::size_t count, void* user) {
  return std::fwrite(data, size, count, static_cast<std::FILE*>(user)) * size;
}

std::string lowercase(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

std::filesystem::path cache_directory() {
  if (const char* dir = std::getenv("LMSCALE_CACHE_DIR"); dir && *dir) return dir;
  if (const char* xdg = std::getenv("XDG_CACHE_HOME"); xdg && *xdg) return std::filesystem::path(xdg) / "lmscale";
  if (const char* home = std::getenv("HOME"); home && *home) return std::filesystem::path(home) / ".cache" / "lmscale";
  return std::filesystem::temp_directory_path() / "lmscale";
}

FetchResult fetch_file(const std::string& url, std::optional<std::filesystem::path> dest,
                       std::optional<std::string> expected_sha256) {
  if (url.rfind("http://", 0) != 0 && url.rfind("https://", 0) != 0)
    throw ConfigError("fetch: only http(s) URLs are supported, got '" + url + "'");
  if (!dest) {
    std::string name = url.substr(url.find_last_of('/') + 1);
    name = name.substr(0, name.find_first_of("?#"));
    if (name.empty()) throw ConfigError("fetch: cannot derive a file name from '" + url + "'");
    dest = cache_directory() / name;
  }
  if (expected_sha256) expected_sha256 = lowercase(*expected_sha256);
  if (dest->has_parent_path()) std::filesystem::create_directories(dest->parent_path());

  if (expected_sha256 && std::filesystem::exists(*dest)) {
    const std::string have = sha256_file(*dest);
    if (have == *expected_sha256) return {*dest, have, true};
  }

  const std::filesystem::path partial = dest->string() + ".part";
  std::FILE* file = std::fopen(partial.c_str(), "wb");
  if (!file) throw DataError("fetch: cannot write " + partial.string());
  std::unique_ptr<CURL, decltype(&curl_easy_cleanup)> curl(curl_easy_init(), &curl_easy_cleanup);
  if (!curl) {
    std::fclose(file);
    throw Error("fetch: libcurl initialization failed");
  }
  char error[CURL_ERROR_SIZE] = {0};
  curl_easy_setopt(curl.get(), CURLOPT_URL, url.c_str());
  curl_easy_setopt(curl.get(), CURLOPT_FOLLOWLOCATION, 1L);
  curl_easy_setopt(curl.get(), CURLOPT_FAILONERROR, 1L);
  curl_easy_setopt(curl.get(), CURLOPT_WRITEFUNCTION, &write_to_file);
  curl_easy_setopt(curl.get(), CURLOPT_WRITEDATA, file);
  curl_easy_setopt(curl.get(), CURLOPT_ERRORBUFFER, error);
  curl_easy_setopt(curl.get(), CURLOPT_CONNECTTIMEOUT, 30L);
  const CURLcode rc = curl_easy_perform(curl.get());
  std::fclose(file);
  if (rc != CURLE_OK) {
    std::filesystem::remove(partial);
    throw DataError("fetch: " + url + ": " + (error[0] ? std::string(error) : curl_easy_strerror(rc)));
  }
  const std::string got = sha256_file(partial);
  if (expected_sha256 && got != *expected_sha256) {
    std::filesystem::remove(partial);
    throw DataError("fetch: checksum mismatch for " + url + ": expected " + *expected_sha256 + ", got " + got);
  }
  std::filesystem::rename(partial, *dest);
  return {*dest, got, false};
}

}  // namespace lmscale
