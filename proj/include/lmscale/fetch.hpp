#pragma once

#include <filesystem>
#include <optional>
#include <string>

namespace lmscale {

/// Directory for downloaded corpora: $LMSCALE_CACHE_DIR, else
/// $XDG_CACHE_HOME/lmscale, else ~/.cache/lmscale.
std::filesystem::path cache_directory();

struct FetchResult {
  std::filesystem::path path;
  std::string sha256;
  bool from_cache = false;
};

/// Plain HTTP(S) download to `dest` (default: cache directory plus the URL's
/// file name). When `expected_sha256` is given the file is verified, an
/// existing matching file is reused, and a mismatch throws DataError after
/// removing the partial download.
FetchResult fetch_file(const std::string& url, std::optional<std::filesystem::path> dest = std::nullopt,
                       std::optional<std::string> expected_sha256 = std::nullopt);

}  // namespace lmscale
