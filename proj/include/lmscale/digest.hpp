#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace lmscale {

/// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view data);

/// Lowercase hex SHA-256 of a file, streamed.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace lmscale
