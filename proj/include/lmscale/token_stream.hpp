#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <vector>

namespace lmscale {

using TokenId = std::uint32_t;

/// A corpus as a flat sequence of vocabulary ids. The end-of-sequence id is
/// always `vocab_size - 1`; documents are separated by a single EOS.
struct TokenStream {
  std::vector<TokenId> ids;
  std::uint32_t vocab_size = 0;

  TokenId eos() const { return vocab_size - 1; }
  std::uint64_t total_tokens() const { return ids.size(); }

  /// Positions holding the EOS id, strictly increasing.
  std::vector<std::uint64_t> doc_boundaries() const;

  /// Throws DataError if any id is out of range.
  void validate() const;
};

/// Binary file layout, little-endian throughout:
///   bytes 0-3   magic "LMTS"
///   bytes 4-7   format version (u32, currently 1)
///   bytes 8-11  vocabulary size V (u32)
///   bytes 12-19 total token count (u64)
///   then total_tokens ids as u32.
inline constexpr char kTokenStreamMagic[4] = {'L', 'M', 'T', 'S'};
inline constexpr std::uint32_t kTokenStreamVersion = 1;
inline constexpr std::size_t kTokenStreamHeaderBytes = 20;

struct TokenStreamHeader {
  std::uint32_t version = kTokenStreamVersion;
  std::uint32_t vocab_size = 0;
  std::uint64_t total_tokens = 0;
};

void write_token_stream(const std::filesystem::path& path, const TokenStream& stream);
TokenStream read_token_stream(const std::filesystem::path& path);

/// Incremental reader for streams larger than memory.
class TokenStreamReader {
 public:
  explicit TokenStreamReader(const std::filesystem::path& path);

  const TokenStreamHeader& header() const { return header_; }

  /// Fills `out` with up to out.size() ids; returns the number read (0 at end).
  std::size_t read(std::span<TokenId> out);

  std::uint64_t position() const { return position_; }

 private:
  std::ifstream in_;
  TokenStreamHeader header_;
  std::uint64_t position_ = 0;
  std::vector<unsigned char> buffer_;
};

/// Incremental writer; the header total is patched on close().
class TokenStreamWriter {
 public:
  TokenStreamWriter(const std::filesystem::path& path, std::uint32_t vocab_size);
  ~TokenStreamWriter();
  TokenStreamWriter(const TokenStreamWriter&) = delete;
  TokenStreamWriter& operator=(const TokenStreamWriter&) = delete;

  void write(std::span<const TokenId> ids);
  void close();
  std::uint64_t written() const { return written_; }

 private:
  std::ofstream out_;
  std::uint32_t vocab_size_;
  std::uint64_t written_ = 0;
  bool closed_ = false;
};

}  // namespace lmscale
