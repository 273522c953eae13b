#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <istream>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lmscale/token_stream.hpp"

namespace lmscale {

/// Byte-level BPE vocabulary. Ids 0..255 are the raw bytes, id 256 + k is the
/// k-th merge, and the last id (size() - 1) is the end-of-sequence token,
/// which no merge can produce.
class Vocabulary {
 public:
  static constexpr std::uint32_t kByteSymbols = 256;
  static constexpr std::string_view kEosToken = "<|endoftext|>";

  Vocabulary();

  /// Appends a merge of two existing non-EOS ids; returns the new id.
  TokenId add_merge(TokenId left, TokenId right);

  std::uint32_t size() const { return static_cast<std::uint32_t>(tokens_.size()) + 1; }
  TokenId eos_id() const { return size() - 1; }
  const std::vector<std::pair<TokenId, TokenId>>& merges() const { return merges_; }

  /// Raw bytes of a non-EOS token.
  const std::string& token_bytes(TokenId id) const { return tokens_.at(id); }

  /// Id of a token given its raw bytes, or -1.
  std::int64_t find(std::string_view bytes) const;

  /// Merge rank of the pair (left, right) or -1 when it is not a merge.
  std::int64_t merge_rank(TokenId left, TokenId right) const;

  /// JSON document {version, size, merges: [[left,right],...], specials:{eos}}
  /// with token strings in the printable byte rendering.
  std::string to_json() const;
  static Vocabulary from_json(std::string_view json);

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  std::vector<std::string> tokens_;
  std::vector<std::pair<TokenId, TokenId>> merges_;
  std::unordered_map<std::string, TokenId> token_to_id_;
  std::unordered_map<std::uint64_t, std::uint32_t> merge_rank_;
};

/// Word-type frequencies after normalization and whitespace pre-tokenization.
/// Feed documents one at a time so corpora never have to fit in memory.
class WordCounter {
 public:
  void add_document(std::string_view utf8);
  const std::map<std::string, std::uint64_t>& counts() const { return counts_; }
  std::uint64_t documents() const { return documents_; }

 private:
  std::map<std::string, std::uint64_t> counts_;
  std::uint64_t documents_ = 0;
};

/// Trains merges until the vocabulary (256 bytes + merges + EOS) reaches
/// vocab_size. Among equally frequent pairs the lexicographically smallest
/// (left bytes, right bytes) wins. Throws DataError naming the achievable size
/// when the corpus runs out of pairs first.
Vocabulary train_bpe(const WordCounter& words, std::uint32_t vocab_size);
Vocabulary train_bpe(const std::vector<std::string>& documents, std::uint32_t vocab_size);

/// Encoder with a per-word cache. Encoding is a pure function of the
/// vocabulary, so independent encoders may run on separate shards.
class Encoder {
 public:
  explicit Encoder(const Vocabulary& vocab) : vocab_(&vocab) {}

  /// Appends the ids of one document (no EOS).
  void encode_document(std::string_view utf8, std::vector<TokenId>& out);

  /// Ids of a single pre-tokenized word.
  const std::vector<TokenId>& encode_word(const std::string& word_bytes);

 private:
  const Vocabulary* vocab_;
  std::unordered_map<std::string, std::vector<TokenId>> cache_;
};

/// Encodes documents into one stream with a single EOS between consecutive
/// non-empty documents. Documents that normalize to nothing are dropped.
TokenStream encode(const std::vector<std::string>& documents, const Vocabulary& vocab);

/// Inverse of encode up to text::normalize: one string per document.
std::vector<std::string> decode_documents(std::span<const TokenId> ids, const Vocabulary& vocab);

/// How documents are delimited inside a corpus text file.
struct DocumentSplit {
  enum class Mode { separator, line, blank_line };
  Mode mode = Mode::separator;
  std::string separator{Vocabulary::kEosToken};
};

/// Streams documents out of a text corpus without loading it whole.
void for_each_document(std::istream& in, const DocumentSplit& split,
                       const std::function<void(std::string_view)>& visit);

}  // namespace lmscale
