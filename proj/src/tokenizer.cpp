#include "lmscale/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <queue>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "lmscale/error.hpp"
#include "lmscale/parallel.hpp"
#include "lmscale/unicode_text.hpp"

namespace lmscale {

namespace {

constexpr int kVocabFormatVersion = 1;

std::uint64_t pair_key(TokenId left, TokenId right) {
  return (static_cast<std::uint64_t>(left) << 32) | right;
}

TokenId key_left(std::uint64_t key) { return static_cast<TokenId>(key >> 32); }
TokenId key_right(std::uint64_t key) { return static_cast<TokenId>(key & 0xffffffffu); }

// Replaces every non-overlapping occurrence of (left, right), scanning left to
// right, with `merged`. Returns true if anything changed.
bool merge_in_place(std::vector<TokenId>& symbols, TokenId left, TokenId right, TokenId merged) {
  std::size_t out = 0;
  bool changed = false;
  for (std::size_t i = 0; i < symbols.size();) {
    if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
      symbols[out++] = merged;
      i += 2;
      changed = true;
    } else {
      symbols[out++] = symbols[i++];
    }
  }
  symbols.resize(out);
  return changed;
}

std::vector<TokenId> byte_ids(std::string_view word) {
  std::vector<TokenId> ids;
  ids.reserve(word.size());
  for (unsigned char b : word) ids.push_back(b);
  return ids;
}

struct HeapEntry {
  std::int64_t count;
  std::uint64_t key;
};

// Max-heap order: higher count first, then the lexicographically smaller
// (left bytes, right bytes).
struct HeapLess {
  const Vocabulary* vocab;
  bool operator()(const HeapEntry& a, const HeapEntry& b) const {
    if (a.count != b.count) return a.count < b.count;
    const auto& al = vocab->token_bytes(key_left(a.key));
    const auto& bl = vocab->token_bytes(key_left(b.key));
    if (al != bl) return al > bl;
    const auto& ar = vocab->token_bytes(key_right(a.key));
    const auto& br = vocab->token_bytes(key_right(b.key));
    if (ar != br) return ar > br;
    return a.key > b.key;
  }
};

}  // namespace

Vocabulary::Vocabulary() {
  tokens_.reserve(kByteSymbols);
  for (std::uint32_t b = 0; b < kByteSymbols; ++b) {
    tokens_.emplace_back(1, static_cast<char>(b));
    token_to_id_.emplace(tokens_.back(), b);
  }
}

TokenId Vocabulary::add_merge(TokenId left, TokenId right) {
  if (left >= tokens_.size() || right >= tokens_.size())
    throw DataError("vocabulary: merge refers to unknown id " +
                    std::to_string(std::max(left, right)));
  if (merge_rank_.count(pair_key(left, right)))
    throw DataError("vocabulary: duplicate merge (" + std::to_string(left) + ", " +
                    std::to_string(right) + ")");
  const TokenId id = static_cast<TokenId>(tokens_.size());
  merge_rank_.emplace(pair_key(left, right), static_cast<std::uint32_t>(merges_.size()));
  merges_.emplace_back(left, right);
  tokens_.push_back(tokens_[left] + tokens_[right]);
  token_to_id_.emplace(tokens_.back(), id);
  return id;
}

std::int64_t Vocabulary::find(std::string_view bytes) const {
  const auto it = token_to_id_.find(std::string(bytes));
  return it == token_to_id_.end() ? -1 : static_cast<std::int64_t>(it->second);
}

std::int64_t Vocabulary::merge_rank(TokenId left, TokenId right) const {
  const auto it = merge_rank_.find(pair_key(left, right));
  return it == merge_rank_.end() ? -1 : static_cast<std::int64_t>(it->second);
}

std::string Vocabulary::to_json() const {
  nlohmann::ordered_json j;
  j["version"] = kVocabFormatVersion;
  j["size"] = size();
  auto merges = nlohmann::ordered_json::array();
  for (const auto& [l, r] : merges_) merges.push_back({l, r});
  j["merges"] = std::move(merges);
  j["specials"]["eos"] = {{"id", eos_id()}, {"token", std::string(kEosToken)}};
  auto tokens = nlohmann::ordered_json::array();
  for (const auto& t : tokens_) tokens.push_back(text::bytes_to_printable(t));
  j["tokens"] = std::move(tokens);
  return j.dump(1);
}

Vocabulary Vocabulary::from_json(std::string_view json) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("vocabulary: invalid JSON: ") + e.what());
  }
  try {
    if (j.at("version").get<int>() != kVocabFormatVersion)
      throw DataError("vocabulary: unsupported version " + j.at("version").dump());
    Vocabulary vocab;
    for (const auto& m : j.at("merges")) {
      if (!m.is_array() || m.size() != 2) throw DataError("vocabulary: merge must be a pair");
      TokenId ids[2];
      for (int s = 0; s < 2; ++s) {
        if (m[s].is_number_unsigned()) {
          ids[s] = m[s].get<TokenId>();
        } else if (m[s].is_string()) {
          const auto found = vocab.find(text::printable_to_bytes(m[s].get<std::string>()));
          if (found < 0) throw DataError("vocabulary: unknown merge symbol " + m[s].dump());
          ids[s] = static_cast<TokenId>(found);
        } else {
          throw DataError("vocabulary: merge symbols must be ids or token strings");
        }
      }
      vocab.add_merge(ids[0], ids[1]);
    }
    if (j.contains("size") && j["size"].get<std::uint32_t>() != vocab.size())
      throw DataError("vocabulary: declared size " + j["size"].dump() + " but merges imply " +
                      std::to_string(vocab.size()));
    if (j.contains("specials") && j["specials"].contains("eos")) {
      const auto& eos = j["specials"]["eos"];
      const TokenId eos_id = eos.is_object() ? eos.at("id").get<TokenId>() : eos.get<TokenId>();
      if (eos_id != vocab.eos_id())
        throw DataError("vocabulary: eos id must be size - 1 = " + std::to_string(vocab.eos_id()));
    }
    return vocab;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("vocabulary: ") + e.what());
  }
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vocabulary " + path.string());
  out << to_json() << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read vocabulary " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return from_json(buffer.str());
}

void WordCounter::add_document(std::string_view utf8) {
  const auto words = text::pretokenize(text::nfc(utf8));
  if (words.empty()) return;
  ++documents_;
  for (const auto& w : words) ++counts_[w];
}

Vocabulary train_bpe(const WordCounter& words, std::uint32_t vocab_size) {
  const std::uint32_t base = Vocabulary::kByteSymbols + 1;
  if (vocab_size < base)
    throw ConfigError("vocab_size must be at least " + std::to_string(base) +
                      " (256 byte symbols plus EOS)");
  if (words.counts().empty()) throw DataError("train_bpe: corpus is empty");

  Vocabulary vocab;
  std::vector<std::vector<TokenId>> symbols;
  std::vector<std::int64_t> freq;
  for (const auto& [w, c] : words.counts()) {
    symbols.push_back(byte_ids(w));
    freq.push_back(static_cast<std::int64_t>(c));
  }

  std::unordered_map<std::uint64_t, std::int64_t> pair_counts;
  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> where;
  std::priority_queue<HeapEntry, std::vector<HeapEntry>, HeapLess> heap(HeapLess{&vocab});
  std::unordered_set<std::uint64_t> touched;

  auto push = [&](std::uint64_t key) {
    const std::int64_t c = pair_counts[key];
    if (c > 0) heap.push({c, key});
  };
  auto account = [&](std::uint32_t w, std::int64_t sign) {
    const auto& s = symbols[w];
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
      const std::uint64_t key = pair_key(s[i], s[i + 1]);
      pair_counts[key] += sign * freq[w];
      touched.insert(key);
      if (sign > 0) where[key].push_back(w);
    }
  };

  for (std::uint32_t w = 0; w < symbols.size(); ++w) account(w, +1);
  for (std::uint64_t key : touched) push(key);
  touched.clear();

  const std::uint32_t wanted_merges = vocab_size - base;
  while (vocab.merges().size() < wanted_merges) {
    HeapEntry top{};
    bool found = false;
    while (!heap.empty()) {
      top = heap.top();
      heap.pop();
      const auto it = pair_counts.find(top.key);
      if (it != pair_counts.end() && it->second == top.count && top.count > 0) {
        found = true;
        break;
      }
    }
    if (!found)
      throw DataError("train_bpe: corpus runs out of mergeable pairs; achievable vocabulary size is " +
                      std::to_string(vocab.size()) + ", requested " + std::to_string(vocab_size));

    const TokenId left = key_left(top.key);
    const TokenId right = key_right(top.key);
    const TokenId merged = vocab.add_merge(left, right);

    auto candidates = std::move(where[top.key]);
    where.erase(top.key);
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
    for (std::uint32_t w : candidates) {
      auto probe = symbols[w];
      if (!merge_in_place(probe, left, right, merged)) continue;
      account(w, -1);
      symbols[w] = std::move(probe);
      account(w, +1);
    }
    for (std::uint64_t key : touched) push(key);
    touched.clear();
    pair_counts.erase(top.key);
  }
  return vocab;
}

Vocabulary train_bpe(const std::vector<std::string>& documents, std::uint32_t vocab_size) {
  WordCounter counter;
  for (const auto& d : documents) counter.add_document(d);
  return train_bpe(counter, vocab_size);
}

const std::vector<TokenId>& Encoder::encode_word(const std::string& word_bytes) {
  const auto hit = cache_.find(word_bytes);
  if (hit != cache_.end()) return hit->second;
  std::vector<TokenId> s = byte_ids(word_bytes);
  while (s.size() > 1) {
    std::int64_t best = -1;
    std::size_t best_pos = 0;
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
      const std::int64_t r = vocab_->merge_rank(s[i], s[i + 1]);
      if (r >= 0 && (best < 0 || r < best)) {
        best = r;
        best_pos = i;
      }
    }
    if (best < 0) break;
    const TokenId left = s[best_pos];
    const TokenId right = s[best_pos + 1];
    merge_in_place(s, left, right, Vocabulary::kByteSymbols + static_cast<TokenId>(best));
  }
  return cache_.emplace(word_bytes, std::move(s)).first->second;
}

void Encoder::encode_document(std::string_view utf8, std::vector<TokenId>& out) {
  for (const auto& w : text::pretokenize(text::nfc(utf8))) {
    const auto& ids = encode_word(w);
    out.insert(out.end(), ids.begin(), ids.end());
  }
}

TokenStream encode(const std::vector<std::string>& documents, const Vocabulary& vocab) {
  const unsigned shards =
      static_cast<unsigned>(std::max<std::size_t>(1, std::min<std::size_t>(resolve_threads(0), documents.size())));
  const std::size_t per_shard = (documents.size() + shards - 1) / std::max(1u, shards);
  std::vector<std::vector<std::vector<TokenId>>> encoded(shards);
  parallel_for(shards, [&](std::size_t s) {
    Encoder encoder(vocab);
    const std::size_t begin = s * per_shard;
    const std::size_t end = std::min(documents.size(), begin + per_shard);
    for (std::size_t d = begin; d < end; ++d) {
      std::vector<TokenId> ids;
      encoder.encode_document(documents[d], ids);
      encoded[s].push_back(std::move(ids));
    }
  });

  TokenStream stream;
  stream.vocab_size = vocab.size();
  bool first = true;
  for (auto& shard : encoded) {
    for (auto& doc : shard) {
      if (doc.empty()) continue;
      if (!first) stream.ids.push_back(vocab.eos_id());
      first = false;
      stream.ids.insert(stream.ids.end(), doc.begin(), doc.end());
    }
  }
  return stream;
}

std::vector<std::string> decode_documents(std::span<const TokenId> ids, const Vocabulary& vocab) {
  std::vector<std::string> docs(1);
  for (TokenId id : ids) {
    if (id == vocab.eos_id()) {
      docs.emplace_back();
    } else if (id < vocab.eos_id()) {
      docs.back() += vocab.token_bytes(id);
    } else {
      throw DataError("decode: id " + std::to_string(id) + " outside vocabulary of size " +
                      std::to_string(vocab.size()));
    }
  }
  if (ids.empty()) docs.clear();
  return docs;
}

void for_each_document(std::istream& in, const DocumentSplit& split,
                       const std::function<void(std::string_view)>& visit) {
  if (split.mode == DocumentSplit::Mode::line) {
    std::string line;
    while (std::getline(in, line)) visit(line);
    return;
  }
  if (split.mode == DocumentSplit::Mode::blank_line) {
    std::string line;
    std::string doc;
    while (std::getline(in, line)) {
      const bool blank = std::all_of(line.begin(), line.end(), [](unsigned char c) {
        return c == ' ' || c == '\t' || c == '\r';
      });
      if (blank) {
        if (!doc.empty()) visit(doc);
        doc.clear();
      } else {
        doc += line;
        doc += '\n';
      }
    }
    if (!doc.empty()) visit(doc);
    return;
  }
  if (split.separator.empty()) throw ConfigError("document separator must be nonempty");
  std::string buffer;
  std::vector<char> chunk(1 << 20);
  while (in) {
    in.read(chunk.data(), static_cast<std::streamsize>(chunk.size()));
    const std::size_t got = static_cast<std::size_t>(in.gcount());
    if (got == 0) break;
    buffer.append(chunk.data(), got);
    std::size_t start = 0;
    for (std::size_t pos; (pos = buffer.find(split.separator, start)) != std::string::npos;) {
      visit(std::string_view(buffer).substr(start, pos - start));
      start = pos + split.separator.size();
    }
    buffer.erase(0, start);
  }
  visit(buffer);
}

}  // namespace lmscale
