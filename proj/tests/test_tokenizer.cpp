#include <doctest.h>

#include <map>
#include <random>
#include <sstream>
#include <tuple>

#include "lmscale/error.hpp"
#include "lmscale/tokenizer.hpp"
#include "lmscale/unicode_text.hpp"
#include "scratch.hpp"

using namespace lmscale;

namespace {

// Recounts every pair from scratch at each step.
std::vector<std::pair<std::string, std::string>> naive_bpe(const std::vector<std::string>& docs, std::size_t merges) {
  std::map<std::vector<std::string>, std::uint64_t> words;
  for (const auto& d : docs)
    for (const auto& w : text::pretokenize(text::nfc(d))) {
      std::vector<std::string> symbols;
      for (char ch : w) symbols.emplace_back(1, ch);
      ++words[symbols];
    }
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t m = 0; m < merges; ++m) {
    std::map<std::pair<std::string, std::string>, std::uint64_t> counts;
    for (const auto& [s, f] : words)
      for (std::size_t i = 0; i + 1 < s.size(); ++i) counts[{s[i], s[i + 1]}] += f;
    if (counts.empty()) break;
    auto best = counts.begin();
    for (auto it = counts.begin(); it != counts.end(); ++it)
      if (it->second > best->second) best = it;
    out.push_back(best->first);
    std::map<std::vector<std::string>, std::uint64_t> next;
    for (const auto& [s, f] : words) {
      std::vector<std::string> merged;
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (i + 1 < s.size() && s[i] == best->first.first && s[i + 1] == best->first.second) {
          merged.push_back(s[i] + s[i + 1]);
          ++i;
        } else {
          merged.push_back(s[i]);
        }
      }
      next[merged] += f;
    }
    words.swap(next);
  }
  return out;
}

// Greedy lowest-rank encoding that rescans the whole word after each merge.
std::vector<TokenId> naive_encode_word(const Vocabulary& v, const std::string& word) {
  std::vector<TokenId> ids(word.begin(), word.end());
  for (auto& id : ids) id = static_cast<unsigned char>(id);
  while (ids.size() > 1) {
    std::int64_t best = -1;
    std::size_t at = 0;
    for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
      const auto r = v.merge_rank(ids[i], ids[i + 1]);
      if (r >= 0 && (best < 0 || r < best)) best = r, at = i;
    }
    if (best < 0) break;
    const TokenId merged = Vocabulary::kByteSymbols + static_cast<TokenId>(best);
    std::vector<TokenId> next;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i >= at && i + 1 < ids.size() && v.merge_rank(ids[i], ids[i + 1]) == best) {
        next.push_back(merged);
        ++i;
      } else {
        next.push_back(ids[i]);
      }
    }
    ids.swap(next);
  }
  return ids;
}

std::string random_text(std::mt19937_64& rng, std::size_t words) {
  static const std::vector<std::string> pieces = {"the", "cat", "sat", "on", "a", "mat", "ab", "ba", "aaa",
                                                  "caf\xC3\xA9", "na\xC3\xAFve", "\xE6\x97\xA5\xE6\x9C\xAC",
                                                  "x", "zz", "\xF0\x9F\x99\x82"};
  std::string out;
  for (std::size_t i = 0; i < words; ++i) {
    if (i) out += (rng() % 7 == 0) ? "  \n" : " ";
    out += pieces[rng() % pieces.size()];
    if (rng() % 5 == 0) out += pieces[rng() % pieces.size()];
  }
  return out;
}

}  // namespace

TEST_CASE("vocabulary layout: bytes, merges, then EOS") {
  Vocabulary v;
  CHECK(v.size() == 257);
  CHECK(v.eos_id() == 256);
  CHECK(v.token_bytes(65) == "A");
  const TokenId id = v.add_merge('a', 'b');
  CHECK(id == 256);
  CHECK(v.size() == 258);
  CHECK(v.eos_id() == 257);
  CHECK(v.find("ab") == 256);
  CHECK(v.merge_rank('a', 'b') == 0);
  CHECK(v.merge_rank('b', 'a') == -1);
  CHECK_THROWS(v.add_merge(0, 9999));
}

TEST_CASE("training matches a from-scratch recount on random corpora") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 12; ++trial) {
    std::vector<std::string> docs;
    for (int d = 0; d < 6; ++d) docs.push_back(random_text(rng, 40));
    const auto expected = naive_bpe(docs, 40);
    const Vocabulary v = train_bpe(docs, static_cast<std::uint32_t>(257 + expected.size()));
    REQUIRE(v.merges().size() == expected.size());
    for (std::size_t k = 0; k < expected.size(); ++k) {
      const auto [l, r] = v.merges()[k];
      CHECK(v.token_bytes(l) == expected[k].first);
      CHECK(v.token_bytes(r) == expected[k].second);
    }
  }
}

TEST_CASE("ties go to the lexicographically smallest pair") {
  const Vocabulary v = train_bpe(std::vector<std::string>{"cd", "ab"}, 258);
  REQUIRE(v.merges().size() == 1);
  CHECK(v.token_bytes(v.merges()[0].first) == "a");
  CHECK(v.token_bytes(v.merges()[0].second) == "b");
}

TEST_CASE("training errors") {
  CHECK_THROWS_AS(train_bpe(std::vector<std::string>{"abc"}, 256), ConfigError);
  try {
    train_bpe(std::vector<std::string>{"ab"}, 300);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("258") != std::string::npos);
  }
}

TEST_CASE("encoder agrees with naive greedy merging") {
  std::mt19937_64 rng(7);
  std::vector<std::string> docs;
  for (int d = 0; d < 20; ++d) docs.push_back(random_text(rng, 60));
  const Vocabulary v = train_bpe(docs, 400);
  Encoder enc(v);
  for (const auto& d : docs)
    for (const auto& w : text::pretokenize(text::nfc(d))) CHECK(enc.encode_word(w) == naive_encode_word(v, w));
}

TEST_CASE("decode inverts encode up to normalization") {
  std::mt19937_64 rng(3);
  std::vector<std::string> docs;
  for (int d = 0; d < 30; ++d) docs.push_back(random_text(rng, 25));
  docs.push_back("   ");
  docs.push_back("e\xCC\x81t\xC3\xA9  ");  // decomposed then precomposed e-acute
  const Vocabulary v = train_bpe(docs, 320);
  const TokenStream s = encode(docs, v);
  s.validate();
  const auto back = decode_documents(s.ids, v);
  std::vector<std::string> expected;
  for (const auto& d : docs)
    if (!text::normalize(d).empty()) expected.push_back(text::normalize(d));
  CHECK(back == expected);
  CHECK(expected.back() == "\xC3\xA9t\xC3\xA9");
  std::size_t eos = 0;
  for (auto id : s.ids) eos += id == v.eos_id();
  CHECK(eos == expected.size() - 1);
}

TEST_CASE("unseen bytes encode as base symbols and ill-formed UTF-8 becomes U+FFFD") {
  const Vocabulary v = train_bpe(std::vector<std::string>{"aaaa bbbb"}, 260);
  const TokenStream s = encode({std::string("\x01\x02 \xFF", 4)}, v);
  CHECK(s.ids == std::vector<TokenId>{1, 2, 0x20, 0xEF, 0xBF, 0xBD});
}

TEST_CASE("vocabulary JSON round trip and printable merges") {
  std::mt19937_64 rng(11);
  std::vector<std::string> docs;
  for (int d = 0; d < 10; ++d) docs.push_back(random_text(rng, 50));
  const Vocabulary v = train_bpe(docs, 300);
  const Vocabulary back = Vocabulary::from_json(v.to_json());
  CHECK(back.merges() == v.merges());
  CHECK(back.to_json() == v.to_json());

  const std::string printable = R"({"version":1,"merges":[["t","h"],["th","e"],["Ġ","the"]]})";
  const Vocabulary p = Vocabulary::from_json(printable);
  CHECK(p.size() == 260);
  CHECK(p.token_bytes(258) == " the");
  CHECK_THROWS_AS(Vocabulary::from_json(R"({"version":1,"merges":[["q","zz"]]})"), DataError);
  CHECK_THROWS(Vocabulary::from_json("not json"));

  ScratchDir dir("vocab");
  v.save(dir / "v.json");
  CHECK(Vocabulary::load(dir / "v.json").merges() == v.merges());
}

TEST_CASE("document splitting modes") {
  auto collect = [](const std::string& text, DocumentSplit split) {
    std::istringstream in(text);
    std::vector<std::string> docs;
    for_each_document(in, split, [&](std::string_view d) { docs.emplace_back(d); });
    return docs;
  };
  DocumentSplit sep;
  CHECK(collect("a b<|endoftext|>c<|endoftext|>d", sep) == std::vector<std::string>{"a b", "c", "d"});
  std::string big(3u << 20, 'x');
  const auto docs = collect(big + "<|endoftext|>" + big, sep);
  REQUIRE(docs.size() == 2);
  CHECK(docs[0].size() == big.size());
  DocumentSplit line;
  line.mode = DocumentSplit::Mode::line;
  CHECK(collect("a\nb\n", line) == std::vector<std::string>{"a", "b"});
  DocumentSplit blank;
  blank.mode = DocumentSplit::Mode::blank_line;
  const auto paras = collect("a\nb\n\n  \nc\n", blank);
  REQUIRE(paras.size() == 2);
  CHECK(paras[1].find('c') != std::string::npos);
}
