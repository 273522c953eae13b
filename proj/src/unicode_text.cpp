#include "lmscale/unicode_text.hpp"

#include <array>

#include <unicode/normalizer2.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include "lmscale/error.hpp"

namespace lmscale::text {

namespace {

// Decodes one code point at `i`, advancing it. Input must be well-formed
// (the output of nfc()).
char32_t next_code_point(std::string_view s, std::size_t& i) {
  UChar32 c = 0;
  int32_t pos = static_cast<int32_t>(i);
  U8_NEXT(reinterpret_cast<const uint8_t*>(s.data()), pos, static_cast<int32_t>(s.size()), c);
  i = static_cast<std::size_t>(pos);
  return c < 0 ? U'\uFFFD' : static_cast<char32_t>(c);
}

struct ByteTable {
  std::array<char32_t, 256> to_cp{};
  std::array<int, 0x200> from_cp{};

  ByteTable() {
    from_cp.fill(-1);
    char32_t extra = 256;
    for (int b = 0; b < 256; ++b) {
      const bool printable = (b >= 0x21 && b <= 0x7E) || (b >= 0xA1 && b <= 0xAC) ||
                             (b >= 0xAE && b <= 0xFF);
      to_cp[b] = printable ? static_cast<char32_t>(b) : extra++;
      from_cp[to_cp[b]] = b;
    }
  }
};

const ByteTable& byte_table() {
  static const ByteTable table;
  return table;
}

void append_utf8(std::string& out, char32_t cp) {
  uint8_t buf[4];
  int32_t len = 0;
  UBool error = false;
  U8_APPEND(buf, len, 4, static_cast<UChar32>(cp), error);
  if (error) return;
  out.append(reinterpret_cast<const char*>(buf), static_cast<std::size_t>(len));
}

}  // namespace

std::string nfc(std::string_view utf8) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* normalizer = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw Error("ICU NFC normalizer unavailable");
  const icu::UnicodeString source = icu::UnicodeString::fromUTF8(
      icu::StringPiece(utf8.data(), static_cast<int32_t>(utf8.size())));
  const icu::UnicodeString normalized = normalizer->normalize(source, status);
  if (U_FAILURE(status)) throw DataError("NFC normalization failed");
  std::string out;
  normalized.toUTF8String(out);
  return out;
}

bool is_unicode_whitespace(char32_t cp) {
  switch (cp) {
    case 0x0009: case 0x000A: case 0x000B: case 0x000C: case 0x000D:
    case 0x0020: case 0x0085: case 0x00A0: case 0x1680:
    case 0x2028: case 0x2029: case 0x202F: case 0x205F: case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200A;
  }
}

std::vector<std::string> pretokenize(std::string_view s) {
  std::vector<std::string> words;
  std::string current;
  bool pending_space = false;
  std::size_t i = 0;
  while (i < s.size()) {
    const std::size_t start = i;
    const char32_t cp = next_code_point(s, i);
    if (is_unicode_whitespace(cp)) {
      if (!current.empty()) {
        words.push_back(std::move(current));
        current.clear();
      }
      pending_space = !words.empty();
      continue;
    }
    if (current.empty() && pending_space) current.push_back(' ');
    pending_space = false;
    current.append(s.substr(start, i - start));
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

std::string normalize(std::string_view utf8) {
  std::string out;
  for (const auto& w : pretokenize(nfc(utf8))) out += w;
  return out;
}

std::string bytes_to_printable(std::string_view bytes) {
  const auto& table = byte_table();
  std::string out;
  out.reserve(bytes.size() * 2);
  for (unsigned char b : bytes) append_utf8(out, table.to_cp[b]);
  return out;
}

std::string printable_to_bytes(std::string_view printable) {
  const auto& table = byte_table();
  std::string out;
  std::size_t i = 0;
  while (i < printable.size()) {
    const char32_t cp = next_code_point(printable, i);
    if (cp >= table.from_cp.size() || table.from_cp[cp] < 0)
      throw DataError("vocabulary: character U+" + std::to_string(static_cast<unsigned>(cp)) +
                      " is not a byte-level token symbol");
    out.push_back(static_cast<char>(table.from_cp[cp]));
  }
  return out;
}

}  // namespace lmscale::text
