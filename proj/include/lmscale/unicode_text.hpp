#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace lmscale::text {

/// NFC-normalizes UTF-8 input. Ill-formed sequences become U+FFFD.
std::string nfc(std::string_view utf8);

/// True for code points with the Unicode White_Space property.
bool is_unicode_whitespace(char32_t cp);

/// Splits NFC text on Unicode whitespace. Every word except the first one of
/// the text carries a leading 0x20 byte, which marks it as word-initial.
std::vector<std::string> pretokenize(std::string_view nfc_utf8);

/// The normalization under which decode(encode(t)) == t holds: NFC, then
/// whitespace runs collapsed to one space, leading and trailing whitespace
/// removed.
std::string normalize(std::string_view utf8);

/// Printable rendering of raw bytes used for token strings in vocabulary
/// files (the usual byte-level BPE table: printable ASCII/Latin-1 bytes map to
/// themselves, the rest to U+0100 and above, so 0x20 renders as "Ġ").
std::string bytes_to_printable(std::string_view bytes);

/// Inverse of bytes_to_printable; throws DataError on characters outside the
/// table.
std::string printable_to_bytes(std::string_view printable);

}  // namespace lmscale::text
