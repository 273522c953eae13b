#include "lmscale/token_stream.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <string>

#include "lmscale/error.hpp"

namespace lmscale {

namespace {

void put_u32(unsigned char* p, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) p[i] = static_cast<unsigned char>(v >> (8 * i));
}

void put_u64(unsigned char* p, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) p[i] = static_cast<unsigned char>(v >> (8 * i));
}

std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

std::array<unsigned char, kTokenStreamHeaderBytes> encode_header(const TokenStreamHeader& h) {
  std::array<unsigned char, kTokenStreamHeaderBytes> bytes{};
  std::memcpy(bytes.data(), kTokenStreamMagic, 4);
  put_u32(bytes.data() + 4, h.version);
  put_u32(bytes.data() + 8, h.vocab_size);
  put_u64(bytes.data() + 12, h.total_tokens);
  return bytes;
}

TokenStreamHeader read_header(std::istream& in, const std::filesystem::path& path) {
  std::array<unsigned char, kTokenStreamHeaderBytes> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw DataError("token stream " + path.string() + ": truncated header");
  if (std::memcmp(bytes.data(), kTokenStreamMagic, 4) != 0)
    throw DataError("token stream " + path.string() + ": bad magic");
  TokenStreamHeader h;
  h.version = get_u32(bytes.data() + 4);
  h.vocab_size = get_u32(bytes.data() + 8);
  h.total_tokens = get_u64(bytes.data() + 12);
  if (h.version != kTokenStreamVersion)
    throw DataError("token stream " + path.string() + ": unsupported version " +
                    std::to_string(h.version));
  if (h.vocab_size < 2)
    throw DataError("token stream " + path.string() + ": vocabulary size must be >= 2");
  return h;
}

}  // namespace

std::vector<std::uint64_t> TokenStream::doc_boundaries() const {
  std::vector<std::uint64_t> out;
  const TokenId e = eos();
  for (std::uint64_t i = 0; i < ids.size(); ++i)
    if (ids[i] == e) out.push_back(i);
  return out;
}

void TokenStream::validate() const {
  if (vocab_size < 2) throw DataError("token stream: vocabulary size must be >= 2");
  for (std::uint64_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= vocab_size)
      throw DataError("token stream: id " + std::to_string(ids[i]) + " at position " +
                      std::to_string(i) + " exceeds vocabulary size " +
                      std::to_string(vocab_size));
  }
}

void write_token_stream(const std::filesystem::path& path, const TokenStream& stream) {
  TokenStreamWriter writer(path, stream.vocab_size);
  writer.write(stream.ids);
  writer.close();
}

TokenStream read_token_stream(const std::filesystem::path& path) {
  TokenStreamReader reader(path);
  TokenStream out;
  out.vocab_size = reader.header().vocab_size;
  out.ids.resize(reader.header().total_tokens);
  std::size_t got = 0;
  while (got < out.ids.size()) {
    const std::size_t n = reader.read(std::span<TokenId>(out.ids).subspan(got));
    if (n == 0) break;
    got += n;
  }
  if (got != out.ids.size())
    throw DataError("token stream " + path.string() + ": expected " +
                    std::to_string(out.ids.size()) + " ids, found " + std::to_string(got));
  out.validate();
  return out;
}

TokenStreamReader::TokenStreamReader(const std::filesystem::path& path)
    : in_(path, std::ios::binary) {
  if (!in_) throw DataError("cannot open token stream " + path.string());
  header_ = read_header(in_, path);
}

std::size_t TokenStreamReader::read(std::span<TokenId> out) {
  const std::uint64_t remaining = header_.total_tokens - position_;
  const std::size_t want = static_cast<std::size_t>(std::min<std::uint64_t>(remaining, out.size()));
  if (want == 0) return 0;
  buffer_.resize(want * 4);
  in_.read(reinterpret_cast<char*>(buffer_.data()), static_cast<std::streamsize>(buffer_.size()));
  const std::size_t got = static_cast<std::size_t>(in_.gcount()) / 4;
  for (std::size_t i = 0; i < got; ++i) {
    const TokenId id = get_u32(buffer_.data() + 4 * i);
    if (id >= header_.vocab_size)
      throw DataError("token stream: id " + std::to_string(id) + " at position " +
                      std::to_string(position_ + i) + " exceeds vocabulary size");
    out[i] = id;
  }
  position_ += got;
  return got;
}

TokenStreamWriter::TokenStreamWriter(const std::filesystem::path& path, std::uint32_t vocab_size)
    : out_(path, std::ios::binary | std::ios::trunc), vocab_size_(vocab_size) {
  if (!out_) throw DataError("cannot create token stream " + path.string());
  if (vocab_size < 2) throw ConfigError("token stream: vocabulary size must be >= 2");
  const auto header = encode_header({kTokenStreamVersion, vocab_size, 0});
  out_.write(reinterpret_cast<const char*>(header.data()), header.size());
}

TokenStreamWriter::~TokenStreamWriter() {
  if (!closed_) {
    try {
      close();
    } catch (...) {
    }
  }
}

void TokenStreamWriter::write(std::span<const TokenId> ids) {
  std::vector<unsigned char> bytes(ids.size() * 4);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= vocab_size_)
      throw DataError("token stream: refusing to write id " + std::to_string(ids[i]) +
                      " >= vocabulary size " + std::to_string(vocab_size_));
    put_u32(bytes.data() + 4 * i, ids[i]);
  }
  out_.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  written_ += ids.size();
}

void TokenStreamWriter::close() {
  if (closed_) return;
  closed_ = true;
  const auto header = encode_header({kTokenStreamVersion, vocab_size_, written_});
  out_.seekp(0);
  out_.write(reinterpret_cast<const char*>(header.data()), header.size());
  out_.close();
  if (!out_) throw DataError("failed writing token stream");
}

}  // namespace lmscale
