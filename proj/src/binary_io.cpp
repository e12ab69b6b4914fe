#include "proclip/binary_io.hpp"

#include <fstream>
#include <iterator>

namespace proclip {

std::string_view format_error_name(FormatErrorCode code) {
  switch (code) {
    case FormatErrorCode::kBadMagic:
      return "bad-magic";
    case FormatErrorCode::kVersionMismatch:
      return "version-mismatch";
    case FormatErrorCode::kTruncatedPayload:
      return "truncated-payload";
    case FormatErrorCode::kDimensionMismatch:
      return "dimension-mismatch";
    case FormatErrorCode::kIoError:
      return "io-error";
  }
  return "unknown";
}

FormatError::FormatError(FormatErrorCode code, const std::string& detail)
    : std::runtime_error(std::string(format_error_name(code)) + ": " + detail), code_(code) {}

void ByteWriter::str16(std::string_view s) {
  if (s.size() > 0xFFFF) throw std::invalid_argument("string too long for u16 length prefix");
  u16(static_cast<std::uint16_t>(s.size()));
  bytes(s);
}

std::string_view ByteReader::bytes(std::size_t n) {
  if (n > remaining()) {
    throw FormatError(FormatErrorCode::kTruncatedPayload,
                      "need " + std::to_string(n) + " bytes at offset " + std::to_string(pos_) + ", have " +
                          std::to_string(remaining()));
  }
  auto out = data_.substr(pos_, n);
  pos_ += n;
  return out;
}

void ByteReader::f32s(std::span<float> out) {
  if (out.size() * 4 > remaining()) {
    throw FormatError(FormatErrorCode::kTruncatedPayload,
                      "need " + std::to_string(out.size()) + " floats at offset " + std::to_string(pos_));
  }
  for (float& v : out) v = f32();
}

std::string ByteReader::str16() {
  const auto n = u16();
  return std::string(bytes(n));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrorCode::kIoError, "cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw FormatError(FormatErrorCode::kIoError, "read failed for " + path.string());
  return data;
}

void write_file(const std::filesystem::path& path, std::string_view data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatErrorCode::kIoError, "cannot open " + path.string() + " for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw FormatError(FormatErrorCode::kIoError, "write failed for " + path.string());
}

std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace proclip
