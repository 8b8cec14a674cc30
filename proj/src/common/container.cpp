#include "common/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "common/error.hpp"

namespace infusion {

namespace {
constexpr std::array<char, 8> kMagic = {'I', 'N', 'F', 'U', 'S', 'I', 'O', 'N'};
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::str(std::string_view s) {
  u64(s.size());
  bytes_.insert(bytes_.end(), s.begin(), s.end());
}

void ByteWriter::f64s(std::span<const double> values) {
  u64(values.size());
  for (double v : values) f64(v);
}

void ByteReader::need(std::size_t n) const {
  if (bytes_.size() - pos_ < n)
    fail(ErrorCode::format, context_ + ": truncated (needed " + std::to_string(n) + " bytes at offset " +
                                std::to_string(pos_) + ")");
}

std::uint8_t ByteReader::u8() {
  need(1);
  return bytes_[pos_++];
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
  pos_ += 8;
  return v;
}

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string ByteReader::str() {
  std::uint64_t n = u64();
  need(n);
  std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
  pos_ += n;
  return s;
}

std::vector<double> ByteReader::f64s() {
  std::uint64_t n = u64();
  need(n * 8);
  std::vector<double> out(n);
  for (auto& v : out) v = f64();
  return out;
}

std::span<const std::uint8_t> ByteReader::raw(std::size_t n) {
  need(n);
  auto s = bytes_.subspan(pos_, n);
  pos_ += n;
  return s;
}

std::array<char, 4> make_tag(std::string_view tag) {
  require(tag.size() == 4, ErrorCode::invalid_argument, "section tag must be 4 characters");
  return {tag[0], tag[1], tag[2], tag[3]};
}

std::vector<std::uint8_t> encode_container(const std::vector<Section>& sections) {
  ByteWriter w;
  for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u32(kContainerVersion);
  w.u32(static_cast<std::uint32_t>(sections.size()));
  for (const auto& s : sections) {
    for (char c : s.tag) w.u8(static_cast<std::uint8_t>(c));
    w.u64(s.payload.size());
    w.raw(s.payload);
  }
  std::uint64_t sum = fnv1a64(w.bytes());
  w.u64(sum);
  return w.take();
}

std::vector<Section> decode_container(std::span<const std::uint8_t> bytes, const std::string& source) {
  if (bytes.size() < kMagic.size() + 16)
    fail(ErrorCode::format, source + ": truncated file (" + std::to_string(bytes.size()) + " bytes)");
  if (std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0)
    fail(ErrorCode::format, source + ": bad magic bytes");

  auto body = bytes.first(bytes.size() - 8);
  ByteReader r(body, source);
  r.raw(kMagic.size());
  std::uint32_t version = r.u32();
  if (version != kContainerVersion)
    fail(ErrorCode::version, source + ": container version " + std::to_string(version) + ", expected " +
                                 std::to_string(kContainerVersion));

  ByteReader tail(bytes.last(8), source);
  std::uint64_t stored = tail.u64();
  if (fnv1a64(body) != stored) fail(ErrorCode::checksum, source + ": checksum mismatch");
  std::uint32_t count = r.u32();
  std::vector<Section> sections;
  sections.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Section s;
    auto tag = r.raw(4);
    std::memcpy(s.tag.data(), tag.data(), 4);
    std::uint64_t len = r.u64();
    auto payload = r.raw(len);
    s.payload.assign(payload.begin(), payload.end());
    sections.push_back(std::move(s));
  }
  if (!r.done()) fail(ErrorCode::format, source + ": trailing bytes after last section");
  return sections;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::io, "write failed: " + path.string());
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open for reading: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

const Section* find_section(const std::vector<Section>& sections, std::string_view tag) {
  for (const auto& s : sections)
    if (std::string_view(s.tag.data(), 4) == tag) return &s;
  return nullptr;
}

}  // namespace infusion
