#pragma once

// Versioned binary container used for checkpoints and curvature state.
//
//   magic   8 bytes  "INFUSION"
//   version u32      kContainerVersion
//   count   u32      number of sections
//   section*         tag (4 ASCII bytes), length (u64), payload
//   checksum u64     FNV-1a over every preceding byte
//
// All integers and doubles are little-endian.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace infusion {

inline constexpr std::uint32_t kContainerVersion = 1;

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) noexcept;

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void str(std::string_view s);
  void f64s(std::span<const double> values);
  void raw(std::span<const std::uint8_t> data) { bytes_.insert(bytes_.end(), data.begin(), data.end()); }

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::string context)
      : bytes_(bytes), context_(std::move(context)) {}

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::string str();
  std::vector<double> f64s();
  std::span<const std::uint8_t> raw(std::size_t n);

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const;

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::string context_;
};

struct Section {
  std::array<char, 4> tag{};
  std::vector<std::uint8_t> payload;

  std::string tag_string() const { return std::string(tag.data(), tag.size()); }
};

std::array<char, 4> make_tag(std::string_view tag);

std::vector<std::uint8_t> encode_container(const std::vector<Section>& sections);

// Throws Error(format|version|checksum) on malformed input; never returns a
// partially decoded result.
std::vector<Section> decode_container(std::span<const std::uint8_t> bytes, const std::string& source);

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

const Section* find_section(const std::vector<Section>& sections, std::string_view tag);

}  // namespace infusion
