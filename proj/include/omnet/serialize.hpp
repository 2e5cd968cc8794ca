#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace omnet {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Append-only little-endian byte sink.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void tag(std::string_view t) { raw(t.data(), t.size()); }

  void str(std::string_view s) {
    u64(s.size());
    raw(s.data(), s.size());
  }

  void f64s(std::span<const double> v) {
    u64(v.size());
    raw(v.data(), v.size() * sizeof(double));
  }

  void u64s(std::span<const std::uint64_t> v) {
    u64(v.size());
    raw(v.data(), v.size() * sizeof(std::uint64_t));
  }

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }

  std::vector<std::uint8_t> bytes_;
};

/// Bounds-checked reader over a byte buffer; throws FormatError on truncation.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8() {
    std::uint8_t v;
    raw(&v, 1);
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, sizeof v);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, sizeof v);
    return v;
  }
  double f64() {
    double v;
    raw(&v, sizeof v);
    return v;
  }

  void expect_tag(std::string_view t) {
    std::string got(t.size(), '\0');
    raw(got.data(), got.size());
    if (got != t) throw FormatError("expected section '" + std::string(t) + "'");
  }

  std::string str() {
    const auto n = length(1);
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }

  std::vector<double> f64s() {
    const auto n = length(sizeof(double));
    std::vector<double> v(n);
    raw(v.data(), n * sizeof(double));
    return v;
  }

  std::vector<std::uint64_t> u64s() {
    const auto n = length(sizeof(std::uint64_t));
    std::vector<std::uint64_t> v(n);
    raw(v.data(), n * sizeof(std::uint64_t));
    return v;
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  std::size_t length(std::size_t elem) {
    const auto n = u64();
    if (n > (bytes_.size() - pos_) / elem) throw FormatError("length field exceeds buffer");
    return static_cast<std::size_t>(n);
  }

  void raw(void* p, std::size_t n) {
    if (n > bytes_.size() - pos_) throw FormatError("unexpected end of data");
    std::memcpy(p, bytes_.data() + pos_, n);
    pos_ += n;
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace omnet
