#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace omnet {

/// Packed bit vector, one bit per parameter. Unused high bits of the last word
/// are always zero so that word-level equality and popcount are exact.
class BitVector {
 public:
  BitVector() = default;
  explicit BitVector(std::size_t size, bool value = false)
      : size_(size), words_((size + 63) / 64, value ? ~std::uint64_t{0} : 0) {
    trim();
  }

  std::size_t size() const noexcept { return size_; }

  bool operator[](std::size_t i) const noexcept { return (words_[i >> 6] >> (i & 63)) & 1U; }

  bool at(std::size_t i) const {
    if (i >= size_) throw std::out_of_range("BitVector::at");
    return (*this)[i];
  }

  void set(std::size_t i, bool value) noexcept {
    const std::uint64_t bit = std::uint64_t{1} << (i & 63);
    if (value)
      words_[i >> 6] |= bit;
    else
      words_[i >> 6] &= ~bit;
  }

  std::size_t count() const noexcept {
    std::size_t c = 0;
    for (auto w : words_) c += static_cast<std::size_t>(std::popcount(w));
    return c;
  }

  /// Number of indices set in both vectors.
  std::size_t count_and(const BitVector& other) const {
    if (other.size_ != size_) throw std::invalid_argument("BitVector: size mismatch");
    std::size_t c = 0;
    for (std::size_t k = 0; k < words_.size(); ++k)
      c += static_cast<std::size_t>(std::popcount(words_[k] & other.words_[k]));
    return c;
  }

  const std::vector<std::uint64_t>& words() const noexcept { return words_; }

  static BitVector from_words(std::size_t size, std::vector<std::uint64_t> words) {
    if (words.size() != (size + 63) / 64) throw std::invalid_argument("BitVector: word count");
    BitVector b;
    b.size_ = size;
    b.words_ = std::move(words);
    const std::uint64_t last = b.words_.empty() ? 0 : b.words_.back();
    b.trim();
    if (!b.words_.empty() && b.words_.back() != last)
      throw std::invalid_argument("BitVector: padding bits set");
    return b;
  }

  friend bool operator==(const BitVector&, const BitVector&) = default;

 private:
  void trim() noexcept {
    if (size_ % 64 != 0 && !words_.empty())
      words_.back() &= (std::uint64_t{1} << (size_ % 64)) - 1;
  }

  std::size_t size_ = 0;
  std::vector<std::uint64_t> words_;
};

}  // namespace omnet
