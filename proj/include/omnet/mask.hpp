#pragma once

// Frozen Bernoulli masks carving N overlapping subnetworks out of one dense
// parameter vector, plus the per-iteration random masks of infinity mode.

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "omnet/bitvector.hpp"
#include "omnet/nn.hpp"
#include "omnet/rng.hpp"
#include "omnet/serialize.hpp"

namespace omnet {

/// Linear weights and biases are maskable; layer-norm gain/bias are shared by
/// every subnetwork.
inline BitVector mask_coverage(const Architecture& arch) {
  BitVector cov(arch.size(), false);
  for (const auto& block : arch.layout())
    if (block.kind == ParamKind::weight || block.kind == ParamKind::bias)
      for (std::size_t k = 0; k < block.length; ++k) cov.set(block.offset + k, true);
  return cov;
}

namespace detail {

inline void check_sparsity(double sparsity) {
  if (!(sparsity >= 0.0 && sparsity < 1.0))
    throw std::invalid_argument("sparsity must lie in [0, 1); got " + std::to_string(sparsity));
}

inline BitVector bernoulli_mask(const BitVector& coverage, double sparsity, Rng& rng) {
  const double keep = 1.0 - sparsity;
  BitVector m(coverage.size(), true);
  for (std::size_t j = 0; j < coverage.size(); ++j)
    if (coverage[j]) m.set(j, rng.uniform() < keep);
  return m;
}

}  // namespace detail

/// N immutable binary masks over a flat parameter vector.
class MaskSet {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  MaskSet() = default;

  std::size_t count() const noexcept { return masks_.size(); }
  std::size_t size() const noexcept { return coverage_.size(); }
  double sparsity() const noexcept { return sparsity_; }
  std::uint64_t seed() const noexcept { return seed_; }
  const BitVector& coverage() const noexcept { return coverage_; }

  const BitVector& operator[](std::size_t k) const { return masks_.at(k); }

  /// Layout: "OMNM", u32 version, u64 n, u32 N, f64 S, u64 seed,
  /// u64 coverage length, coverage words, then N masks of ceil(n/64) words.
  /// Words are little-endian u64; bit j lives in word j/64 at position j%64.
  std::vector<std::uint8_t> serialize() const {
    ByteWriter w;
    write(w);
    return w.take();
  }

  void write(ByteWriter& w) const {
    w.tag("OMNM");
    w.u32(kFormatVersion);
    w.u64(size());
    w.u32(static_cast<std::uint32_t>(count()));
    w.f64(sparsity_);
    w.u64(seed_);
    w.u64(coverage_.size());
    for (auto word : coverage_.words()) w.u64(word);
    for (const auto& m : masks_)
      for (auto word : m.words()) w.u64(word);
  }

  static MaskSet deserialize(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    auto set = read(r);
    if (!r.at_end()) throw FormatError("MaskSet: trailing bytes");
    return set;
  }

  static MaskSet read(ByteReader& r) {
    r.expect_tag("OMNM");
    if (r.u32() != kFormatVersion) throw FormatError("MaskSet: unsupported version");
    MaskSet s;
    const auto n = r.u64();
    const auto count = r.u32();
    s.sparsity_ = r.f64();
    s.seed_ = r.u64();
    if (r.u64() != n) throw FormatError("MaskSet: coverage length differs from n");
    if (count < 1) throw FormatError("MaskSet: zero masks");
    const auto words = (n + 63) / 64;
    auto read_bits = [&] {
      std::vector<std::uint64_t> ws(words);
      for (auto& word : ws) word = r.u64();
      return BitVector::from_words(n, std::move(ws));
    };
    s.coverage_ = read_bits();
    for (std::uint32_t k = 0; k < count; ++k) {
      auto m = read_bits();
      for (std::size_t j = 0; j < n; ++j)
        if (!s.coverage_[j] && !m[j]) throw FormatError("MaskSet: shared parameter masked out");
      s.masks_.push_back(std::move(m));
    }
    return s;
  }

  friend bool operator==(const MaskSet&, const MaskSet&) = default;

 private:
  friend MaskSet sample_masks(const BitVector&, std::size_t, double, std::uint64_t);

  std::vector<BitVector> masks_;
  BitVector coverage_;
  double sparsity_ = 0.0;
  std::uint64_t seed_ = 0;
};

/// Each maskable entry of each mask is 1 with probability 1 - sparsity. Mask k
/// draws from its own stream, so mask k is the same for any count > k.
inline MaskSet sample_masks(const BitVector& coverage, std::size_t count, double sparsity, std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("sample_masks: need at least one subnetwork");
  detail::check_sparsity(sparsity);
  MaskSet s;
  s.coverage_ = coverage;
  s.sparsity_ = sparsity;
  s.seed_ = seed;
  for (std::size_t k = 0; k < count; ++k) {
    Rng rng(derive_seed(seed, 0x6d61736b00ULL + k));
    s.masks_.push_back(detail::bernoulli_mask(coverage, sparsity, rng));
  }
  return s;
}

inline MaskSet sample_masks(const Architecture& arch, std::size_t count, double sparsity, std::uint64_t seed) {
  return sample_masks(mask_coverage(arch), count, sparsity, seed);
}

/// A fresh i.i.d. mask for infinity mode; never stored.
inline BitVector infinity_mask(const BitVector& coverage, double sparsity, Rng& rng) {
  detail::check_sparsity(sparsity);
  return detail::bernoulli_mask(coverage, sparsity, rng);
}

/// theta ⊙ m.
inline std::vector<double> apply_mask(std::span<const double> theta, const BitVector& mask) {
  if (theta.size() != mask.size()) throw std::invalid_argument("apply_mask: length mismatch");
  std::vector<double> out(theta.size());
  for (std::size_t j = 0; j < theta.size(); ++j) out[j] = mask[j] ? theta[j] : 0.0;
  return out;
}

/// Forward through the subnetwork theta ⊙ m; a null mask means the dense network.
inline ForwardTrace masked_forward(const Architecture& arch, std::span<const double> theta, const BitVector* mask,
                                   const Matrix& x) {
  if (!mask) return forward(arch, theta, x);
  const auto sub = apply_mask(theta, *mask);
  return forward(arch, sub, x);
}

inline ForwardTrace masked_forward(const MlpParams& params, const BitVector& mask, const Matrix& x) {
  return masked_forward(params.arch, params.theta, &mask, x);
}

/// Gradients of the subnetwork output wrt theta (zero where m = 0) and, on
/// request, wrt the input.
inline Gradients masked_backward(const Architecture& arch, std::span<const double> theta, const BitVector* mask,
                                 const ForwardTrace& trace, const Matrix& output_grad, bool want_params = true,
                                 bool want_input = false) {
  if (!mask) return backward(arch, theta, trace, output_grad, want_params, want_input);
  if (mask->size() != theta.size()) throw std::invalid_argument("masked_backward: mask length mismatch");
  const auto sub = apply_mask(theta, *mask);
  auto g = backward(arch, sub, trace, output_grad, want_params, want_input);
  if (want_params)
    for (std::size_t j = 0; j < g.params.size(); ++j)
      if (!(*mask)[j]) g.params[j] = 0.0;
  return g;
}

inline std::vector<double> masked_grad(const MlpParams& params, const BitVector& mask, const ForwardTrace& trace,
                                       const Matrix& output_grad) {
  return masked_backward(params.arch, params.theta, &mask, trace, output_grad).params;
}

/// Uniform subnetwork index draws. Indices are 0-based.
class SubnetSelector {
 public:
  SubnetSelector() = default;
  SubnetSelector(std::size_t count, std::uint64_t seed) : count_(count), rng_(seed) {
    if (count < 1) throw std::invalid_argument("SubnetSelector: need at least one subnetwork");
  }

  std::size_t count() const noexcept { return count_; }

  /// With a single subnetwork no randomness is consumed.
  std::size_t draw_index() { return count_ == 1 ? 0 : static_cast<std::size_t>(rng_.index(count_)); }

  /// Uniform over ordered pairs of distinct indices.
  std::pair<std::size_t, std::size_t> draw_two_distinct() {
    if (count_ < 2)
      throw std::invalid_argument("draw_two_distinct: needs at least 2 subnetworks, have " + std::to_string(count_));
    const auto first = static_cast<std::size_t>(rng_.index(count_));
    auto second = static_cast<std::size_t>(rng_.index(count_ - 1));
    if (second >= first) ++second;
    return {first, second};
  }

  Rng& rng() noexcept { return rng_; }
  const Rng& rng() const noexcept { return rng_; }

 private:
  std::size_t count_ = 1;
  Rng rng_;
};

}  // namespace omnet
