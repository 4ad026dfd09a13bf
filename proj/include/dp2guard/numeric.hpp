#pragma once

// Gradient vectors and the 2^64 fixed-point ring that carries masked shares.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "dp2guard/errors.hpp"
#include "dp2guard/rng.hpp"

namespace dp2guard {

using GradientVector = Eigen::VectorXd;
using RingWords = Eigen::Matrix<std::uint64_t, Eigen::Dynamic, 1>;

inline constexpr int kDefaultScaleBits = 16;
/// Fractional bits used for aggregation weights before the ring multiply.
inline constexpr int kWeightBits = 32;

/// Vector over Z / 2^64 interpreted as two's-complement fixed point with
/// `scale_bits` fractional bits. All arithmetic wraps.
struct RingVector {
  RingWords words;
  int scale_bits = kDefaultScaleBits;

  RingVector() = default;
  RingVector(Eigen::Index d, int scale) : words(RingWords::Zero(d)), scale_bits(scale) {}
  RingVector(RingWords w, int scale) : words(std::move(w)), scale_bits(scale) {}

  Eigen::Index size() const { return words.size(); }
  friend bool operator==(const RingVector& a, const RingVector& b) {
    return a.scale_bits == b.scale_bits && a.words.size() == b.words.size() &&
           (a.words.array() == b.words.array()).all();
  }
};

/// Largest magnitude encode_fixed accepts (exclusive).
inline double encode_limit(int scale_bits) { return std::ldexp(1.0, 63 - scale_bits); }

/// Client-side L-inf clip bound. Leaves room for the 2^kWeightBits weight
/// multiply plus one bit of weight-rounding overshoot during aggregation.
inline double clip_bound(int scale_bits) {
  return std::ldexp(1.0, 63 - scale_bits - kWeightBits - 1);
}

template <class Derived>
RingVector encode_fixed(const Eigen::MatrixBase<Derived>& v, int scale_bits = kDefaultScaleBits) {
  if (scale_bits < 0 || scale_bits > 62) throw PreconditionError("encode_fixed: scale_bits out of range");
  const double limit = encode_limit(scale_bits);
  RingVector out(v.size(), scale_bits);
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    const double x = static_cast<double>(v(k));
    if (!std::isfinite(x) || std::fabs(x) >= limit)
      throw OverflowError("encode_fixed: entry " + std::to_string(k) + " not representable");
    out.words(k) = static_cast<std::uint64_t>(std::llround(std::ldexp(x, scale_bits)));
  }
  return out;
}

GradientVector decode_fixed(const RingVector& r);

RingVector ring_add(const RingVector& a, const RingVector& b);
RingVector ring_sub(const RingVector& a, const RingVector& b);
/// Component-wise multiply by an integer constant; the result keeps a's scale.
RingVector ring_scale(const RingVector& a, std::uint64_t factor);

inline RingVector operator+(const RingVector& a, const RingVector& b) { return ring_add(a, b); }
inline RingVector operator-(const RingVector& a, const RingVector& b) { return ring_sub(a, b); }

/// Uniform over the whole ring.
RingVector uniform_ring(Eigen::Index d, int scale_bits, SeededRng& rng);

GradientVector clip_linf(const GradientVector& v, double bound);

/// Little-endian: d (uint32), scale_bits (uint8), d x uint64.
std::vector<std::uint8_t> serialize(const RingVector& r);
RingVector deserialize_ring(std::span<const std::uint8_t> bytes);

bool all_finite(const GradientVector& v);

}  // namespace dp2guard
