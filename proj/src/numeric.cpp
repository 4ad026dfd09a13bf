#include "dp2guard/numeric.hpp"

#include <limits>

#include "dp2guard/wire.hpp"

namespace dp2guard {

namespace {
void require_compatible(const RingVector& a, const RingVector& b, const char* what) {
  if (a.size() != b.size() || a.scale_bits != b.scale_bits)
    throw DimensionMismatch(std::string(what) + ": dimension or scale mismatch");
}
}  // namespace

GradientVector decode_fixed(const RingVector& r) {
  GradientVector out(r.size());
  for (Eigen::Index k = 0; k < r.size(); ++k)
    out(k) = std::ldexp(static_cast<double>(static_cast<std::int64_t>(r.words(k))), -r.scale_bits);
  return out;
}

RingVector ring_add(const RingVector& a, const RingVector& b) {
  require_compatible(a, b, "ring_add");
  return RingVector(a.words + b.words, a.scale_bits);
}

RingVector ring_sub(const RingVector& a, const RingVector& b) {
  require_compatible(a, b, "ring_sub");
  return RingVector(a.words - b.words, a.scale_bits);
}

RingVector ring_scale(const RingVector& a, std::uint64_t factor) {
  return RingVector(a.words * factor, a.scale_bits);
}

RingVector uniform_ring(Eigen::Index d, int scale_bits, SeededRng& rng) {
  RingVector out(d, scale_bits);
  for (Eigen::Index k = 0; k < d; ++k) out.words(k) = rng.next_u64();
  return out;
}

GradientVector clip_linf(const GradientVector& v, double bound) {
  return v.cwiseMax(-bound).cwiseMin(bound);
}

std::vector<std::uint8_t> serialize(const RingVector& r) {
  if (r.size() > std::numeric_limits<std::uint32_t>::max())
    throw OverflowError("serialize: vector too long");
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(r.size()));
  w.u8(static_cast<std::uint8_t>(r.scale_bits));
  for (Eigen::Index k = 0; k < r.size(); ++k) w.u64(r.words(k));
  return w.take();
}

RingVector deserialize_ring(std::span<const std::uint8_t> bytes) {
  ByteReader rd(bytes);
  const std::uint32_t d = rd.u32();
  const int scale = rd.u8();
  RingVector out(static_cast<Eigen::Index>(d), scale);
  for (std::uint32_t k = 0; k < d; ++k) out.words(k) = rd.u64();
  if (!rd.done()) throw FormatError("deserialize_ring: trailing bytes");
  return out;
}

bool all_finite(const GradientVector& v) { return v.allFinite(); }

}  // namespace dp2guard
