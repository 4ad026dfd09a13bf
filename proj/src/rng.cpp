#include "dp2guard/rng.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

#include "dp2guard/errors.hpp"

namespace dp2guard {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;
}  // namespace

std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ull;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBull;
  x ^= x >> 31;
  return x;
}

SeededRng::SeededRng(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed), stream_id_(stream_id), key_(mix64(mix64(seed) ^ (stream_id * kGolden + 1))) {}

SeededRng SeededRng::derive(std::uint64_t seed, std::uint64_t actor, std::uint64_t round,
                            Purpose purpose) {
  std::uint64_t h = mix64(actor + kGolden);
  h = mix64(h ^ (round + 0x632BE59BD9B4E019ull));
  h = mix64(h ^ (static_cast<std::uint64_t>(purpose) + 0x85157AF5ull));
  return SeededRng(seed, h);
}

std::uint64_t SeededRng::next_u64() {
  // Two rounds of mixing over (key, counter) so neighbouring counters
  // are decorrelated even for adjacent keys.
  const std::uint64_t c = counter_++;
  return mix64(mix64(key_ + c * kGolden) ^ key_);
}

double SeededRng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t SeededRng::uniform_index(std::uint64_t n) {
  if (n == 0) throw PreconditionError("uniform_index: n must be positive");
  const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % n + 1) % n;
  for (;;) {
    const std::uint64_t x = next_u64();
    if (x <= limit) return x % n;
  }
}

double SeededRng::normal() {
  // Box-Muller, one value per pair of uniforms (no cached state).
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double SeededRng::gamma(double shape) {
  if (!(shape > 0.0)) throw PreconditionError("gamma: shape must be positive");
  if (shape < 1.0) {
    // Boost: Gamma(a) = Gamma(a + 1) * U^(1/a).
    double u = uniform();
    while (u <= 0.0) u = uniform();
    return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x;
    double v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

std::vector<double> SeededRng::dirichlet(std::size_t k, double alpha) {
  std::vector<double> out(k);
  double total = 0.0;
  for (auto& x : out) {
    x = gamma(alpha);
    total += x;
  }
  if (total <= 0.0) {
    // All draws underflowed (tiny alpha): put the mass on one coordinate.
    out.assign(k, 0.0);
    out[uniform_index(k)] = 1.0;
    return out;
  }
  for (auto& x : out) x /= total;
  return out;
}

std::vector<std::size_t> SeededRng::permutation(std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  shuffle(std::span<std::size_t>(p));
  return p;
}

}  // namespace dp2guard
