#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace dp2guard {

/// Purposes keep streams drawn by different subsystems independent.
enum class Purpose : std::uint64_t {
  Data = 1,
  Partition = 2,
  ModelInit = 3,
  LocalTraining = 4,
  ShareSplit = 5,
  Mask = 6,
  LabelFlip = 7,
  Clustering = 8,
  DnC = 9,
  RootData = 10,
  Test = 99,
};

/// Counter-based generator: the n-th output is a pure function of
/// (seed, stream_id, n). Every distribution below is implemented here so
/// that a stream produces the same values on every platform and stdlib.
class SeededRng {
 public:
  SeededRng(std::uint64_t seed, std::uint64_t stream_id);

  /// Stream keyed by (experiment seed, actor, round, purpose).
  static SeededRng derive(std::uint64_t seed, std::uint64_t actor, std::uint64_t round,
                          Purpose purpose);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, n), unbiased (rejection sampling).
  std::uint64_t uniform_index(std::uint64_t n);
  double normal();
  /// Gamma(shape, 1), Marsaglia-Tsang.
  double gamma(double shape);
  std::vector<double> dirichlet(std::size_t k, double alpha);

  /// Fisher-Yates with this generator.
  template <class T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = uniform_index(i);
      std::swap(items[i - 1], items[j]);
    }
  }

  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

}  // namespace dp2guard
