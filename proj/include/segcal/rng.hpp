#ifndef SEGCAL_RNG_HPP
#define SEGCAL_RNG_HPP

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace segcal {

/// SplitMix64 generator (Steele, Lea & Flood 2014). All randomized paths in
/// the toolkit draw from this algorithm so that outputs are reproducible
/// across platforms and implementations for a given 64-bit seed.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (cosine branch only, two draws per
  /// variate). Chosen over std::normal_distribution because the stream must
  /// be identical on every implementation.
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Uniform integer in [0, bound) via Lemire's multiply-shift reduction.
  std::uint64_t below(std::uint64_t bound) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next()) * bound) >> 64);
  }

  /// Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  /// Derives an independent stream for a sub-task (per-image, per-trial).
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t counter) {
    SplitMix64 g(seed ^ (0x632be59bd9b4e019ull * (counter + 1)));
    return g.next();
  }

 private:
  std::uint64_t state_;
};

}  // namespace segcal

#endif  // SEGCAL_RNG_HPP
