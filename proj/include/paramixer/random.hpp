#pragma once

#include <cstdint>

namespace paramixer {

/// SplitMix64 finalizer. Used both as a sequential generator and as a
/// counter-based hash so any (seed, stream, counter) draw is reproducible alone.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t kGoldenGamma = 0x9e3779b97f4a7c15ULL;

constexpr std::uint64_t counter_hash(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
  return mix64(mix64(mix64(seed + kGoldenGamma) ^ (stream * kGoldenGamma + 1)) + counter * kGoldenGamma);
}

/// Top 53 bits mapped to [0, 1).
constexpr double to_unit(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

/// Unbiased draw in [0, bound) by rejection on the top of the range.
template <typename Next>
std::uint64_t bounded(Next&& next, std::uint64_t bound) {
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
  for (;;) {
    const std::uint64_t x = next();
    if (x < limit) return x % bound;
  }
}

class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    state_ += kGoldenGamma;
    return mix64(state_);
  }
  std::uint64_t operator()() { return next(); }

  double uniform() { return to_unit(next()); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t below(std::uint64_t bound) {
    return bounded([this] { return next(); }, bound);
  }

 private:
  std::uint64_t state_;
};

}  // namespace paramixer
