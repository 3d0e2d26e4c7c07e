#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>

namespace toolgcn {

/// Seedable random source used everywhere in the library.
///
/// Algorithm: std::mt19937_64 (bit-exact across conforming standard
/// libraries) seeded with a single 64-bit value. All derived quantities are
/// computed here rather than through <random> distributions, whose outputs
/// are implementation-defined:
///   uniform()      = (next() >> 11) * 2^-53, in [0, 1)
///   below(n)       = next() % n with rejection of the biased tail
///   normal()       = Box-Muller on two uniform() draws, cosine branch only
///   bernoulli(p)   = uniform() < p
/// Sub-streams are derived with derive_seed(), a SplitMix64 mix of the
/// parent seed and the stream coordinates.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t below(std::uint64_t n);
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  // Textual engine state, as produced by operator<< on the engine.
  std::string state() const;
  void set_state(const std::string& text);

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

// Seed for the sub-stream identified by (seed, a, b, c).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                          std::uint64_t c = 0);

}  // namespace toolgcn
