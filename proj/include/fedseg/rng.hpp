#pragma once

#include <cstdint>
#include <vector>

namespace fedseg {

std::uint64_t splitmix64(std::uint64_t& state);

// xoshiro256** seeded through splitmix64. Every stochastic operation in the
// project takes an explicit stream; independent streams are created with
// derive() so results never depend on evaluation order across threads.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  // Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  // Standard normal via Box-Muller; pairs are cached.
  double normal();

  // A new independent stream identified by (origin seed, salt). Does not
  // consume state from this stream.
  Rng derive(std::uint64_t salt) const;

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

// Seeded Fisher-Yates.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  if (v.size() < 2) return;
  for (std::size_t i = v.size() - 1; i > 0; --i) {
    std::size_t j = static_cast<std::size_t>(rng.below(i + 1));
    std::swap(v[i], v[j]);
  }
}

}  // namespace fedseg
