#pragma once

// Self-contained PRNG (xoshiro256++ seeded through splitmix64) plus the few
// distributions we need. std::mt19937 + std:: distributions are not
// reproducible across standard libraries; everything downstream (golden
// digests, checkpoint replay) depends on bit-stable streams, so we roll our
// own on top of fixed integer arithmetic.

#include <array>
#include <cmath>
#include <cstdint>
#include <string_view>

namespace evoloss {

constexpr std::uint64_t splitmix64_next(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Hash-combine used to derive substream seeds from a root seed and tags.
constexpr std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t s = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  return splitmix64_next(s);
}

constexpr std::uint64_t fnv1a64(std::string_view s,
                                std::uint64_t h = 0xCBF29CE484222325ULL) {
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) {
    std::uint64_t sm = seed;
    for (auto& word : state_) word = splitmix64_next(sm);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n). n = 0 is a caller bug; returns 0.
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - ~std::uint64_t{0} % n;
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
  }

  int index(std::size_t n) { return static_cast<int>(uniform_int(n)); }

  bool bernoulli(double p) { return uniform() < p; }

  // One standard normal draw per call (Box-Muller, second value discarded so
  // the stream position is a pure function of call count).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Raw state, for checkpointing mid-stream.
  std::array<std::uint64_t, 4> state() const { return state_; }
  void set_state(const std::array<std::uint64_t, 4>& s) { state_ = s; }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::array<std::uint64_t, 4> state_;
};

// Named substream: fork(root, "epsilon") and fork(root, "epsilon", 3) give
// streams that are independent of each other and of the root stream.
inline Rng fork_stream(std::uint64_t root, std::string_view name,
                       std::uint64_t a = 0, std::uint64_t b = 0) {
  return Rng(mix_seed(mix_seed(mix_seed(root, fnv1a64(name)), a), b));
}

}  // namespace evoloss
