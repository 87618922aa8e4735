#pragma once

#include <algorithm>
#include <cstdint>
#include <random>

namespace blendid {

// Seeded random stream. A stream is identified by (seed, stream_id) so that
// independent consumers (env noise, policy sampling, minibatch shuffling,
// measurement noise, ...) never share generator state. Distribution objects
// are constructed per call, so a copied stream replays identically.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream_id = 0)
      : gen_(mix(seed, stream_id)) {}

  double normal() { return std::normal_distribution<double>{0.0, 1.0}(gen_); }

  double normal(double mean, double stddev) {
    return mean + stddev * normal();
  }

  // Uniform in [lo, hi).
  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>{lo, hi}(gen_);
  }

  std::uint64_t next_u64() { return gen_(); }

  // Derived stream; advances this generator by one draw.
  RngStream child(std::uint64_t key) { return RngStream(gen_(), key); }

  template <class It>
  void shuffle(It first, It last) {
    std::shuffle(first, last, gen_);
  }

  static std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    return splitmix64(splitmix64(a) ^ (0x9e3779b97f4a7c15ULL + b));
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace blendid
