#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

#include "dpal/errors.hpp"

namespace dpal {

// Counter-based splittable random stream. Every output is a pure function of
// (seed, stream-id, counter), so two streams with equal state replay the same
// sequence on any platform, and deriving a child never consumes parent draws.
// Mixing is chained splitmix64 finalizers over a Weyl-advanced counter.
class RngStream {
 public:
  explicit RngStream(uint64_t seed, uint64_t stream_id = 0)
      : seed_(seed), stream_(stream_id) {}

  uint64_t seed() const { return seed_; }
  uint64_t stream_id() const { return stream_; }
  uint64_t counter() const { return counter_; }

  uint64_t next_u64() {
    uint64_t z = mix(seed_ ^ (stream_ + kGolden));
    z = mix(z + counter_ * kGolden);
    ++counter_;
    return mix(z ^ 0xA0761D6478BD642FULL);
  }

  // Child stream keyed by label; does not touch this stream's counter.
  RngStream child(uint64_t label) const {
    return RngStream(seed_, mix(stream_ ^ mix(label + kGolden)));
  }
  RngStream child(std::string_view label) const { return child(fnv1a(label)); }

  // Uniform double in [0, 1), 53 bits.
  double next_double() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; two draws per value, no cached state.
  double next_gaussian() {
    double u1 = double((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    double u2 = double(next_u64() >> 11) * 0x1.0p-53;        // [0, 1)
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Unbiased draw in [0, n) by rejection on the top bucket.
  uint64_t next_below(uint64_t n) {
    if (n == 0) raise(Err::Internal, "next_below(0)");
    uint64_t threshold = (0 - n) % n;
    for (;;) {
      uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[next_below(i)]);
  }

  static constexpr uint64_t fnv1a(std::string_view s) {
    uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : s) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001B3ULL;
    }
    return h;
  }

 private:
  static constexpr uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

  static constexpr uint64_t mix(uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
  }

  uint64_t seed_;
  uint64_t stream_;
  uint64_t counter_ = 0;
};

}  // namespace dpal
