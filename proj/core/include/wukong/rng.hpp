#pragma once

#include <cmath>
#include <cstdint>

namespace wukong {

// splitmix64 (Steele/Lea/Flood). The single PRNG used everywhere so that
// latents, toy weights and archives reproduce bit-for-bit from a 64-bit seed.
//
//   state += 0x9E3779B97F4A7C15
//   z = state; z = (z ^ z>>30) * 0xBF58476D1CE4E5B9
//   z = (z ^ z>>27) * 0x94D049BB133111EB
//   return z ^ z>>31
class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t seed) : state_(seed) {}

  uint64_t next() {
    uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // uniform in [0,1): top 53 bits scaled by 2^-53
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // uniform in (0,1]: (top 53 bits + 1) * 2^-53, safe as a log() argument
  double uniform_open() {
    return static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;
  }

 private:
  uint64_t state_;
};

// Named sub-stream derivation: two splitmix64 steps over seed xor a
// stream-scaled golden-ratio constant. Keeps independent weight/noise
// streams reproducible without sharing state.
inline uint64_t derive_seed(uint64_t seed, uint64_t stream) {
  SplitMix64 g(seed ^ (0x9E3779B97F4A7C15ULL * (stream + 1)));
  g.next();
  return g.next();
}

// Standard normals via Box-Muller over splitmix64 draws.
// Each pair consumes exactly two uniforms, in order:
//   u1 = uniform_open(), u2 = uniform()
//   r  = sqrt(-2 ln u1)
//   z0 = r cos(2 pi u2), z1 = r sin(2 pi u2)
// z0 is returned first, z1 on the following call.
class NormalSampler {
 public:
  explicit NormalSampler(uint64_t seed) : gen_(seed) {}

  double next() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = gen_.uniform_open();
    const double u2 = gen_.uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

 private:
  SplitMix64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// FNV-1a over bytes; used for content digests and the toy tokenizer.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace wukong
