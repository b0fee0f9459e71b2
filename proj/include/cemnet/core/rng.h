// cemnet/core/rng.h

// Copyright 2026  CEM-Net Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef CEMNET_CORE_RNG_H_
#define CEMNET_CORE_RNG_H_

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace cemnet {

// Splitmix64 generator. All randomness in the project goes through this so
// that corpora, training runs and reports are bit-reproducible across
// platforms; the standard <random> distributions are implementation-defined
// and would break that contract.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller, one draw per call (the paired value is discarded so the
  // stream position is a pure function of the call count).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Uniform integer in [0, n).
  int uniform_int(int n) {
    if (n <= 1) return 0;
    int v = static_cast<int>(uniform() * n);
    return v >= n ? n - 1 : v;
  }

  // Fisher-Yates over indices 0..n-1.
  std::vector<int> permutation(int n) {
    std::vector<int> p(n);
    for (int i = 0; i < n; ++i) p[i] = i;
    for (int i = n - 1; i > 0; --i) {
      int j = uniform_int(i + 1);
      int tmp = p[i];
      p[i] = p[j];
      p[j] = tmp;
    }
    return p;
  }

 private:
  uint64_t state_;
};

// FNV-1a 64-bit, used for named substreams and payload hashes.
inline uint64_t fnv1a64(const void *data, size_t len, uint64_t h = 0xcbf29ce484222325ULL) {
  const unsigned char *p = static_cast<const unsigned char *>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a64(s.data(), s.size(), h);
}

// Named substream derivation: one master seed fans out to per-module,
// per-clip, per-stage streams that are independent of evaluation order.
inline Rng substream(uint64_t seed, std::string_view name) {
  uint64_t h = fnv1a64(name);
  h = fnv1a64(&seed, sizeof(seed), h);
  return Rng(h);
}

inline Rng substream(uint64_t seed, std::string_view name, uint64_t index) {
  uint64_t h = fnv1a64(name);
  h = fnv1a64(&seed, sizeof(seed), h);
  h = fnv1a64(&index, sizeof(index), h);
  return Rng(h);
}

}  // namespace cemnet

#endif  // CEMNET_CORE_RNG_H_
