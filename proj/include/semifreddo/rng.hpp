#pragma once

#include <cstdint>
#include <random>

namespace semifreddo {

// mt19937 with hand-rolled draws so streams are identical across standard
// library implementations.
class Rng {
 public:
  explicit Rng(uint32_t seed) : g_(seed) {}

  uint32_t next() { return g_(); }
  // [0, 1)
  float uniform() { return (float)(g_() >> 8) * 0x1p-24f; }
  float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }
  // [0, n)
  uint32_t below(uint32_t n) { return (uint32_t)(((uint64_t)g_() * n) >> 32); }

  template <typename It>
  void shuffle(It first, It last) {
    auto n = last - first;
    for (auto i = n - 1; i > 0; --i)
      std::swap(first[i], first[below((uint32_t)(i + 1))]);
  }

 private:
  std::mt19937 g_;
};

}  // namespace semifreddo
