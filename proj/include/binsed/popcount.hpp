#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string_view>

namespace binsed {

enum class Popcount { native, portable };

constexpr std::string_view to_string(Popcount p) { return p == Popcount::native ? "native" : "portable"; }

// Bit-parallel population count, no lookup tables, no intrinsics.
constexpr int popcount_portable(std::uint32_t v) {
  v = v - ((v >> 1) & 0x55555555u);
  v = (v & 0x33333333u) + ((v >> 2) & 0x33333333u);
  v = (v + (v >> 4)) & 0x0F0F0F0Fu;
  return static_cast<int>((v * 0x01010101u) >> 24);
}

template <Popcount P>
inline int popcount32(std::uint32_t v) {
  if constexpr (P == Popcount::native)
    return std::popcount(v);
  else
    return popcount_portable(v);
}

// Whether std::popcount lowers to a single instruction in this build.
constexpr bool native_popcount_is_instruction() {
#if defined(__POPCNT__) || defined(__ARM_NEON) || defined(__aarch64__)
  return true;
#else
  return false;
#endif
}

// The native path reads word pairs as 64 bits: one popcnt per 64 channels.
template <Popcount P>
inline int xor_popcount(const std::uint32_t* a, const std::uint32_t* b, int n) {
  int s = 0;
  int i = 0;
  if constexpr (P == Popcount::native) {
    for (; i + 2 <= n; i += 2) {
      std::uint64_t x, y;
      std::memcpy(&x, a + i, 8);
      std::memcpy(&y, b + i, 8);
      s += std::popcount(x ^ y);
    }
  }
  for (; i < n; ++i) s += popcount32<P>(a[i] ^ b[i]);
  return s;
}

}  // namespace binsed
