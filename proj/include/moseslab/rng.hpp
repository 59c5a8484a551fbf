#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace moseslab {

// 64-bit FNV-1a. Used for canonical config hashing and for deriving stream
// keys, so the exact byte recipe matters for reproducibility: integers are
// hashed as 8 little-endian bytes, strings as their raw bytes.
inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ull;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ull;

class KeyBuilder {
 public:
  KeyBuilder& add(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      step(static_cast<unsigned char>(v >> (8 * i)));
    }
    return *this;
  }

  KeyBuilder& add(std::int64_t v) { return add(static_cast<std::uint64_t>(v)); }

  KeyBuilder& add(std::string_view s) {
    for (unsigned char c : s) step(c);
    step(0);  // terminator keeps ("ab","c") distinct from ("a","bc")
    return *this;
  }

  std::uint64_t value() const { return hash_; }

 private:
  void step(unsigned char byte) {
    hash_ ^= byte;
    hash_ *= kFnvPrime;
  }

  std::uint64_t hash_ = kFnvOffset;
};

// Deterministic splitmix64 stream. All randomness in the library flows
// through this type; the standard <random> distributions are avoided because
// their outputs are implementation-defined.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Unbiased integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; consumes exactly two draws.
  double gaussian() {
    const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t state_;
};

}  // namespace moseslab
