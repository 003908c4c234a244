#pragma once

// Stateless, counter-based randomness. Every draw is a pure function of
// (key, counter), so any element of a random stream can be regenerated
// without replaying the elements before it.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace iscope {

/// splitmix64 finalizer; used to derive independent keys from a master seed.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_tag(std::string_view tag) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ull;
  }
  return h;
}

/// Key for an independent sub-stream named `tag` under `seed`.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) noexcept {
  return mix64(seed ^ mix64(hash_tag(tag)));
}

/// Philox4x32-10 block function.
class Philox {
 public:
  using Block = std::array<std::uint32_t, 4>;

  constexpr explicit Philox(std::uint64_t key) noexcept
      : k0_(static_cast<std::uint32_t>(key)), k1_(static_cast<std::uint32_t>(key >> 32)) {}

  constexpr Block operator()(std::uint64_t a, std::uint64_t b) const noexcept {
    Block c{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
            static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
    std::uint32_t k0 = k0_, k1 = k1_;
    for (int r = 0; r < 10; ++r) {
      const std::uint64_t p0 = std::uint64_t{kM0} * c[0];
      const std::uint64_t p1 = std::uint64_t{kM1} * c[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
      c = {hi1 ^ c[1] ^ k0, lo1, hi0 ^ c[3] ^ k1, lo0};
      k0 += kW0;
      k1 += kW1;
    }
    return c;
  }

 private:
  static constexpr std::uint32_t kM0 = 0xD2511F53u, kM1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kW0 = 0x9E3779B9u, kW1 = 0xBB67AE85u;
  std::uint32_t k0_, k1_;
};

/// Random draws addressed by a two-word counter.
class CounterRng {
 public:
  constexpr explicit CounterRng(std::uint64_t key) noexcept : philox_(key) {}

  std::uint64_t bits(std::uint64_t a, std::uint64_t b) const noexcept {
    const auto blk = philox_(a, b);
    return (std::uint64_t{blk[1]} << 32) | blk[0];
  }

  /// Uniform on the open interval (0, 1).
  double uniform(std::uint64_t a, std::uint64_t b) const noexcept {
    return to_open_unit(bits(a, b));
  }

  /// Uniform on [lo, hi).
  double uniform(std::uint64_t a, std::uint64_t b, double lo, double hi) const noexcept {
    return lo + (hi - lo) * uniform(a, b);
  }

  /// Integer uniform on [0, bound). Bound must be positive.
  std::uint64_t below(std::uint64_t a, std::uint64_t b, std::uint64_t bound) const noexcept {
    // 128-bit multiply-shift; bias is < 2^-64 * bound and irrelevant here.
    const unsigned __int128 prod = static_cast<unsigned __int128>(bits(a, b)) * bound;
    return static_cast<std::uint64_t>(prod >> 64);
  }

  /// Standard normal draw (Box-Muller on one Philox block).
  double normal(std::uint64_t a, std::uint64_t b) const noexcept {
    const auto blk = philox_(a, b);
    const double u1 = to_open_unit((std::uint64_t{blk[1]} << 32) | blk[0]);
    const double u2 = to_open_unit((std::uint64_t{blk[3]} << 32) | blk[2]);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  static double to_open_unit(std::uint64_t x) noexcept {
    return (static_cast<double>(x >> 11) + 0.5) * 0x1.0p-53;
  }
  Philox philox_;
};

/// Pseudo-random bijection on [0, n) built from a keyed Feistel network with
/// cycle walking. Evaluating one position costs O(1) expected work.
class IndexPermutation {
 public:
  IndexPermutation(std::uint64_t n, std::uint64_t key) : n_(n), rng_(key) {
    unsigned bits = n <= 1 ? 2u : static_cast<unsigned>(std::bit_width(n - 1));
    if (bits % 2) ++bits;
    if (bits < 2) bits = 2;
    half_bits_ = bits / 2;
    mask_ = (std::uint64_t{1} << half_bits_) - 1;
  }

  std::uint64_t size() const noexcept { return n_; }

  std::uint64_t operator()(std::uint64_t i) const noexcept {
    std::uint64_t x = i;
    do {
      x = encrypt(x);
    } while (x >= n_);
    return x;
  }

 private:
  std::uint64_t encrypt(std::uint64_t x) const noexcept {
    std::uint64_t left = x >> half_bits_, right = x & mask_;
    for (std::uint64_t round = 0; round < 6; ++round) {
      const std::uint64_t f = rng_.bits(round, right) & mask_;
      const std::uint64_t next = left ^ f;
      left = right;
      right = next;
    }
    return (left << half_bits_) | right;
  }

  std::uint64_t n_;
  CounterRng rng_;
  unsigned half_bits_ = 1;
  std::uint64_t mask_ = 1;
};

}  // namespace iscope
