// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace desmp {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// FNV-1a over a string, used to turn purpose names into stream keys.
constexpr std::uint64_t hash_name(std::string_view name) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// Named substreams fanned out from a master seed. Changing how one purpose
/// consumes randomness never perturbs another.
enum class Purpose : std::uint64_t {
  init = 1,
  selection = 2,
  local_training = 3,
  noise = 4,
  exploration = 5,
  partition = 6,
  dataset = 7,
  episode = 8,
};

/// Counter-based random stream: the i-th draw is a pure function of
/// (key, i), so streams can be recreated anywhere from their key alone.
/// Uses its own uniform and normal transforms instead of <random>
/// distributions, whose output is implementation-defined.
class Stream {
 public:
  explicit Stream(std::uint64_t key) noexcept : key_(mix64(key)) {}

  /// Stream for (master seed, purpose, a, b); a and b are typically round
  /// and client id.
  static Stream derive(std::uint64_t master, Purpose purpose, std::uint64_t a = 0,
                       std::uint64_t b = 0) noexcept {
    std::uint64_t k = mix64(master);
    k = mix64(k ^ static_cast<std::uint64_t>(purpose));
    k = mix64(k ^ (a * 0xD6E8FEB86659FD93ULL));
    k = mix64(k ^ (b * 0xA0761D6478BD642FULL));
    return Stream(k);
  }

  std::uint64_t next_u64() noexcept {
    return mix64(key_ + 0x9E3779B97F4A7C15ULL * ++counter_);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n) without modulo bias. n must be positive.
  std::uint64_t below(std::uint64_t n) noexcept {
    // Lemire's multiply-shift with rejection.
    __extension__ using u128 = unsigned __int128;
    u128 m = static_cast<u128>(next_u64()) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
      const std::uint64_t threshold = (0 - n) % n;
      while (low < threshold) {
        m = static_cast<u128>(next_u64()) * n;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  /// Standard normal draw via Box-Muller; the second value of each pair is
  /// cached.
  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(angle);
    has_spare_ = true;
    return r * std::cos(angle);
  }

  std::uint64_t draws() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// In-place Fisher-Yates shuffle driven by a Stream.
template <typename Range>
void shuffle(Range& range, Stream& rng) {
  using std::swap;
  const auto n = static_cast<std::uint64_t>(range.size());
  for (std::uint64_t i = n; i > 1; --i) {
    const auto j = rng.below(i);
    swap(range[i - 1], range[j]);
  }
}

}  // namespace desmp
