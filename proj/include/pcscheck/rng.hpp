#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <type_traits>
#include <vector>

// Deterministic seeding and sampling primitives.
//
// Every random draw in the harness flows through this header.  The standard
// <random> distribution objects (uniform_real_distribution and friends) are
// deliberately not used anywhere: their output sequences are
// implementation-defined, so two standard libraries given the same engine
// state may disagree.  std::mt19937_64 itself is fully specified by the
// standard, so the engine is portable; only the mapping from raw 64-bit words
// to doubles/integers needs to be pinned down, which is done here.

namespace pcscheck::rng {

// FNV-1a, 64-bit.  Used to fold string labels into seed material.
constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// splitmix64 finalizer (Steele, Lea & Flood).  Bijective, cheap, and scrambles
// low-entropy inputs (small integers, xor'ed hashes) well.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

namespace detail {

inline std::uint64_t mix_part(std::uint64_t h, std::string_view part) {
  return splitmix64(h ^ fnv1a(part));
}

template <typename T, std::enable_if_t<std::is_integral_v<T>, int> = 0>
std::uint64_t mix_part(std::uint64_t h, T part) {
  return splitmix64(h ^ static_cast<std::uint64_t>(part));
}

}  // namespace detail

// derive(seed, part...) produces a decorrelated child seed.  The same
// (seed, parts) always gives the same child; distinct label paths give
// unrelated streams.
inline std::uint64_t derive(std::uint64_t seed) { return splitmix64(seed); }

template <typename Part, typename... Rest>
std::uint64_t derive(std::uint64_t seed, Part&& part, Rest&&... rest) {
  std::uint64_t h = detail::mix_part(splitmix64(seed), std::forward<Part>(part));
  if constexpr (sizeof...(rest) == 0) {
    return h;
  } else {
    // Re-entering derive would re-finalize h, which is harmless but wasteful;
    // fold the remaining parts directly.
    ((h = detail::mix_part(h, std::forward<Rest>(rest))), ...);
    return h;
  }
}

// A seeded stream of portable draws.
class Stream {
 public:
  explicit Stream(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // Uniform on [0, 1) with 53 random bits, the standard bit-shift mapping.
  double next_unit() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, bound).  Lemire's multiply-and-reject method.
  std::uint64_t next_below(std::uint64_t bound) {
    if (bound == 0) return 0;
    std::uint64_t x = eng_();
    unsigned __int128 m = static_cast<unsigned __int128>(x) * bound;
    auto l = static_cast<std::uint64_t>(m);
    if (l < bound) {
      std::uint64_t t = (0 - bound) % bound;
      while (l < t) {
        x = eng_();
        m = static_cast<unsigned __int128>(x) * bound;
        l = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  // Standard normal via Box-Muller.  Both values of each pair are consumed.
  double next_normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // u1 in (0, 1] so the log is finite.
    double u1 = 1.0 - next_unit();
    double u2 = next_unit();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double next_normal(double mean, double sd) { return mean + sd * next_normal(); }

  // Fisher-Yates.  Identity output is possible, as for any uniform shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // n indices drawn uniformly with replacement from [0, pool).
  std::vector<std::size_t> sample_with_replacement(std::size_t pool, std::size_t n) {
    std::vector<std::size_t> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<std::size_t>(next_below(pool));
    return out;
  }

  // n distinct indices from [0, pool), in random order (partial Fisher-Yates).
  std::vector<std::size_t> sample_without_replacement(std::size_t pool, std::size_t n) {
    std::vector<std::size_t> idx(pool);
    for (std::size_t i = 0; i < pool; ++i) idx[i] = i;
    for (std::size_t i = 0; i < n && i + 1 < pool; ++i) {
      std::size_t j = i + static_cast<std::size_t>(next_below(pool - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(n);
    return idx;
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace pcscheck::rng
