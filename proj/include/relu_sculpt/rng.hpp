#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string_view>

namespace relu_sculpt::rng {

/// SplitMix64 finalizer; a bijection on 64-bit words.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Derives an independent stream seed from (seed, purpose tag, indices...).
/// Every random draw in the project goes through a seed produced here, so a
/// single top-level seed determines all runs.
std::uint64_t derive(std::uint64_t seed, std::string_view purpose,
                     std::initializer_list<std::uint64_t> indices = {}) noexcept;

/// Pseudo-random stream with platform-independent derived distributions
/// (the std:: distributions are implementation-defined).
class Stream {
 public:
  using result_type = std::uint64_t;

  explicit Stream(std::uint64_t seed) : engine_(seed) {}
  Stream(std::uint64_t seed, std::string_view purpose, std::initializer_list<std::uint64_t> indices = {})
      : engine_(derive(seed, purpose, indices)) {}

  static constexpr result_type min() { return std::mt19937_64::min(); }
  static constexpr result_type max() { return std::mt19937_64::max(); }
  result_type operator()() { return engine_(); }

  /// Uniform integer in [0, n); n must be positive.
  std::size_t uniform_index(std::size_t n);
  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }
  /// Standard normal via Box-Muller (no cached second value).
  double normal();

 private:
  std::mt19937_64 engine_;
};

/// In-place Fisher-Yates shuffle.
template <typename T>
void shuffle(std::span<T> items, Stream& stream) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = stream.uniform_index(i);
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace relu_sculpt::rng
