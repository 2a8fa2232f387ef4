#include "relu_sculpt/rng.hpp"

#include <cmath>
#include <numbers>

#include "relu_sculpt/error.hpp"

namespace relu_sculpt::rng {

std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive(std::uint64_t seed, std::string_view purpose,
                     std::initializer_list<std::uint64_t> indices) noexcept {
  // FNV-1a over the tag, then fold each index through the mixer.
  std::uint64_t tag = 0xcbf29ce484222325ULL;
  for (unsigned char c : purpose) {
    tag ^= c;
    tag *= 0x100000001b3ULL;
  }
  std::uint64_t h = mix64(seed ^ mix64(tag));
  for (std::uint64_t idx : indices) h = mix64(h ^ mix64(idx + 0x632be59bd9b4e019ULL));
  return h;
}

std::size_t Stream::uniform_index(std::size_t n) {
  if (n == 0) throw PreconditionError("uniform_index: empty range");
  // Rejection sampling on the top of the range keeps draws unbiased.
  const std::uint64_t range = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = max() - (max() % range + 1) % range;
  std::uint64_t v = engine_();
  while (v > limit) v = engine_();
  return static_cast<std::size_t>(v % range);
}

double Stream::uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Stream::normal() {
  double u1 = uniform01();
  while (u1 <= 0.0) u1 = uniform01();
  const double u2 = uniform01();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace relu_sculpt::rng
