#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "gaintune/tensor.hpp"

namespace gt {

/// Counter-based random stream. Draw i is a pure function of (seed, counter),
/// so replays are exact: the k-th value of a stream never depends on how many
/// values were taken before it by a different copy of the stream.
///
/// Algorithm: the 64-bit output for counter t is splitmix64 applied to
/// seed + t * 0x9E3779B97F4A7C15 (two xor-shift-multiply rounds). Uniform
/// doubles take the top 53 bits; Gaussians use Box-Muller on two consecutive
/// counters (the sine partner is discarded so every draw consumes exactly two
/// counters).
class RngStream {
 public:
  RngStream() = default;
  explicit RngStream(std::uint64_t seed, std::uint64_t counter = 0)
      : seed_(seed), counter_(counter) {}

  std::uint64_t next_u64() {
    std::uint64_t z = seed_ + 0x9E3779B97F4A7C15ull * ++counter_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in (0, 1]; never zero, safe under log().
  double uniform_open() {
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n), n >= 1. Lemire multiply-shift.
  std::uint64_t uniform_int(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  /// Standard normal draw; consumes exactly two counters.
  double gaussian() {
    double u1 = uniform_open();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  void fill_gaussian(Tensor& t, double sigma) {
    for (double& v : t.data) v = sigma * gaussian();
  }

  /// Independent stream for a named purpose; decouples consumers so adding a
  /// draw in one place does not shift draws elsewhere.
  RngStream derive(std::uint64_t tag) const {
    std::uint64_t z = (seed_ ^ 0xD6E8FEB86659FD93ull) + 0x9E3779B97F4A7C15ull * tag;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return RngStream(z ^ (z >> 31));
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t counter_ = 0;
};

/// Tensor of i.i.d. N(0, sigma^2) draws.
inline Tensor gaussian(RngStream& stream, Shape shape, double sigma) {
  if (sigma < 0) throw ValidationError("gaussian: sigma must be >= 0");
  Tensor t(shape);
  stream.fill_gaussian(t, sigma);
  return t;
}

}  // namespace gt
