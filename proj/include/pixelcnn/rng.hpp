#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace pixelcnn {

/// Counter-based pseudo-random generator (splitmix64 over seed + counter).
///
/// The full state is (seed, counter), so streams are trivially
/// checkpointable and identical across platforms: no std::*_distribution
/// is used anywhere, all transforms are spelled out below.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), counter_(0) {}

  static Rng restore(std::uint64_t seed, std::uint64_t counter) {
    Rng r(seed);
    r.counter_ = counter;
    return r;
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64() {
    std::uint64_t z = seed_ + (++counter_) * 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1), 53 significant bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Integer uniform in [0, n). Rejection-free (multiply-shift); the tiny
  /// modulo bias is irrelevant for data shuffling at desk scale.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below(0)");
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  /// Standard normal via Box-Muller. Draws two uniforms per call; nothing
  /// is cached so the (seed, counter) pair fully describes the stream.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 0x1.0p-53) u1 = 0x1.0p-53;
    constexpr double two_pi = 6.283185307179586476925286766559;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
  }

  /// Inverse-CDF draw from an unnormalized non-negative weight vector.
  int categorical(const double* w, int n) {
    if (n <= 0) throw std::invalid_argument("Rng::categorical: empty support");
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += w[i];
    if (!(total > 0.0))
      throw std::invalid_argument("Rng::categorical: zero total mass");
    double u = uniform() * total;
    double cum = 0.0;
    for (int i = 0; i < n; ++i) {
      cum += w[i];
      if (u < cum) return i;
    }
    return n - 1;
  }

  int categorical(const std::vector<double>& w) {
    return categorical(w.data(), static_cast<int>(w.size()));
  }

  /// Independent stream derived from (this seed, stream index).
  Rng fork(std::uint64_t stream) const {
    std::uint64_t z = seed_ ^ (0xD2B74407B1CE6E93ull + stream * 0xCA5A826395121157ull);
    z = (z ^ (z >> 33)) * 0xFF51AFD7ED558CCDull;
    z = (z ^ (z >> 33)) * 0xC4CEB9FE1A85EC53ull;
    return Rng(z ^ (z >> 33));
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

}  // namespace pixelcnn
