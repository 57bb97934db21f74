#pragma once

#include <cmath>
#include <cstdint>

namespace nlfs {

/// Deterministic random stream (splitmix64). Doubles are derived from raw
/// 64-bit output instead of std::uniform_real_distribution, whose mapping is
/// implementation-defined; outputs must be byte-identical across platforms
/// for the CLI determinism contract.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  /// Standard normal via Box-Muller (deterministic, no cached state shared
  /// across copies).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  /// Derives an independent stream for worker `index`; used so that --jobs
  /// does not change which numbers each task sees.
  RngStream fork(std::uint64_t index) const {
    RngStream probe(state_ ^ (0xa0761d6478bd642full * (index + 1)));
    probe.next_u64();
    return probe;
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace nlfs
