#pragma once

#include <cmath>
#include <cstdint>

namespace vidrep {

// Counter-based splittable RNG. A (seed, stream) pair names an independent
// stream; draws depend only on (seed, stream, call index), never on global
// state or platform library internals, so sequences are reproducible
// everywhere. Core mixer is splitmix64.
class Rng {
 public:
  explicit Rng(uint64_t seed, uint64_t stream = 0)
      : seed_(seed), stream_(stream), base_(mix(mix(seed) ^ mix(stream ^ 0x632be59bd9b4e019ull))) {}

  uint64_t seed() const { return seed_; }
  uint64_t stream() const { return stream_; }

  // Independent stream derived from the same seed. Safe to hand to workers:
  // draws on the child never perturb the parent.
  Rng split(uint64_t stream) const { return Rng(seed_, stream); }

  uint64_t next_u64() { return mix(base_ + 0x9e3779b97f4a7c15ull * ++counter_); }

  // Draw position, for resumable streams. Seeking drops a cached normal
  // spare, so only seek at points where no spare is pending.
  uint64_t position() const { return counter_; }
  void seek(uint64_t counter) {
    counter_ = counter;
    has_spare_ = false;
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform in [0, n). Multiply-shift; bias is negligible for n << 2^64.
  int64_t uniform_int(int64_t n) {
    return static_cast<int64_t>((static_cast<unsigned __int128>(next_u64()) *
                                 static_cast<unsigned __int128>(n)) >>
                                64);
  }

  // Standard normal via Box-Muller; the spare draw is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // u1 in (0, 1] so the log is finite.
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  static uint64_t mix(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  uint64_t seed_;
  uint64_t stream_;
  uint64_t base_;
  uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace vidrep
