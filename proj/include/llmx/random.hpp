#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <mutex>
#include <numbers>
#include <random>
#include <string>

namespace llmx {

/// Seeded generator whose draws are identical on every platform: the engine
/// is fully specified by the standard and the distributions are written out
/// here rather than taken from <random>, whose algorithms are unspecified.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Inverse-CDF exponential sample.
  double exponential(double mean) { return -mean * std::log1p(-uniform01()); }

  /// Box-Muller; consumes two uniforms per call.
  double normal(double mean, double stddev) {
    const double u1 = 1.0 - uniform01();
    const double u2 = uniform01();
    const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    return mean + stddev * z;
  }

 private:
  std::mt19937_64 engine_;
};

/// SplitMix64 finalizer, used to derive independent child seeds.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Produces RFC 4122 version-4 formatted identifiers from a seeded stream, so
/// runs with the same seed reuse the same ids.
class IdGenerator {
 public:
  explicit IdGenerator(std::uint64_t seed = 0) : rng_(mix_seed(seed, 0x1d)) {}

  std::string next() {
    std::uint64_t hi = 0;
    std::uint64_t lo = 0;
    {
      std::lock_guard lock(mu_);
      hi = rng_.next_u64();
      lo = rng_.next_u64();
    }
    hi = (hi & 0xffffffffffff0fffULL) | 0x0000000000004000ULL;
    lo = (lo & 0x3fffffffffffffffULL) | 0x8000000000000000ULL;
    char buf[37];
    std::snprintf(buf, sizeof buf, "%08x-%04x-%04x-%04x-%012llx",
                  static_cast<unsigned>(hi >> 32), static_cast<unsigned>((hi >> 16) & 0xffff),
                  static_cast<unsigned>(hi & 0xffff), static_cast<unsigned>(lo >> 48),
                  static_cast<unsigned long long>(lo & 0xffffffffffffULL));
    return buf;
  }

 private:
  std::mutex mu_;
  Rng rng_;
};

}  // namespace llmx
