#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "llmx/error.hpp"
#include "llmx/random.hpp"
#include "llmx/time.hpp"

namespace llmx {

/// CFP emission offsets from the start of a run, sorted, all in [0, duration).
struct ArrivalSchedule {
  double rate_per_min = 0.0;
  Duration duration{0};
  std::uint64_t seed = 0;
  std::vector<Duration> offsets;

  std::size_t size() const { return offsets.size(); }
};

/// Homogeneous Poisson arrivals: i.i.d. exponential gaps with mean
/// 60 / rate_per_min seconds.
inline ArrivalSchedule poisson_schedule(double rate_per_min, Duration duration, std::uint64_t seed) {
  if (!(rate_per_min >= 0.0) || !std::isfinite(rate_per_min)) {
    throw Error(ErrorCode::invalid_rate, "rate_per_min must be >= 0, got " + std::to_string(rate_per_min));
  }
  ArrivalSchedule s{rate_per_min, duration, seed, {}};
  if (rate_per_min == 0.0 || duration <= Duration::zero()) return s;
  Rng rng(mix_seed(seed, 0x7a11));
  const double mean_gap_s = 60.0 / rate_per_min;
  const double horizon_s = std::chrono::duration<double>(duration).count();
  double t = 0.0;
  while (true) {
    t += rng.exponential(mean_gap_s);
    if (t >= horizon_s) break;
    const Duration offset = from_seconds(t);
    if (offset >= duration) break;
    s.offsets.push_back(offset);
  }
  return s;
}

inline ArrivalSchedule fixed_schedule(std::size_t count, Duration spacing) {
  ArrivalSchedule s;
  for (std::size_t i = 0; i < count; ++i) s.offsets.push_back(spacing * static_cast<std::int64_t>(i));
  s.duration = std::max(spacing * static_cast<std::int64_t>(count), Duration{1});
  return s;
}

}  // namespace llmx
