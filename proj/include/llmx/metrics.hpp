#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "llmx/error.hpp"
#include "llmx/time.hpp"
#include "llmx/trace.hpp"

namespace llmx {

/// Nearest-rank percentile: the element at index ceil(q/100 * n) - 1 of the
/// ascending sort. q must be in (0, 100].
inline double percentile(std::span<const double> samples, double q) {
  if (samples.empty()) throw Error(ErrorCode::empty_samples, "percentile of empty sample set");
  if (!(q > 0.0 && q <= 100.0)) throw std::invalid_argument("percentile q must be in (0, 100]");
  std::vector<double> v(samples.begin(), samples.end());
  const auto n = static_cast<double>(v.size());
  auto rank = static_cast<std::size_t>(std::ceil(q / 100.0 * n));
  rank = std::clamp<std::size_t>(rank, 1, v.size());
  auto nth = v.begin() + static_cast<std::ptrdiff_t>(rank - 1);
  std::nth_element(v.begin(), nth, v.end());
  return *nth;
}

struct MeanCount {
  std::size_t n = 0;
  double mean_ms = 0.0;
};

struct LatencySummary {
  std::size_t n = 0;
  double mean_ms = 0.0;
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  double min_ms = 0.0;
  double max_ms = 0.0;
  std::map<std::string, MeanCount> per_agent;
  std::map<std::string, MeanCount> per_round;
};

struct MinuteBucket {
  std::int64_t minute_index = 0;
  std::size_t cfps = 0;
  std::size_t offers = 0;
  std::size_t confirms = 0;
};

struct WindowMean {
  std::int64_t index = 0;
  std::size_t n = 0;
  double mean_ms = 0.0;
};

struct DriftResult {
  double slope_ms_per_hour = 0.0;
  std::vector<WindowMean> window_means;
};

/// Least-squares slope of per-window mean latency against window midpoint.
/// Windows start at the first sample; windows without samples are skipped.
inline DriftResult drift(std::span<const std::pair<Timestamp, double>> series, Duration window) {
  if (series.empty() || window <= Duration::zero()) {
    throw Error(ErrorCode::insufficient_data, "drift needs samples and a positive window");
  }
  Timestamp t0 = series.front().first;
  for (const auto& [t, _] : series) t0 = std::min(t0, t);

  std::map<std::int64_t, std::pair<std::size_t, double>> acc;
  for (const auto& [t, v] : series) {
    auto& [n, sum] = acc[(t - t0) / window];
    ++n;
    sum += v;
  }
  if (acc.size() < 2) throw Error(ErrorCode::insufficient_data, "drift needs samples in at least two windows");

  DriftResult r;
  const double window_h = std::chrono::duration<double, std::ratio<3600>>(window).count();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& [k, nv] : acc) {
    const double mean = nv.second / static_cast<double>(nv.first);
    r.window_means.push_back({k, nv.first, mean});
    const double x = (static_cast<double>(k) + 0.5) * window_h;
    sx += x;
    sy += mean;
    sxx += x * x;
    sxy += x * mean;
  }
  const auto m = static_cast<double>(acc.size());
  r.slope_ms_per_hour = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  return r;
}

struct RoundStats {
  std::string round_id;
  std::size_t expected = 0;
  std::size_t offers = 0;
  double mean_latency_ms = 0.0;
  std::string outcome;
};

struct Aggregate {
  std::vector<MinuteBucket> per_minute;
  std::size_t cfps = 0;
  std::size_t offers = 0;
  std::size_t offers_sent = 0;
  std::size_t late_offers = 0;
  std::size_t confirms = 0;
  std::size_t accepts = 0;
  std::size_t rejects = 0;
  std::size_t rounds_total = 0;
  std::size_t rounds_effective = 0;
  std::size_t rounds_empty = 0;
  std::size_t rounds_complete = 0;
  /// rounds_complete / rounds_effective; 0 when no round received an offer.
  double completeness = 0.0;
  std::optional<LatencySummary> latency;
  std::optional<DriftResult> drift;
  std::vector<RoundStats> rounds;
  /// Event count per kind name, unknown kinds included verbatim.
  std::map<std::string, std::size_t> kinds;
  std::size_t other = 0;
};

inline constexpr Duration kDefaultDriftWindow = std::chrono::minutes(10);

inline Aggregate aggregate(std::span<const TraceEvent> trace, Duration drift_window = kDefaultDriftWindow) {
  Aggregate a;
  if (trace.empty()) return a;

  auto minute_of = [](Timestamp t) {
    return std::chrono::floor<std::chrono::minutes>(t).time_since_epoch().count();
  };
  std::int64_t first_minute = minute_of(trace.front().ts);
  std::int64_t last_minute = first_minute;
  for (const auto& e : trace) {
    first_minute = std::min(first_minute, minute_of(e.ts));
    last_minute = std::max(last_minute, minute_of(e.ts));
  }
  a.per_minute.resize(static_cast<std::size_t>(last_minute - first_minute + 1));
  for (std::size_t i = 0; i < a.per_minute.size(); ++i) a.per_minute[i].minute_index = static_cast<std::int64_t>(i);

  std::map<std::string, RoundStats> rounds;
  std::vector<std::string> round_order;
  std::vector<double> samples;
  std::vector<std::pair<Timestamp, double>> series;
  std::map<std::string, std::pair<std::size_t, double>> by_agent, by_round;

  for (const auto& e : trace) {
    ++a.kinds[std::string(e.kind_name())];
    MinuteBucket& bucket = a.per_minute[static_cast<std::size_t>(minute_of(e.ts) - first_minute)];
    switch (e.kind) {
      case TraceKind::cfp_sent: {
        ++a.cfps;
        ++bucket.cfps;
        const std::string id = e.round_id.value_or("");
        auto [it, inserted] = rounds.try_emplace(id);
        if (inserted) round_order.push_back(id);
        it->second.round_id = id;
        it->second.expected = static_cast<std::size_t>(e.expected.value_or(0));
        break;
      }
      case TraceKind::offer_received: {
        ++a.offers;
        ++bucket.offers;
        const std::string id = e.round_id.value_or("");
        auto [it, inserted] = rounds.try_emplace(id);
        if (inserted) {
          round_order.push_back(id);
          it->second.round_id = id;
        }
        ++it->second.offers;
        if (e.latency_ms) {
          samples.push_back(*e.latency_ms);
          series.emplace_back(e.ts, *e.latency_ms);
          auto& ag = by_agent[e.agent_id.value_or("")];
          ++ag.first;
          ag.second += *e.latency_ms;
          auto& rd = by_round[id];
          ++rd.first;
          rd.second += *e.latency_ms;
        }
        break;
      }
      case TraceKind::confirm:
        ++a.confirms;
        ++bucket.confirms;
        break;
      case TraceKind::accept: ++a.accepts; break;
      case TraceKind::reject: ++a.rejects; break;
      case TraceKind::offer_sent: ++a.offers_sent; break;
      case TraceKind::late_offer: ++a.late_offers; break;
      case TraceKind::round_terminal:
        if (e.round_id) {
          if (auto it = rounds.find(*e.round_id); it != rounds.end()) it->second.outcome = e.detail.value_or("");
        }
        break;
      case TraceKind::other: ++a.other; break;
      default: break;
    }
  }

  for (const auto& id : round_order) {
    RoundStats r = rounds.at(id);
    if (auto it = by_round.find(id); it != by_round.end()) r.mean_latency_ms = it->second.second / it->second.first;
    ++a.rounds_total;
    if (r.offers == 0) {
      ++a.rounds_empty;
    } else {
      ++a.rounds_effective;
      if (r.offers == r.expected) ++a.rounds_complete;
    }
    a.rounds.push_back(std::move(r));
  }
  if (a.rounds_effective > 0) {
    a.completeness = static_cast<double>(a.rounds_complete) / static_cast<double>(a.rounds_effective);
  }

  if (!samples.empty()) {
    LatencySummary s;
    s.n = samples.size();
    double sum = 0.0;
    for (double v : samples) sum += v;
    s.mean_ms = sum / static_cast<double>(s.n);
    s.p50_ms = percentile(samples, 50);
    s.p95_ms = percentile(samples, 95);
    auto [lo, hi] = std::minmax_element(samples.begin(), samples.end());
    s.min_ms = *lo;
    s.max_ms = *hi;
    for (const auto& [k, v] : by_agent) s.per_agent[k] = {v.first, v.second / static_cast<double>(v.first)};
    for (const auto& [k, v] : by_round) s.per_round[k] = {v.first, v.second / static_cast<double>(v.first)};
    a.latency = std::move(s);
    try {
      a.drift = drift(series, drift_window);
    } catch (const Error&) {
    }
  }
  return a;
}

namespace detail {

inline std::string fmt3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + p.string());
  return out;
}

}  // namespace detail

/// Run-level mean of per-round mean latencies.
inline std::optional<double> mean_of_round_means(const Aggregate& a) {
  if (!a.latency || a.latency->per_round.empty()) return std::nullopt;
  double sum = 0.0;
  for (const auto& [_, r] : a.latency->per_round) sum += r.mean_ms;
  return sum / static_cast<double>(a.latency->per_round.size());
}

inline nlohmann::json summary_json(const Aggregate& a) {
  nlohmann::json j = {{"cfps", a.cfps},
                      {"offers", a.offers},
                      {"offers_sent", a.offers_sent},
                      {"late_offers", a.late_offers},
                      {"confirms", a.confirms},
                      {"accepts", a.accepts},
                      {"rejects", a.rejects},
                      {"rounds", a.rounds_total},
                      {"rounds_effective", a.rounds_effective},
                      {"rounds_empty", a.rounds_empty},
                      {"rounds_complete", a.rounds_complete},
                      {"completeness", a.completeness},
                      {"minutes", a.per_minute.size()},
                      {"kinds", a.kinds},
                      {"other", a.other}};
  if (a.latency) {
    j["latency"] = {{"n", a.latency->n},           {"mean_ms", a.latency->mean_ms}, {"p50_ms", a.latency->p50_ms},
                    {"p95_ms", a.latency->p95_ms}, {"min_ms", a.latency->min_ms},   {"max_ms", a.latency->max_ms}};
    j["latency"]["mean_of_round_means_ms"] = *mean_of_round_means(a);
  } else {
    j["latency"] = nullptr;
  }
  j["drift_slope_ms_per_hour"] = a.drift ? nlohmann::json(a.drift->slope_ms_per_hour) : nlohmann::json(nullptr);
  return j;
}

/// Writes per_minute.csv, latency_summary.csv, per_agent.csv, per_round.csv
/// and summary.json into `dir`.
inline void write_aggregates(const Aggregate& a, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    auto out = detail::open_out(dir / "per_minute.csv");
    out << "minute,cfps,offers,confirms\n";
    for (const auto& b : a.per_minute) out << b.minute_index << ',' << b.cfps << ',' << b.offers << ',' << b.confirms << '\n';
  }
  {
    auto out = detail::open_out(dir / "latency_summary.csv");
    out << "n,mean_ms,p50_ms,p95_ms,min_ms,max_ms\n";
    if (a.latency) {
      const auto& s = *a.latency;
      out << s.n << ',' << detail::fmt3(s.mean_ms) << ',' << detail::fmt3(s.p50_ms) << ',' << detail::fmt3(s.p95_ms)
          << ',' << detail::fmt3(s.min_ms) << ',' << detail::fmt3(s.max_ms) << '\n';
    }
  }
  {
    auto out = detail::open_out(dir / "per_agent.csv");
    out << "agent_id,offers,mean_latency_ms\n";
    if (a.latency) {
      for (const auto& [agent, mc] : a.latency->per_agent) out << agent << ',' << mc.n << ',' << detail::fmt3(mc.mean_ms) << '\n';
    }
  }
  {
    auto out = detail::open_out(dir / "per_round.csv");
    out << "round_id,expected,offers,mean_latency_ms,outcome\n";
    for (const auto& r : a.rounds) {
      out << r.round_id << ',' << r.expected << ',' << r.offers << ',' << (r.offers ? detail::fmt3(r.mean_latency_ms) : "")
          << ',' << r.outcome << '\n';
    }
  }
  {
    auto out = detail::open_out(dir / "summary.json");
    out << summary_json(a).dump(2) << '\n';
  }
}

}  // namespace llmx
