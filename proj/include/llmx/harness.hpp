#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "llmx/agents.hpp"
#include "llmx/cnet.hpp"
#include "llmx/envelope.hpp"
#include "llmx/error.hpp"
#include "llmx/gateway.hpp"
#include "llmx/metrics.hpp"
#include "llmx/policy.hpp"
#include "llmx/random.hpp"
#include "llmx/time.hpp"
#include "llmx/trace.hpp"
#include "llmx/traffic.hpp"
#include "llmx/transport.hpp"

namespace llmx {

enum class ScheduleKind { fixed, poisson };
enum class ClockKind { virtual_clock, real };

struct ScenarioConfig {
  std::string name = "scenario";
  std::size_t contractors = 5;
  PolicyConfig policy;
  ScheduleKind schedule = ScheduleKind::fixed;
  std::size_t schedule_count = 3;
  Duration schedule_spacing = 30s;
  double rate_per_min = 2.24;
  /// Absent means the fixed schedule's own span.
  std::optional<Duration> duration;
  /// Applied to rounds cyclically: round i uses entry i mod size.
  std::vector<Duration> cfp_deadlines{2s};
  /// Per-round CFP min_value, cyclic like cfp_deadlines; nullopt is no constraint.
  std::vector<std::optional<double>> cfp_min_values{std::nullopt};
  double time_compression = 1.0;
  std::uint64_t seed = 1;
  ClockKind clock = ClockKind::virtual_clock;
  ValueDistribution bidder_value = dist::Uniform{0, 10};
  DelayDistribution bidder_delay_ms = dist::Uniform{1, 5};
  AckBehavior contractor_ack = AckBehavior::always;
  double contractor_ack_drop = 0.0;
  Duration link_latency = 250us;
  RetryPolicy retry;
  double drop_probability = 0.0;
  std::set<int> drop_schedule;
  GatewayConfig gateway;
  Timestamp start_time = *parse_iso8601("2025-01-01T00:00:00.000Z");
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) return out;
    start = pos + 1;
  }
}

inline double parse_number(const std::string& field, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(d)) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(field, "expected a number, got '" + v + "'");
  }
}

inline std::uint64_t parse_uint(const std::string& field, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError(field, "expected a non-negative integer, got '" + v + "'");
  }
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ConfigError(field, "integer out of range: '" + v + "'");
  }
}

/// "name(a,b)" -> {"name", {a, b}}.
inline std::pair<std::string, std::vector<double>> parse_call(const std::string& field, const std::string& v) {
  const auto open = v.find('(');
  if (open == std::string::npos || v.back() != ')') {
    throw ConfigError(field, "expected distribution like uniform(1,5), got '" + v + "'");
  }
  std::vector<double> args;
  const std::string inner = v.substr(open + 1, v.size() - open - 2);
  if (!trim(inner).empty()) {
    for (const auto& a : split(inner, ',')) args.push_back(parse_number(field, a));
  }
  return {trim(v.substr(0, open)), args};
}

template <typename Variant>
Variant parse_distribution(const std::string& field, const std::string& v) {
  auto [name, args] = parse_call(field, v);
  auto want = [&](std::size_t n) {
    if (args.size() != n) throw ConfigError(field, name + " takes " + std::to_string(n) + " argument(s)");
  };
  Variant d;
  if (name == "constant") {
    want(1);
    d = dist::Constant{args[0]};
  } else if (name == "uniform") {
    want(2);
    d = dist::Uniform{args[0], args[1]};
  } else if (name == "normal" && std::is_constructible_v<Variant, dist::Normal>) {
    want(2);
    if constexpr (std::is_constructible_v<Variant, dist::Normal>) d = dist::Normal{args[0], args[1]};
  } else if (name == "exponential" && std::is_constructible_v<Variant, dist::Exponential>) {
    want(1);
    if constexpr (std::is_constructible_v<Variant, dist::Exponential>) d = dist::Exponential{args[0]};
  } else {
    throw ConfigError(field, "unsupported distribution '" + name + "'");
  }
  try {
    check_distribution(d);
  } catch (const Error& e) {
    throw ConfigError(field, e.what());
  }
  return d;
}

inline std::string format_distribution(const ValueDistribution& d) {
  char buf[96];
  if (auto* c = std::get_if<dist::Constant>(&d)) std::snprintf(buf, sizeof buf, "constant(%g)", c->value);
  else if (auto* u = std::get_if<dist::Uniform>(&d)) std::snprintf(buf, sizeof buf, "uniform(%g,%g)", u->lo, u->hi);
  else {
    auto& n = std::get<dist::Normal>(d);
    std::snprintf(buf, sizeof buf, "normal(%g,%g)", n.mean, n.stddev);
  }
  return buf;
}

inline std::string format_distribution(const DelayDistribution& d) {
  char buf[96];
  if (auto* c = std::get_if<dist::Constant>(&d)) std::snprintf(buf, sizeof buf, "constant(%g)", c->value);
  else if (auto* u = std::get_if<dist::Uniform>(&d)) std::snprintf(buf, sizeof buf, "uniform(%g,%g)", u->lo, u->hi);
  else std::snprintf(buf, sizeof buf, "exponential(%g)", std::get<dist::Exponential>(d).mean);
  return buf;
}

}  // namespace detail

/// Applies one `key = value` setting. Throws ConfigError naming the key.
inline void apply_setting(ScenarioConfig& cfg, const std::string& key, const std::string& value) {
  using detail::parse_number;
  using detail::parse_uint;
  const std::string& v = value;
  auto positive_ms = [&](const std::string& s) {
    const double ms = parse_number(key, s);
    if (ms < 0) throw ConfigError(key, "must be >= 0");
    return from_ms(ms);
  };

  if (key == "name") {
    cfg.name = v;
  } else if (key == "contractors") {
    cfg.contractors = parse_uint(key, v);
    if (cfg.contractors < 1) throw ConfigError(key, "must be >= 1");
  } else if (key == "policy") {
    if (v == "low") cfg.policy.kind = PolicyKind::low;
    else if (v == "medium") cfg.policy.kind = PolicyKind::medium;
    else if (v == "high") cfg.policy.kind = PolicyKind::high;
    else throw ConfigError(key, "expected low|medium|high, got '" + v + "'");
  } else if (key == "policy.round_timeout_ms") {
    cfg.policy.round_timeout = positive_ms(v);
  } else if (key == "policy.award_mode") {
    if (v == "collect-only") cfg.policy.award_mode = AwardMode::collect_only;
    else if (v == "award") cfg.policy.award_mode = AwardMode::award;
    else throw ConfigError(key, "expected collect-only|award");
  } else if (key == "policy.tie_break") {
    if (v == "earliest-arrival") cfg.policy.tie_break = TieBreak::earliest_arrival;
    else if (v == "lowest-agent-id") cfg.policy.tie_break = TieBreak::lowest_agent_id;
    else throw ConfigError(key, "expected earliest-arrival|lowest-agent-id");
  } else if (key == "schedule") {
    if (v == "fixed") cfg.schedule = ScheduleKind::fixed;
    else if (v == "poisson") cfg.schedule = ScheduleKind::poisson;
    else throw ConfigError(key, "expected fixed|poisson");
  } else if (key == "schedule.count") {
    cfg.schedule_count = parse_uint(key, v);
  } else if (key == "schedule.spacing_s") {
    const double s = parse_number(key, v);
    if (s < 0) throw ConfigError(key, "must be >= 0");
    cfg.schedule_spacing = from_seconds(s);
  } else if (key == "schedule.rate_per_min") {
    cfg.rate_per_min = parse_number(key, v);
    if (cfg.rate_per_min < 0) throw ConfigError(key, "must be >= 0");
  } else if (key == "duration_s") {
    const double s = parse_number(key, v);
    if (s < 0) throw ConfigError(key, "must be >= 0");
    cfg.duration = from_seconds(s);
  } else if (key == "cfp.deadline_ms") {
    cfg.cfp_deadlines.clear();
    for (const auto& item : detail::split(v, ',')) cfg.cfp_deadlines.push_back(positive_ms(item));
  } else if (key == "cfp.min_value") {
    cfg.cfp_min_values.clear();
    for (const auto& item : detail::split(v, ',')) {
      if (item == "-") cfg.cfp_min_values.emplace_back(std::nullopt);
      else cfg.cfp_min_values.emplace_back(parse_number(key, item));
    }
  } else if (key == "time_compression") {
    cfg.time_compression = parse_number(key, v);
    if (!(cfg.time_compression > 0)) throw ConfigError(key, "must be > 0");
  } else if (key == "seed") {
    cfg.seed = parse_uint(key, v);
  } else if (key == "clock") {
    if (v == "virtual") cfg.clock = ClockKind::virtual_clock;
    else if (v == "real") cfg.clock = ClockKind::real;
    else throw ConfigError(key, "expected virtual|real");
  } else if (key == "bidder.value") {
    cfg.bidder_value = detail::parse_distribution<ValueDistribution>(key, v);
  } else if (key == "bidder.delay_ms") {
    cfg.bidder_delay_ms = detail::parse_distribution<DelayDistribution>(key, v);
  } else if (key == "contractor.ack") {
    if (v == "always") {
      cfg.contractor_ack = AckBehavior::always;
    } else if (v == "never") {
      cfg.contractor_ack = AckBehavior::never;
    } else {
      auto [name, args] = detail::parse_call(key, v);
      if (name != "drop" || args.size() != 1 || args[0] < 0 || args[0] > 1) {
        throw ConfigError(key, "expected always|never|drop(p)");
      }
      cfg.contractor_ack = AckBehavior::drop_probability;
      cfg.contractor_ack_drop = args[0];
    }
  } else if (key == "transport.latency_us") {
    cfg.link_latency = Duration{static_cast<std::int64_t>(parse_uint(key, v))};
  } else if (key == "transport.max_retries") {
    cfg.retry.max_retries = static_cast<int>(parse_uint(key, v));
  } else if (key == "transport.base_delay_ms") {
    cfg.retry.base_delay = positive_ms(v);
  } else if (key == "transport.backoff_factor") {
    cfg.retry.backoff_factor = parse_number(key, v);
    if (cfg.retry.backoff_factor < 1) throw ConfigError(key, "must be >= 1");
  } else if (key == "transport.jitter") {
    cfg.retry.jitter_fraction = parse_number(key, v);
    if (cfg.retry.jitter_fraction < 0 || cfg.retry.jitter_fraction >= 1) throw ConfigError(key, "must be in [0, 1)");
  } else if (key == "fault.drop_probability") {
    cfg.drop_probability = parse_number(key, v);
    if (cfg.drop_probability < 0 || cfg.drop_probability > 1) throw ConfigError(key, "must be in [0, 1]");
  } else if (key == "fault.drop_schedule") {
    cfg.drop_schedule.clear();
    if (!v.empty()) {
      for (const auto& item : detail::split(v, ',')) cfg.drop_schedule.insert(static_cast<int>(parse_uint(key, item)));
    }
  } else if (key == "gateway.secret") {
    cfg.gateway.secret = to_bytes(v);
  } else if (key == "gateway.rate_capacity") {
    cfg.gateway.rate_capacity = parse_number(key, v);
  } else if (key == "gateway.rate_refill_per_s") {
    cfg.gateway.rate_refill_per_s = parse_number(key, v);
  } else if (key == "start_time") {
    auto t = parse_iso8601(v);
    if (!t) throw ConfigError(key, "expected ISO-8601 UTC timestamp");
    cfg.start_time = *t;
  } else {
    throw ConfigError(key, "unknown key");
  }
}

/// Parses the flat `key = value` format; '#' starts a comment line.
inline ScenarioConfig parse_config(std::istream& in) {
  ScenarioConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno), "expected key = value");
    }
    apply_setting(cfg, detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
  }
  if (cfg.cfp_deadlines.empty()) throw ConfigError("cfp.deadline_ms", "needs at least one entry");
  if (cfg.cfp_min_values.empty()) throw ConfigError("cfp.min_value", "needs at least one entry");
  return cfg;
}

inline ScenarioConfig parse_config_text(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

inline ScenarioConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("path", "cannot read " + path.string());
  return parse_config(in);
}

/// Effective run length before compression.
inline Duration nominal_duration(const ScenarioConfig& cfg) {
  if (cfg.duration) return *cfg.duration;
  if (cfg.schedule == ScheduleKind::fixed) {
    return fixed_schedule(cfg.schedule_count, cfg.schedule_spacing).duration;
  }
  return Duration::zero();
}

/// CFP emission offsets from run start, already divided by time_compression.
inline std::vector<Duration> emission_offsets(const ScenarioConfig& cfg) {
  const Duration span = nominal_duration(cfg);
  ArrivalSchedule s = cfg.schedule == ScheduleKind::fixed ? fixed_schedule(cfg.schedule_count, cfg.schedule_spacing)
                                                          : poisson_schedule(cfg.rate_per_min, span, cfg.seed);
  std::vector<Duration> out;
  for (Duration d : s.offsets) {
    if (d >= span) continue;
    out.push_back(Duration{std::llround(static_cast<double>(d.count()) / cfg.time_compression)});
  }
  return out;
}

struct RunSummary {
  std::string name;
  std::uint64_t seed = 0;
  std::size_t contractors = 0;
  std::string policy;
  std::size_t cfps = 0;
  std::size_t offers = 0;
  std::size_t offers_sent = 0;
  std::size_t late_offers = 0;
  std::size_t confirms = 0;
  std::size_t accepts = 0;
  std::size_t rejects = 0;
  std::size_t rounds = 0;
  std::size_t rounds_effective = 0;
  std::size_t rounds_empty = 0;
  double completeness = 0.0;
  std::size_t minutes = 0;
  std::optional<double> mean_ms;
  std::optional<double> p50_ms;
  std::optional<double> p95_ms;
  std::optional<double> drift_slope_ms_per_hour;
  double wall_time_s = 0.0;
};

inline RunSummary summarize(const Aggregate& a) {
  RunSummary s;
  s.cfps = a.cfps;
  s.offers = a.offers;
  s.offers_sent = a.offers_sent;
  s.late_offers = a.late_offers;
  s.confirms = a.confirms;
  s.accepts = a.accepts;
  s.rejects = a.rejects;
  s.rounds = a.rounds_total;
  s.rounds_effective = a.rounds_effective;
  s.rounds_empty = a.rounds_empty;
  s.completeness = a.completeness;
  s.minutes = a.per_minute.size();
  if (a.latency) {
    s.mean_ms = a.latency->mean_ms;
    s.p50_ms = a.latency->p50_ms;
    s.p95_ms = a.latency->p95_ms;
  }
  if (a.drift) s.drift_slope_ms_per_hour = a.drift->slope_ms_per_hour;
  return s;
}

struct RunResult {
  RunSummary summary;
  Aggregate aggregate;
  std::vector<TraceEvent> trace;
};

/// Wires gateway, bus, registry, initiator and contractors for `cfg`, emits
/// the CFP schedule, drains the loop, and aggregates the trace. With
/// `out_dir` set, writes trace.jsonl, audit.jsonl and the aggregate files.
inline RunResult run_scenario(const ScenarioConfig& cfg, const std::optional<std::filesystem::path>& out_dir = {}) {
  const auto wall_start = std::chrono::steady_clock::now();
  if (cfg.contractors < 1) throw ConfigError("contractors", "must be >= 1");
  if (!(cfg.time_compression > 0)) throw ConfigError("time_compression", "must be > 0");

  std::unique_ptr<EventLoop> loop;
  if (cfg.clock == ClockKind::virtual_clock) loop = std::make_unique<VirtualClock>(cfg.start_time);
  else loop = std::make_unique<RealtimeClock>();
  const Timestamp start = loop->now();

  std::ofstream trace_file;
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    trace_file.open(*out_dir / "trace.jsonl", std::ios::binary);
    if (!trace_file) throw Error(ErrorCode::io_error, "cannot write " + (*out_dir / "trace.jsonl").string());
  }
  TraceSink trace(out_dir ? &trace_file : nullptr);
  IdGenerator ids(mix_seed(cfg.seed, 1));
  Bus bus(*loop, ids, &trace, {cfg.link_latency, mix_seed(cfg.seed, 2)});
  if (cfg.drop_probability > 0) {
    bus.set_fault_injector(std::make_shared<DropProbability>(cfg.drop_probability, mix_seed(cfg.seed, 3), true));
  } else if (!cfg.drop_schedule.empty()) {
    bus.set_fault_injector(std::make_shared<DropSchedule>(cfg.drop_schedule));
  }
  Gateway gateway(cfg.gateway, &trace);
  if (out_dir) gateway.open_audit_log((*out_dir / "audit.jsonl").string());

  const Duration span = nominal_duration(cfg);
  const Duration compressed_span = Duration{std::llround(static_cast<double>(span.count()) / cfg.time_compression)};
  const Duration max_deadline = *std::max_element(cfg.cfp_deadlines.begin(), cfg.cfp_deadlines.end());
  Registry registry(gateway, compressed_span + max_deadline + cfg.policy.round_timeout + 1h);
  Exchange x{*loop, bus, gateway, registry, trace, ids};

  registry.register_agent("alice", Role::initiator, *loop);
  Initiator initiator(x, "alice", {cfg.policy, "negotiation", cfg.retry, {}});
  initiator.start();

  std::vector<std::unique_ptr<Contractor>> contractors;
  for (std::size_t i = 0; i < cfg.contractors; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "c%02zu", i + 1);
    registry.register_agent(id, Role::contractor, *loop);
    ContractorConfig cc;
    cc.agent_id = id;
    cc.ack_behavior = cfg.contractor_ack;
    cc.ack_drop_probability = cfg.contractor_ack_drop;
    cc.seed = mix_seed(cfg.seed, 1000 + i);
    cc.retry = cfg.retry;
    auto bidder = std::make_unique<ScriptedBidder>(cfg.bidder_value, cfg.bidder_delay_ms, mix_seed(cfg.seed, 2000 + i));
    contractors.push_back(std::make_unique<Contractor>(x, std::move(cc), std::move(bidder)));
    contractors.back()->start();
  }

  const std::vector<Duration> offsets = emission_offsets(cfg);
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    loop->schedule_at(start + offsets[i], [&, i] {
      Attributes constraints = Attributes::object();
      if (const auto& mv = cfg.cfp_min_values[i % cfg.cfp_min_values.size()]) constraints["min_value"] = *mv;
      try {
        initiator.start_round(cfg.cfp_deadlines[i % cfg.cfp_deadlines.size()], constraints);
      } catch (const Error& e) {
        trace.record({.ts = loop->now(), .kind = TraceKind::other, .agent_id = "alice",
                      .detail = std::string("round-start-failed: ") + e.what(), .raw_kind = "round-start-failed"});
      }
    });
  }

  if (cfg.clock == ClockKind::virtual_clock) {
    loop->run();
  } else {
    // Leave room for the last round's deadline plus the full retry horizon.
    Duration retry_horizon{0};
    for (int n = 0; n <= cfg.retry.max_retries; ++n) retry_horizon += cfg.retry.nominal_delay(n);
    loop->run_until(start + compressed_span + max_deadline + cfg.policy.round_timeout + retry_horizon * 2);
  }
  trace_file.flush();

  RunResult r;
  r.trace = trace.events();
  r.aggregate = aggregate(r.trace);
  r.summary = summarize(r.aggregate);
  r.summary.name = cfg.name;
  r.summary.seed = cfg.seed;
  r.summary.contractors = cfg.contractors;
  r.summary.policy = std::string(to_string(cfg.policy.kind));
  r.summary.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
  if (out_dir) {
    write_aggregates(r.aggregate, *out_dir);
    std::ofstream meta(*out_dir / "run.json", std::ios::binary);
    meta << nlohmann::json{{"name", cfg.name},
                           {"seed", cfg.seed},
                           {"contractors", cfg.contractors},
                           {"policy", to_string(cfg.policy.kind)},
                           {"award_mode", to_string(cfg.policy.award_mode)},
                           {"time_compression", cfg.time_compression},
                           {"clock", cfg.clock == ClockKind::real ? "real" : "virtual"},
                           {"bidder_value", detail::format_distribution(cfg.bidder_value)},
                           {"bidder_delay_ms", detail::format_distribution(cfg.bidder_delay_ms)}}
                .dump(2)
         << '\n';
  }
  return r;
}

struct StabilityReport {
  std::vector<RunSummary> runs;
  /// Per count metric: (max - min) / mean over seeds, 0 when all agree.
  std::map<std::string, double> max_relative_deviation;
};

inline std::map<std::string, double> count_metrics(const RunSummary& s) {
  return {{"cfps", static_cast<double>(s.cfps)},
          {"offers", static_cast<double>(s.offers)},
          {"confirms", static_cast<double>(s.confirms)},
          {"accepts", static_cast<double>(s.accepts)},
          {"rejects", static_cast<double>(s.rejects)},
          {"rounds", static_cast<double>(s.rounds)},
          {"rounds_effective", static_cast<double>(s.rounds_effective)},
          {"rounds_empty", static_cast<double>(s.rounds_empty)},
          {"completeness", s.completeness}};
}

/// Reruns `cfg` once per seed. Errors are rethrown tagged with the seed.
inline StabilityReport repeat_runs(const ScenarioConfig& cfg, const std::vector<std::uint64_t>& seeds,
                                   const std::optional<std::filesystem::path>& out_root = {}) {
  if (seeds.size() < 2) throw Error(ErrorCode::requires_multiple_seeds, "repeat_runs needs at least two seeds");
  StabilityReport rep;
  for (std::uint64_t seed : seeds) {
    ScenarioConfig c = cfg;
    c.seed = seed;
    std::optional<std::filesystem::path> dir;
    if (out_root) dir = *out_root / ("seed-" + std::to_string(seed));
    try {
      rep.runs.push_back(run_scenario(c, dir).summary);
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw Error(e.code(), "seed " + std::to_string(seed) + ": " + e.what());
    }
  }
  std::map<std::string, std::vector<double>> values;
  for (const auto& r : rep.runs) {
    for (const auto& [k, v] : count_metrics(r)) values[k].push_back(v);
  }
  for (const auto& [k, vs] : values) {
    const auto [lo, hi] = std::minmax_element(vs.begin(), vs.end());
    double mean = 0;
    for (double v : vs) mean += v;
    mean /= static_cast<double>(vs.size());
    rep.max_relative_deviation[k] = *hi == *lo ? 0.0 : (*hi - *lo) / std::abs(mean);
  }
  return rep;
}

namespace detail {

inline std::string fmt_opt(const std::optional<double>& v, const char* f = "%.2f") {
  if (!v) return "-";
  char buf[64];
  std::snprintf(buf, sizeof buf, f, *v);
  return buf;
}

inline std::string offers_per_round(const Aggregate& a, std::size_t expected) {
  if (a.rounds.empty()) return "-";
  bool always = true;
  for (const auto& r : a.rounds) always = always && r.offers == expected;
  if (always) return "always " + std::to_string(expected);
  std::string s;
  for (const auto& r : a.rounds) s += (s.empty() ? "" : "/") + std::to_string(r.offers);
  return s;
}

inline std::string termination(const Aggregate& a) {
  std::map<std::string, std::size_t> n;
  for (const auto& r : a.rounds) ++n[r.outcome.empty() ? "open" : r.outcome];
  std::string s;
  for (const auto& [k, c] : n) s += (s.empty() ? "" : ", ") + k + " x" + std::to_string(c);
  return s.empty() ? "-" : s;
}

}  // namespace detail

/// A column of the comparison table, built from one run directory.
struct ReportColumn {
  std::string title;
  std::size_t contractors = 0;
  std::string policy;
  Aggregate aggregate;
};

inline ReportColumn load_report_column(const std::filesystem::path& run_dir) {
  ReportColumn c;
  const auto meta_path = run_dir / "run.json";
  std::ifstream meta(meta_path);
  if (!meta) throw Error(ErrorCode::io_error, "cannot read " + meta_path.string());
  const auto j = nlohmann::json::parse(meta, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::parse_error, meta_path.string() + " is not JSON");
  c.title = j.value("name", run_dir.filename().string());
  c.contractors = j.value("contractors", std::size_t{0});
  c.policy = j.value("policy", "");
  const auto events = read_trace_file((run_dir / "trace.jsonl").string());
  c.aggregate = aggregate(events);
  return c;
}

/// Plain-text comparison table, one column per run.
inline std::string format_report(const std::vector<ReportColumn>& cols) {
  std::vector<std::pair<std::string, std::vector<std::string>>> rows;
  auto row = [&](std::string label, auto&& cell) {
    std::vector<std::string> cells;
    for (const auto& c : cols) cells.push_back(cell(c));
    rows.emplace_back(std::move(label), std::move(cells));
  };
  row("Aspect", [](const ReportColumn& c) { return c.title; });
  row("Identified agents", [](const ReportColumn& c) { return std::to_string(c.contractors); });
  row("Policy", [](const ReportColumn& c) { return c.policy; });
  row("Duration (minutes recorded)", [](const ReportColumn& c) { return std::to_string(c.aggregate.per_minute.size()); });
  row("CFPs issued", [](const ReportColumn& c) { return std::to_string(c.aggregate.cfps); });
  row("Offers received", [](const ReportColumn& c) { return std::to_string(c.aggregate.offers); });
  row("Confirms", [](const ReportColumn& c) { return std::to_string(c.aggregate.confirms); });
  row("Accepts", [](const ReportColumn& c) { return std::to_string(c.aggregate.accepts); });
  row("Rejects", [](const ReportColumn& c) { return std::to_string(c.aggregate.rejects); });
  row("Rounds recorded", [](const ReportColumn& c) {
    const auto& a = c.aggregate;
    std::string s = std::to_string(a.rounds_total);
    if (a.rounds_empty > 0) {
      s += " (" + std::to_string(a.rounds_effective) + " effective + " + std::to_string(a.rounds_empty) + " empty)";
    }
    return s;
  });
  row("Offers per round", [](const ReportColumn& c) { return detail::offers_per_round(c.aggregate, c.contractors); });
  row("Round completeness", [](const ReportColumn& c) { return detail::fmt_opt(c.aggregate.completeness, "%.3f"); });
  auto lat = [](auto field) {
    return [field](const ReportColumn& c) {
      return c.aggregate.latency ? detail::fmt_opt((*c.aggregate.latency).*field) : std::string("-");
    };
  };
  row("Mean latency (ms)", lat(&LatencySummary::mean_ms));
  row("p50 latency (ms)", lat(&LatencySummary::p50_ms));
  row("p95 latency (ms)", lat(&LatencySummary::p95_ms));
  row("Drift (ms/hour)", [](const ReportColumn& c) {
    return c.aggregate.drift ? detail::fmt_opt(c.aggregate.drift->slope_ms_per_hour, "%.4f") : std::string("-");
  });
  row("Conversation termination", [](const ReportColumn& c) { return detail::termination(c.aggregate); });

  std::size_t label_w = 0;
  std::vector<std::size_t> col_w(cols.size(), 0);
  for (const auto& [label, cells] : rows) {
    label_w = std::max(label_w, label.size());
    for (std::size_t i = 0; i < cells.size(); ++i) col_w[i] = std::max(col_w[i], cells[i].size());
  }
  std::string out;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& [label, cells] = rows[r];
    out += label + std::string(label_w - label.size(), ' ');
    for (std::size_t i = 0; i < cells.size(); ++i) out += " | " + cells[i] + std::string(col_w[i] - cells[i].size(), ' ');
    out += '\n';
    if (r == 0) {
      out += std::string(label_w, '-');
      for (std::size_t w : col_w) out += "-+-" + std::string(w, '-');
      out += '\n';
    }
  }
  return out;
}

}  // namespace llmx
