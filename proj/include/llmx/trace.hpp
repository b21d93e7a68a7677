#pragma once

#include <cstdint>
#include <fstream>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "llmx/error.hpp"
#include "llmx/time.hpp"

namespace llmx {

enum class TraceKind {
  cfp_sent,
  offer_sent,
  offer_received,
  confirm,
  accept,
  reject,
  ack,
  retry,
  late_offer,
  admitted,
  rejected_admission,
  round_terminal,
  alt_turn,
  producer_fallback,
  other,
};

inline constexpr std::pair<TraceKind, std::string_view> kTraceKindNames[] = {
    {TraceKind::cfp_sent, "cfp-sent"},
    {TraceKind::offer_sent, "offer-sent"},
    {TraceKind::offer_received, "offer-received"},
    {TraceKind::confirm, "confirm"},
    {TraceKind::accept, "accept"},
    {TraceKind::reject, "reject"},
    {TraceKind::ack, "ack"},
    {TraceKind::retry, "retry"},
    {TraceKind::late_offer, "late-offer"},
    {TraceKind::admitted, "admitted"},
    {TraceKind::rejected_admission, "rejected-admission"},
    {TraceKind::round_terminal, "round-terminal"},
    {TraceKind::alt_turn, "alt-turn"},
    {TraceKind::producer_fallback, "producer-fallback"},
};

constexpr std::string_view to_string(TraceKind k) {
  for (const auto& [kind, name] : kTraceKindNames) {
    if (kind == k) return name;
  }
  return "other";
}

inline TraceKind trace_kind_from(std::string_view name) {
  for (const auto& [kind, n] : kTraceKindNames) {
    if (n == name) return kind;
  }
  return TraceKind::other;
}

/// One observability record. `expected` is set on cfp-sent (contractor count
/// snapshot), `turn` on alt-turn, and `detail` carries a short reason tag.
struct TraceEvent {
  Timestamp ts;
  TraceKind kind = TraceKind::other;
  std::optional<std::string> round_id;
  std::optional<std::string> agent_id;
  std::optional<double> latency_ms;
  std::optional<std::string> msg_id;
  std::optional<std::int64_t> expected;
  std::optional<std::int64_t> turn;
  std::optional<std::string> detail;
  // Original kind name for records of kinds this build does not know.
  std::string raw_kind;

  std::string_view kind_name() const { return kind == TraceKind::other ? std::string_view(raw_kind) : to_string(kind); }
};

inline nlohmann::json to_json(const TraceEvent& e) {
  nlohmann::json j = {{"ts", format_iso8601(e.ts)}, {"kind", e.kind_name()}};
  if (e.round_id) j["round_id"] = *e.round_id;
  if (e.agent_id) j["agent_id"] = *e.agent_id;
  if (e.latency_ms) j["latency_ms"] = *e.latency_ms;
  if (e.msg_id) j["msg_id"] = *e.msg_id;
  if (e.expected) j["expected"] = *e.expected;
  if (e.turn) j["turn"] = *e.turn;
  if (e.detail) j["detail"] = *e.detail;
  return j;
}

/// Parses one JSONL line. Trace timestamps are millisecond-precision.
inline TraceEvent trace_event_from_json(const nlohmann::json& j) {
  TraceEvent e;
  auto ts = parse_iso8601(j.at("ts").get<std::string>());
  if (!ts) throw Error(ErrorCode::parse_error, "trace event with invalid ts");
  e.ts = *ts;
  e.raw_kind = j.at("kind").get<std::string>();
  e.kind = trace_kind_from(e.raw_kind);
  if (e.kind != TraceKind::other) e.raw_kind.clear();
  if (j.contains("round_id")) e.round_id = j["round_id"].get<std::string>();
  if (j.contains("agent_id")) e.agent_id = j["agent_id"].get<std::string>();
  if (j.contains("latency_ms")) e.latency_ms = j["latency_ms"].get<double>();
  if (j.contains("msg_id")) e.msg_id = j["msg_id"].get<std::string>();
  if (j.contains("expected")) e.expected = j["expected"].get<std::int64_t>();
  if (j.contains("turn")) e.turn = j["turn"].get<std::int64_t>();
  if (j.contains("detail")) e.detail = j["detail"].get<std::string>();
  return e;
}

/// Append-only, serializing sink shared by every writer in a run. Events are
/// kept in memory and optionally streamed as JSONL.
class TraceSink {
 public:
  TraceSink() = default;
  explicit TraceSink(std::ostream* stream) : stream_(stream) {}

  void record(TraceEvent e) {
    e.ts = floor_ms(e.ts);
    std::lock_guard lock(mu_);
    if (stream_ != nullptr) *stream_ << to_json(e).dump() << '\n';
    events_.push_back(std::move(e));
  }

  std::vector<TraceEvent> events() const {
    std::lock_guard lock(mu_);
    return events_;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return events_.size();
  }

  std::size_t count(TraceKind kind) const {
    std::lock_guard lock(mu_);
    std::size_t n = 0;
    for (const auto& e : events_) n += e.kind == kind ? 1 : 0;
    return n;
  }

 private:
  mutable std::mutex mu_;
  std::ostream* stream_ = nullptr;
  std::vector<TraceEvent> events_;
};

inline void write_trace_jsonl(std::ostream& out, const std::vector<TraceEvent>& events) {
  for (const auto& e : events) out << to_json(e).dump() << '\n';
}

inline std::vector<TraceEvent> read_trace_jsonl(std::istream& in) {
  std::vector<TraceEvent> events;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw Error(ErrorCode::parse_error, "trace line " + std::to_string(lineno));
    events.push_back(trace_event_from_json(j));
  }
  return events;
}

inline std::vector<TraceEvent> read_trace_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path);
  return read_trace_jsonl(in);
}

}  // namespace llmx
