#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "llmx/envelope.hpp"
#include "llmx/error.hpp"
#include "llmx/random.hpp"
#include "llmx/time.hpp"
#include "llmx/trace.hpp"

namespace llmx {

namespace dist {

struct Constant {
  double value = 0.0;
};
struct Uniform {
  double lo = 0.0;
  double hi = 1.0;
};
/// Samples are clipped at zero.
struct Normal {
  double mean = 0.0;
  double stddev = 1.0;
};
struct Exponential {
  double mean = 1.0;
};

}  // namespace dist

using ValueDistribution = std::variant<dist::Constant, dist::Uniform, dist::Normal>;
/// Delay parameters are in milliseconds.
using DelayDistribution = std::variant<dist::Constant, dist::Exponential, dist::Uniform>;

namespace detail {

inline void check(const dist::Constant& d) {
  if (!std::isfinite(d.value)) throw Error(ErrorCode::invalid_distribution, "constant must be finite");
}
inline void check(const dist::Uniform& d) {
  if (!std::isfinite(d.lo) || !std::isfinite(d.hi) || d.lo > d.hi) {
    throw Error(ErrorCode::invalid_distribution, "uniform requires lo <= hi");
  }
}
inline void check(const dist::Normal& d) {
  if (!std::isfinite(d.mean) || !(d.stddev >= 0.0)) throw Error(ErrorCode::invalid_distribution, "normal requires sigma >= 0");
}
inline void check(const dist::Exponential& d) {
  if (!(d.mean > 0.0) || !std::isfinite(d.mean)) throw Error(ErrorCode::invalid_distribution, "exponential requires mean > 0");
}

inline double sample(const dist::Constant& d, Rng&) { return d.value; }
inline double sample(const dist::Uniform& d, Rng& rng) { return rng.uniform(d.lo, d.hi); }
inline double sample(const dist::Normal& d, Rng& rng) { return std::max(0.0, rng.normal(d.mean, d.stddev)); }
inline double sample(const dist::Exponential& d, Rng& rng) { return rng.exponential(d.mean); }

}  // namespace detail

template <typename... Ts>
void check_distribution(const std::variant<Ts...>& d) {
  std::visit([](const auto& x) { detail::check(x); }, d);
}

template <typename... Ts>
double sample(const std::variant<Ts...>& d, Rng& rng) {
  return std::visit([&](const auto& x) { return detail::sample(x, rng); }, d);
}

/// What a producer sees when asked to bid.
struct NegotiationContext {
  std::string agent_id;
  std::string round_id;
  Attributes constraints = Attributes::object();
  std::vector<double> history;
};

/// A bid: the schema-relevant fields of an Offer plus the think time before sending.
struct OfferDraft {
  double value = 0.0;
  Attributes conditions = Attributes::object();
  Duration delay{0};
};

/// Boundary where a scripted bidder or a live model supplies offer content.
class PayloadProducer {
 public:
  virtual ~PayloadProducer() = default;
  virtual OfferDraft produce(const NegotiationContext& ctx) = 0;
};

class ScriptedBidder final : public PayloadProducer {
 public:
  ScriptedBidder(ValueDistribution value, DelayDistribution delay_ms, std::uint64_t seed)
      : value_(value), delay_(delay_ms), rng_(seed) {
    check_distribution(value_);
    check_distribution(delay_);
  }

  struct Bid {
    double value;
    Duration delay;
  };

  /// Draws value first, then delay, from the bidder's own stream.
  Bid produce_offer(const NegotiationContext& = {}) {
    const double v = sample(value_, rng_);
    const double d = std::max(0.0, sample(delay_, rng_));
    return {v, from_ms(d)};
  }

  OfferDraft produce(const NegotiationContext& ctx) override {
    auto bid = produce_offer(ctx);
    return {bid.value, Attributes::object(), bid.delay};
  }

 private:
  ValueDistribution value_;
  DelayDistribution delay_;
  Rng rng_;
};

/// Raw output of an external text-to-payload function, with the time it took.
struct ExternalReply {
  std::string text;
  Duration elapsed{0};
};

using ExternalFn = std::function<ExternalReply(const NegotiationContext&)>;

/// Wraps an external producer (e.g. a model client). Output must be a JSON
/// object with a finite numeric "value" and optional object "conditions";
/// anything else, a timeout, or an exception counts as a failed attempt.
/// After `retries` failed retries the scripted fallback bids instead.
class ExternalProducer final : public PayloadProducer {
 public:
  ExternalProducer(ExternalFn fn, Duration timeout, int retries, ScriptedBidder fallback, TraceSink* trace = nullptr,
                   const Clock* clock = nullptr)
      : fn_(std::move(fn)), timeout_(timeout), retries_(retries), fallback_(std::move(fallback)), trace_(trace), clock_(clock) {}

  OfferDraft produce(const NegotiationContext& ctx) override {
    Duration spent{0};
    for (int attempt = 0; attempt <= retries_; ++attempt) {
      ++invocations_;
      std::string failure;
      try {
        ExternalReply reply = fn_(ctx);
        spent += std::min(reply.elapsed, timeout_);
        if (reply.elapsed > timeout_) {
          failure = "producer-timeout";
        } else if (auto draft = parse(reply.text, ctx)) {
          draft->delay = spent;
          return *draft;
        } else {
          failure = "producer-invalid-output";
        }
      } catch (const std::exception&) {
        failure = "producer-error";
      }
      if (attempt < retries_) note(TraceKind::retry, ctx, failure);
    }
    note(TraceKind::producer_fallback, ctx, "producer-fallback");
    OfferDraft draft = fallback_.produce(ctx);
    draft.delay += spent;
    return draft;
  }

  std::size_t invocations() const { return invocations_; }

 private:
  static std::optional<OfferDraft> parse(const std::string& text, const NegotiationContext& ctx) {
    Json j = Json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) return std::nullopt;
    auto v = j.find("value");
    if (v == j.end() || !v->is_number()) return std::nullopt;
    OfferDraft d;
    d.value = v->get<double>();
    if (auto c = j.find("conditions"); c != j.end()) {
      if (!c->is_object()) return std::nullopt;
      d.conditions = *c;
    }
    // Validate against the Offer schema exactly as the gateway will.
    Json payload = payload_to_json(Offer{ctx.round_id, d.value, Timestamp{}, d.conditions});
    Json doc = {{"envelope", {{"msg_id", "probe"}, {"ts", format_iso8601(Timestamp{})}, {"from", "agent://probe"},
                              {"to", {"agent://probe"}}, {"capabilities", Json::array()},
                              {"scope", {{"consent", "opt-in"}, {"ttl", 1}}}}},
                {"payload", payload}};
    if (!std::isfinite(d.value) || !validate_document(doc).ok()) return std::nullopt;
    return d;
  }

  void note(TraceKind kind, const NegotiationContext& ctx, std::string detail) {
    if (trace_ == nullptr) return;
    TraceEvent e{.ts = clock_ != nullptr ? clock_->now() : Timestamp{}, .kind = kind, .round_id = ctx.round_id,
                 .agent_id = ctx.agent_id};
    e.detail = std::move(detail);
    trace_->record(std::move(e));
  }

  ExternalFn fn_;
  Duration timeout_;
  int retries_;
  ScriptedBidder fallback_;
  TraceSink* trace_;
  const Clock* clock_;
  std::size_t invocations_ = 0;
};

inline std::unique_ptr<PayloadProducer> wrap_external_producer(ExternalFn fn, Duration timeout, int retries,
                                                               ScriptedBidder fallback, TraceSink* trace = nullptr,
                                                               const Clock* clock = nullptr) {
  return std::make_unique<ExternalProducer>(std::move(fn), timeout, retries, std::move(fallback), trace, clock);
}

}  // namespace llmx
