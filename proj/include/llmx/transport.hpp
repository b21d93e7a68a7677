#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "llmx/envelope.hpp"
#include "llmx/error.hpp"
#include "llmx/random.hpp"
#include "llmx/time.hpp"
#include "llmx/trace.hpp"

namespace llmx {

/// Dot-separated routing address. In patterns, `*` matches exactly one segment.
class Subject {
 public:
  static Subject parse(std::string_view raw) {
    Subject s;
    s.raw_ = std::string(raw);
    if (raw.empty()) throw Error(ErrorCode::invalid_subject, "empty subject");
    std::size_t start = 0;
    while (true) {
      const std::size_t dot = raw.find('.', start);
      const auto seg = raw.substr(start, dot == std::string_view::npos ? std::string_view::npos : dot - start);
      if (seg.empty()) throw Error(ErrorCode::invalid_subject, "empty segment in '" + s.raw_ + "'");
      if (seg.find('*') != std::string_view::npos && seg != "*") {
        throw Error(ErrorCode::invalid_subject, "partial wildcard in '" + s.raw_ + "'");
      }
      s.segments_.emplace_back(seg);
      if (dot == std::string_view::npos) break;
      start = dot + 1;
    }
    return s;
  }

  const std::string& str() const { return raw_; }
  std::span<const std::string> segments() const { return segments_; }

  bool operator==(const Subject& o) const { return raw_ == o.raw_; }

 private:
  std::string raw_;
  std::vector<std::string> segments_;
};

inline bool subject_matches(const Subject& pattern, const Subject& concrete) {
  const auto p = pattern.segments();
  const auto c = concrete.segments();
  if (p.size() != c.size()) return false;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] != "*" && p[i] != c[i]) return false;
  }
  return true;
}

inline bool subject_matches(std::string_view pattern, std::string_view concrete) {
  return subject_matches(Subject::parse(pattern), Subject::parse(concrete));
}

/// Maps an envelope recipient to its subject:
/// topic://x -> topic.x, agent://bob -> agent.bob.inbox, ack://id -> ack.id.
inline Subject subject_for(std::string_view recipient) {
  if (recipient.starts_with("topic://")) return Subject::parse("topic." + std::string(recipient.substr(8)));
  if (recipient.starts_with("agent://")) return Subject::parse("agent." + std::string(recipient.substr(8)) + ".inbox");
  if (recipient.starts_with("ack://")) return Subject::parse("ack." + std::string(recipient.substr(6)));
  return Subject::parse(recipient);
}

inline Subject inbox_subject(std::string_view agent_id) { return Subject::parse("agent." + std::string(agent_id) + ".inbox"); }

enum class Reliability { fire_and_forget, ack_required };

struct RetryPolicy {
  int max_retries = 3;
  Duration base_delay = 100ms;
  double backoff_factor = 2.0;
  double jitter_fraction = 0.1;

  /// base_delay * backoff_factor^n, before jitter.
  Duration nominal_delay(int n) const {
    return Duration{std::llround(static_cast<double>(base_delay.count()) * std::pow(backoff_factor, n))};
  }

  Duration delay(int n, Rng& rng) const {
    const Duration nominal = nominal_delay(n);
    if (jitter_fraction <= 0.0) return nominal;
    const double scale = 1.0 + jitter_fraction * (2.0 * rng.uniform01() - 1.0);
    return Duration{std::llround(static_cast<double>(nominal.count()) * scale)};
  }
};

enum class DeliveryStatus { sent, acked, exhausted, expired };

constexpr std::string_view to_string(DeliveryStatus s) {
  switch (s) {
    case DeliveryStatus::sent: return "sent";
    case DeliveryStatus::acked: return "acked";
    case DeliveryStatus::exhausted: return "exhausted";
    case DeliveryStatus::expired: return "expired";
  }
  return "";
}

/// Final outcome for one (message, subscriber) pair. `sent` is used for
/// fire-and-forget publications.
struct DeliveryReceipt {
  std::string msg_id;
  std::string subscriber;
  std::string subject;
  DeliveryStatus status = DeliveryStatus::sent;
  int attempts = 0;
};

struct Delivery {
  Envelope envelope;
  std::string subject;
  int attempt = 1;
  Timestamp delivered_at;
};

using DeliveryHandler = std::function<void(const Delivery&)>;

class Bus;

class Subscription {
 public:
  std::uint64_t id() const { return id_; }
  const Subject& pattern() const { return pattern_; }
  const std::string& owner() const { return owner_; }

  /// Next queued delivery; only used when no handler was given.
  std::optional<Delivery> poll() {
    std::lock_guard lock(mu_);
    if (queue_.empty()) return std::nullopt;
    Delivery d = std::move(queue_.front());
    queue_.pop_front();
    return d;
  }

  std::size_t queued() const {
    std::lock_guard lock(mu_);
    return queue_.size();
  }

  bool active() const {
    std::lock_guard lock(mu_);
    return active_;
  }

 private:
  friend class Bus;

  Subscription(std::uint64_t id, Subject pattern, std::string owner, DeliveryHandler handler)
      : id_(id), pattern_(std::move(pattern)), owner_(std::move(owner)), handler_(std::move(handler)) {}

  void deliver(Delivery d) {
    DeliveryHandler handler;
    {
      std::lock_guard lock(mu_);
      if (!active_) return;
      if (!handler_) {
        queue_.push_back(std::move(d));
        return;
      }
      handler = handler_;
    }
    handler(d);
  }

  std::uint64_t id_;
  Subject pattern_;
  std::string owner_;
  DeliveryHandler handler_;
  mutable std::mutex mu_;
  std::deque<Delivery> queue_;
  bool active_ = true;
};

using SubscriptionPtr = std::shared_ptr<Subscription>;

using ReceiptCallback = std::function<void(const DeliveryReceipt&)>;

/// Shared completion state of one publish call; receipts arrive asynchronously.
class Publication {
 public:
  const std::string& msg_id() const { return msg_id_; }
  std::size_t fanout() const { return fanout_; }
  bool complete() const {
    std::lock_guard lock(mu_);
    return receipts_.size() == fanout_;
  }
  std::vector<DeliveryReceipt> receipts() const {
    std::lock_guard lock(mu_);
    return receipts_;
  }

 private:
  friend class Bus;
  mutable std::mutex mu_;
  std::string msg_id_;
  std::size_t fanout_ = 0;
  std::vector<DeliveryReceipt> receipts_;
  ReceiptCallback callback_;
};

using PublicationPtr = std::shared_ptr<Publication>;

// ---------------------------------------------------------------------------
// Fault injection

enum class Leg { delivery, ack };

struct Transmission {
  const Envelope& envelope;
  std::string_view subscriber;
  int attempt;
  Leg leg;
};

/// Decides, per transmission, whether the link loses it.
class FaultInjector {
 public:
  virtual ~FaultInjector() = default;
  virtual bool drop(const Transmission& t) = 0;
};

class DropProbability final : public FaultInjector {
 public:
  DropProbability(double p, std::uint64_t seed, bool include_acks = false)
      : p_(p), rng_(mix_seed(seed, 0xfa17)), include_acks_(include_acks) {}

  bool drop(const Transmission& t) override {
    if (t.leg == Leg::ack && !include_acks_) return false;
    return rng_.uniform01() < p_;
  }

 private:
  double p_;
  Rng rng_;
  bool include_acks_;
};

/// Drops the listed delivery attempt numbers (1-based) of every message.
class DropSchedule final : public FaultInjector {
 public:
  explicit DropSchedule(std::set<int> attempts) : attempts_(std::move(attempts)) {}

  static DropSchedule first(int n) {
    std::set<int> s;
    for (int i = 1; i <= n; ++i) s.insert(i);
    return DropSchedule(std::move(s));
  }

  bool drop(const Transmission& t) override { return t.leg == Leg::delivery && attempts_.contains(t.attempt); }

 private:
  std::set<int> attempts_;
};

class DropIf final : public FaultInjector {
 public:
  explicit DropIf(std::function<bool(const Transmission&)> pred) : pred_(std::move(pred)) {}
  bool drop(const Transmission& t) override { return pred_(t); }

 private:
  std::function<bool(const Transmission&)> pred_;
};

// ---------------------------------------------------------------------------
// In-process bus

struct BusOptions {
  /// One-way link latency applied to every delivery and ack.
  Duration latency = 250us;
  std::uint64_t seed = 0;
};

/// Subject-routed publish/subscribe with per-subscriber ack tracking and
/// exponential-backoff redelivery. All timing goes through the EventLoop, so
/// under a VirtualClock the bus is fully deterministic.
class Bus {
 public:
  Bus(EventLoop& loop, IdGenerator& ids, TraceSink* trace = nullptr, BusOptions options = {})
      : loop_(loop), ids_(ids), trace_(trace), options_(options), jitter_(mix_seed(options.seed, 0xb05)) {}

  Bus(const Bus&) = delete;
  Bus& operator=(const Bus&) = delete;

  EventLoop& loop() { return loop_; }
  IdGenerator& ids() { return ids_; }

  void set_fault_injector(std::shared_ptr<FaultInjector> injector) {
    std::lock_guard lock(mu_);
    faults_ = std::move(injector);
  }

  SubscriptionPtr subscribe(std::string_view pattern, std::string owner, DeliveryHandler handler = {}) {
    auto subject = Subject::parse(pattern);
    std::lock_guard lock(mu_);
    SubscriptionPtr sub(new Subscription(next_sub_id_++, std::move(subject), std::move(owner), std::move(handler)));
    subs_.push_back(sub);
    return sub;
  }

  void unsubscribe(const SubscriptionPtr& sub) {
    std::lock_guard lock(mu_);
    {
      std::lock_guard sl(sub->mu_);
      sub->active_ = false;
    }
    std::erase(subs_, sub);
  }

  /// Fans the envelope out to every subscription matching one of its
  /// recipients. Throws Expired if the envelope's ttl has already elapsed.
  PublicationPtr publish(const Envelope& env, Reliability reliability, RetryPolicy retry = {},
                         ReceiptCallback on_receipt = {}) {
    const Timestamp expires_at = env.ts + std::chrono::seconds(env.scope.ttl_s);
    if (loop_.now() >= expires_at) throw Error(ErrorCode::expired, "ttl elapsed before first attempt of " + env.msg_id);

    auto pub = std::make_shared<Publication>();
    pub->msg_id_ = env.msg_id;
    pub->callback_ = std::move(on_receipt);
    auto shared_env = std::make_shared<const Envelope>(env);

    std::vector<std::shared_ptr<Pending>> started;
    {
      std::lock_guard lock(mu_);
      std::vector<std::uint64_t> seen;
      for (const auto& to : env.to) {
        const Subject subject = subject_for(to);
        for (const auto& sub : subs_) {
          if (!subject_matches(sub->pattern(), subject)) continue;
          if (std::find(seen.begin(), seen.end(), sub->id()) != seen.end()) continue;
          seen.push_back(sub->id());
          auto p = std::make_shared<Pending>();
          p->pub = pub;
          p->sub = sub;
          p->env = shared_env;
          p->subject = subject.str();
          p->reliability = reliability;
          p->retry = retry;
          p->expires_at = expires_at;
          if (reliability == Reliability::ack_required) pending_[env.msg_id].push_back(p);
          started.push_back(p);
        }
      }
      pub->fanout_ = started.size();
      ++published_;
    }
    for (auto& p : started) attempt(p);
    return pub;
  }

  /// Acknowledges `ref_msg_id` on behalf of `from_agent`: publishes an Ack on
  /// `ack.<ref_msg_id>` and stops redelivery to that agent's subscriptions.
  void ack(const std::string& ref_msg_id, std::string_view from_agent) {
    Envelope ack_env = make_envelope(agent_uri(from_agent), {"ack://" + ref_msg_id}, Ack{ref_msg_id}, {}, loop_, ids_);
    std::vector<std::shared_ptr<Pending>> targets;
    {
      std::lock_guard lock(mu_);
      if (auto it = pending_.find(ref_msg_id); it != pending_.end()) {
        for (const auto& p : it->second) {
          if (p->sub->owner() == from_agent) targets.push_back(p);
        }
      }
    }
    if (targets.empty()) {
      record({.kind = TraceKind::ack, .agent_id = std::string(from_agent), .msg_id = ref_msg_id, .detail = "unknown"});
    }
    for (auto& p : targets) {
      bool dropped = false;
      {
        std::lock_guard lock(mu_);
        if (faults_) dropped = faults_->drop({ack_env, from_agent, p->attempts, Leg::ack});
      }
      if (dropped) continue;
      loop_.schedule_after(options_.latency, [this, p] { on_ack_arrival(p); });
    }
    // Observers of ack subjects see the ack as an ordinary message.
    publish(ack_env, Reliability::fire_and_forget);
  }

  std::size_t published() const {
    std::lock_guard lock(mu_);
    return published_;
  }

  std::size_t in_flight() const {
    std::lock_guard lock(mu_);
    std::size_t n = 0;
    for (const auto& [id, list] : pending_) {
      for (const auto& p : list) n += p->done ? 0 : 1;
    }
    return n;
  }

 private:
  struct Pending {
    PublicationPtr pub;
    SubscriptionPtr sub;
    std::shared_ptr<const Envelope> env;
    std::string subject;
    Reliability reliability = Reliability::fire_and_forget;
    RetryPolicy retry;
    Timestamp expires_at;
    int attempts = 0;
    TimerId timer = 0;
    bool done = false;
  };

  void record(TraceEvent e) {
    if (trace_ == nullptr) return;
    e.ts = loop_.now();
    trace_->record(std::move(e));
  }

  void attempt(const std::shared_ptr<Pending>& p) {
    if (p->done) return;
    if (loop_.now() >= p->expires_at) {
      finish(p, DeliveryStatus::expired);
      return;
    }
    const int n = ++p->attempts;
    if (n > 1) {
      record({.kind = TraceKind::retry, .agent_id = p->sub->owner(), .msg_id = p->env->msg_id,
              .detail = "attempt " + std::to_string(n)});
    }
    bool dropped = false;
    Duration next_wait{};
    {
      std::lock_guard lock(mu_);
      if (faults_) dropped = faults_->drop({*p->env, p->sub->owner(), n, Leg::delivery});
      if (p->reliability == Reliability::ack_required) {
        next_wait = p->retry.delay(std::min(n - 1, p->retry.max_retries), jitter_);
      }
    }
    if (!dropped) {
      loop_.schedule_after(options_.latency, [this, p, n] {
        p->sub->deliver(Delivery{*p->env, p->subject, n, loop_.now()});
      });
    }
    if (p->reliability == Reliability::fire_and_forget) {
      finish(p, DeliveryStatus::sent);
      return;
    }
    if (n <= p->retry.max_retries) {
      p->timer = loop_.schedule_after(next_wait, [this, p] { attempt(p); });
    } else {
      p->timer = loop_.schedule_after(next_wait, [this, p] { finish(p, DeliveryStatus::exhausted); });
    }
  }

  void on_ack_arrival(const std::shared_ptr<Pending>& p) {
    if (p->done) {
      record({.kind = TraceKind::ack, .agent_id = p->sub->owner(), .msg_id = p->env->msg_id, .detail = "duplicate"});
      return;
    }
    loop_.cancel(p->timer);
    record({.kind = TraceKind::ack, .agent_id = p->sub->owner(), .msg_id = p->env->msg_id});
    finish(p, DeliveryStatus::acked);
  }

  void finish(const std::shared_ptr<Pending>& p, DeliveryStatus status) {
    if (p->done) return;
    p->done = true;
    DeliveryReceipt receipt{p->env->msg_id, p->sub->owner(), p->subject, status, p->attempts};
    ReceiptCallback cb;
    {
      std::lock_guard lock(p->pub->mu_);
      p->pub->receipts_.push_back(receipt);
      cb = p->pub->callback_;
    }
    if (cb) cb(receipt);
  }

  EventLoop& loop_;
  IdGenerator& ids_;
  TraceSink* trace_;
  BusOptions options_;
  mutable std::recursive_mutex mu_;
  Rng jitter_;
  std::shared_ptr<FaultInjector> faults_;
  std::uint64_t next_sub_id_ = 1;
  std::vector<SubscriptionPtr> subs_;
  std::unordered_map<std::string, std::vector<std::shared_ptr<Pending>>> pending_;
  std::size_t published_ = 0;
};

}  // namespace llmx
