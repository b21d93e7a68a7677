#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/hmac.h>

#include "llmx/envelope.hpp"
#include "llmx/time.hpp"
#include "llmx/trace.hpp"
#include "llmx/transport.hpp"

namespace llmx {

using Bytes = std::vector<std::uint8_t>;

inline Bytes to_bytes(std::string_view s) { return Bytes(s.begin(), s.end()); }

/// Signed claims: HMAC-SHA256 over the canonical JSON of
/// {"agent_id","exp","iat"} (epoch milliseconds).
struct AuthToken {
  std::string agent_id;
  Timestamp issued_at;
  Timestamp expires_at;
  Bytes signature;
};

namespace detail {

inline std::string token_claims(std::string_view agent_id, Timestamp iat, Timestamp exp) {
  using std::chrono::duration_cast;
  using std::chrono::milliseconds;
  Json claims = {{"agent_id", agent_id},
                 {"iat", duration_cast<milliseconds>(iat.time_since_epoch()).count()},
                 {"exp", duration_cast<milliseconds>(exp.time_since_epoch()).count()}};
  return claims.dump();
}

inline Bytes hmac_sha256(std::span<const std::uint8_t> key, std::string_view message) {
  Bytes out(EVP_MAX_MD_SIZE);
  unsigned int len = 0;
  HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()),
       reinterpret_cast<const unsigned char*>(message.data()), message.size(), out.data(), &len);
  out.resize(len);
  return out;
}

}  // namespace detail

inline AuthToken issue_token(std::string agent_id, std::span<const std::uint8_t> secret, Duration validity,
                             const Clock& clock) {
  AuthToken t;
  t.agent_id = std::move(agent_id);
  t.issued_at = floor_ms(clock.now());
  t.expires_at = t.issued_at + validity;
  t.expires_at = floor_ms(t.expires_at);
  t.signature = detail::hmac_sha256(secret, detail::token_claims(t.agent_id, t.issued_at, t.expires_at));
  return t;
}

enum class TokenStatus { ok, auth_failure, expired };

inline TokenStatus verify_token(const AuthToken& token, std::span<const std::uint8_t> secret, const Clock& clock) {
  const Bytes expected = detail::hmac_sha256(secret, detail::token_claims(token.agent_id, token.issued_at, token.expires_at));
  if (expected.size() != token.signature.size() ||
      CRYPTO_memcmp(expected.data(), token.signature.data(), expected.size()) != 0) {
    return TokenStatus::auth_failure;
  }
  if (clock.now() > token.expires_at) return TokenStatus::expired;
  return TokenStatus::ok;
}

/// Per-agent token bucket. Each agent starts full.
class RateLimiter {
 public:
  RateLimiter(double capacity, double refill_per_second) : capacity_(capacity), refill_(refill_per_second) {}

  bool try_acquire(const std::string& agent, Timestamp now) {
    auto [it, inserted] = buckets_.try_emplace(agent, Bucket{capacity_, now});
    Bucket& b = it->second;
    if (!inserted && now > b.last) {
      b.level = std::min(capacity_, b.level + refill_ * std::chrono::duration<double>(now - b.last).count());
      b.last = now;
    }
    if (b.level < 1.0) return false;
    b.level -= 1.0;
    return true;
  }

  double level(const std::string& agent) const {
    auto it = buckets_.find(agent);
    return it == buckets_.end() ? capacity_ : it->second.level;
  }

  double capacity() const { return capacity_; }

 private:
  struct Bucket {
    double level;
    Timestamp last;
  };
  double capacity_;
  double refill_;
  std::unordered_map<std::string, Bucket> buckets_;
};

/// Bounded set of recently seen ids; the oldest insertion is evicted first.
class DedupStore {
 public:
  explicit DedupStore(std::size_t capacity = 100'000) : capacity_(capacity) {}

  bool contains(const std::string& id) const { return set_.contains(id); }

  /// Returns false if the id was already present.
  bool insert(const std::string& id) {
    if (!set_.insert(id).second) return false;
    order_.push_back(id);
    if (order_.size() > capacity_) {
      set_.erase(order_.front());
      order_.pop_front();
    }
    return true;
  }

  std::size_t size() const { return set_.size(); }

 private:
  std::size_t capacity_;
  std::unordered_set<std::string> set_;
  std::deque<std::string> order_;
};

enum class AdmissionDecision { admitted, rejected };

enum class RejectReason { invalid_token, token_expired, sender_mismatch, consent_required, malformed, duplicate, rate_limited };

constexpr std::string_view to_string(RejectReason r) {
  switch (r) {
    case RejectReason::invalid_token: return "invalid-token";
    case RejectReason::token_expired: return "token-expired";
    case RejectReason::sender_mismatch: return "sender-mismatch";
    case RejectReason::consent_required: return "consent-required";
    case RejectReason::malformed: return "malformed";
    case RejectReason::duplicate: return "duplicate";
    case RejectReason::rate_limited: return "rate-limited";
  }
  return "";
}

struct AdmissionResult {
  std::optional<RejectReason> reason;
  std::string detail;

  bool admitted() const { return !reason.has_value(); }
  explicit operator bool() const { return admitted(); }
};

struct AuditRecord {
  Timestamp ts;
  std::string agent_id;
  std::string msg_id;
  AdmissionDecision decision = AdmissionDecision::admitted;
  std::string reason;
};

inline Json to_json(const AuditRecord& r) {
  return {{"ts", format_iso8601(r.ts)},
          {"agent_id", r.agent_id},
          {"msg_id", r.msg_id},
          {"decision", r.decision == AdmissionDecision::admitted ? "admitted" : "rejected"},
          {"reason", r.reason}};
}

struct GatewayConfig {
  Bytes secret = to_bytes("llmx-dev-secret");
  double rate_capacity = 50;
  double rate_refill_per_s = 50;
  std::size_t dedup_capacity = 100'000;
};

/// Edge admission control. Checks run in a fixed order and the first failure
/// is the reported reason; every call leaves exactly one audit record.
class Gateway {
 public:
  explicit Gateway(GatewayConfig config = {}, TraceSink* trace = nullptr)
      : config_(std::move(config)),
        limiter_(config_.rate_capacity, config_.rate_refill_per_s),
        dedup_(config_.dedup_capacity),
        trace_(trace) {}

  const GatewayConfig& config() const { return config_; }

  AuthToken issue(std::string agent_id, Duration validity, const Clock& clock) const {
    return issue_token(std::move(agent_id), config_.secret, validity, clock);
  }

  /// Streams audit records to `path` as JSONL in addition to keeping them.
  void open_audit_log(const std::string& path) {
    std::lock_guard lock(mu_);
    audit_file_ = std::make_unique<std::ofstream>(path);
    if (!*audit_file_) throw Error(ErrorCode::io_error, "cannot open " + path);
  }

  AdmissionResult admit(const Envelope& env, const AuthToken& token, const Clock& clock) {
    return admit_fields({env.msg_id, env.from, std::string(to_string(env.scope.consent))}, token, clock,
                        [&] { return validate(env); });
  }

  /// Admission of a raw wire document (e.g. a socket frame). Fields needed by
  /// an early check that are missing or ill-typed are reported as malformed.
  AdmissionResult admit_document(const Json& doc, const AuthToken& token, const Clock& clock) {
    Fields f;
    const Json* meta = doc.is_object() && doc.contains("envelope") ? &doc["envelope"] : nullptr;
    if (meta != nullptr && meta->is_object()) {
      if (auto it = meta->find("msg_id"); it != meta->end() && it->is_string()) f.msg_id = *it;
      if (auto it = meta->find("from"); it != meta->end() && it->is_string()) f.from = *it;
      if (auto it = meta->find("scope"); it != meta->end() && it->is_object()) {
        if (auto c = it->find("consent"); c != it->end() && c->is_string()) f.consent = *c;
      }
    }
    return admit_fields(std::move(f), token, clock, [&] { return validate_document(doc); });
  }

  /// Admission followed by publication; rejected envelopes never reach the bus.
  std::pair<AdmissionResult, PublicationPtr> submit(Bus& bus, const Envelope& env, const AuthToken& token,
                                                    Reliability reliability, RetryPolicy retry = {},
                                                    ReceiptCallback on_receipt = {}) {
    AdmissionResult r = admit(env, token, bus.loop());
    if (!r) return {r, nullptr};
    return {r, bus.publish(env, reliability, retry, std::move(on_receipt))};
  }

  std::vector<AuditRecord> audit() const {
    std::lock_guard lock(mu_);
    return audit_;
  }

  std::size_t audit_size() const {
    std::lock_guard lock(mu_);
    return audit_.size();
  }

 private:
  struct Fields {
    std::optional<std::string> msg_id;
    std::optional<std::string> from;
    std::optional<std::string> consent;
  };

  template <typename Validate>
  AdmissionResult admit_fields(Fields f, const AuthToken& token, const Clock& clock, Validate&& validate_fn) {
    std::lock_guard lock(mu_);
    const Timestamp now = clock.now();
    AdmissionResult result = check(f, token, now, validate_fn);
    const std::string msg_id = f.msg_id.value_or("");
    if (result.admitted()) dedup_.insert(msg_id);

    AuditRecord rec{now, token.agent_id, msg_id,
                    result.admitted() ? AdmissionDecision::admitted : AdmissionDecision::rejected,
                    result.admitted() ? "" : std::string(to_string(*result.reason))};
    if (audit_file_) *audit_file_ << to_json(rec).dump() << '\n';
    audit_.push_back(std::move(rec));

    if (trace_ != nullptr) {
      TraceEvent e{.ts = now,
                   .kind = result.admitted() ? TraceKind::admitted : TraceKind::rejected_admission,
                   .agent_id = agent_name(f.from.value_or(agent_uri(token.agent_id))),
                   .msg_id = msg_id};
      if (!result.admitted()) e.detail = std::string(to_string(*result.reason));
      trace_->record(std::move(e));
    }
    return result;
  }

  template <typename Validate>
  AdmissionResult check(const Fields& f, const AuthToken& token, Timestamp now, Validate& validate_fn) {
    struct FixedClock final : Clock {
      Timestamp t;
      Timestamp now() const override { return t; }
    } at;
    at.t = now;
    switch (verify_token(token, config_.secret, at)) {
      case TokenStatus::auth_failure: return {RejectReason::invalid_token, "signature mismatch"};
      case TokenStatus::expired: return {RejectReason::token_expired, "token expired"};
      case TokenStatus::ok: break;
    }
    if (!f.from) return {RejectReason::malformed, "envelope.from: missing required field: from"};
    if (*f.from != agent_uri(token.agent_id)) {
      return {RejectReason::sender_mismatch, *f.from + " is not " + agent_uri(token.agent_id)};
    }
    if (!f.consent) return {RejectReason::malformed, "envelope.scope.consent: missing required field: consent"};
    if (*f.consent == "opt-out") return {RejectReason::consent_required, "scope.consent is opt-out"};
    if (ValidationResult v = validate_fn(); !v.ok()) return {RejectReason::malformed, v.violations.front().str()};
    if (dedup_.contains(*f.msg_id)) return {RejectReason::duplicate, *f.msg_id};
    if (!limiter_.try_acquire(token.agent_id, now)) return {RejectReason::rate_limited, token.agent_id};
    return {};
  }

  GatewayConfig config_;
  mutable std::mutex mu_;
  RateLimiter limiter_;
  DedupStore dedup_;
  TraceSink* trace_;
  std::vector<AuditRecord> audit_;
  std::unique_ptr<std::ofstream> audit_file_;
};

}  // namespace llmx
