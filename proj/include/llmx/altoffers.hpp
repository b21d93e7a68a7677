#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "llmx/cnet.hpp"
#include "llmx/envelope.hpp"
#include "llmx/error.hpp"
#include "llmx/time.hpp"
#include "llmx/trace.hpp"
#include "llmx/transport.hpp"

namespace llmx {

enum class AltStatus { active, agreed, terminated };
enum class AltVerdict { accept, counter, quit };

constexpr std::string_view to_string(AltStatus s) {
  switch (s) {
    case AltStatus::active: return "active";
    case AltStatus::agreed: return "agreed";
    case AltStatus::terminated: return "terminated";
  }
  return "";
}

/// Bilateral session state. Party a sends the even turns, b the odd ones.
/// `turn` is the turn number of the next legal incoming proposal.
struct AltSession {
  std::string session_id;
  std::array<std::string, 2> parties;
  std::int64_t turn = 0;
  Attributes current_terms = Attributes::object();
  Timestamp deadline;
  AltStatus status = AltStatus::active;
  std::vector<Attributes> history;
  std::string last_msg_id;

  const std::string& party_for(std::int64_t t) const { return parties[static_cast<std::size_t>(t % 2)]; }
};

class AltStrategy {
 public:
  virtual ~AltStrategy() = default;
  /// Terms to send at `turn`, given every proposal so far.
  virtual Attributes propose(std::int64_t turn, const std::vector<Attributes>& history) = 0;
  virtual AltVerdict evaluate(const Attributes& terms) = 0;
};

/// Proposes start + step * k on its k-th own turn and accepts any price the
/// predicate admits.
class ConcessionStrategy final : public AltStrategy {
 public:
  ConcessionStrategy(double start, double step, std::function<bool(double)> acceptable)
      : start_(start), step_(step), acceptable_(std::move(acceptable)) {}

  Attributes propose(std::int64_t turn, const std::vector<Attributes>&) override {
    return {{"price", start_ + step_ * static_cast<double>(turn / 2)}};
  }

  AltVerdict evaluate(const Attributes& terms) override {
    return acceptable_(terms.at("price").get<double>()) ? AltVerdict::accept : AltVerdict::counter;
  }

 private:
  double start_;
  double step_;
  std::function<bool(double)> acceptable_;
};

/// Adapter for strategies given as two callables.
class FnStrategy final : public AltStrategy {
 public:
  using ProposeFn = std::function<Attributes(std::int64_t, const std::vector<Attributes>&)>;
  using EvaluateFn = std::function<AltVerdict(const Attributes&)>;

  FnStrategy(ProposeFn propose, EvaluateFn evaluate) : propose_(std::move(propose)), evaluate_(std::move(evaluate)) {}

  Attributes propose(std::int64_t turn, const std::vector<Attributes>& history) override { return propose_(turn, history); }
  AltVerdict evaluate(const Attributes& terms) override { return evaluate_(terms); }

 private:
  ProposeFn propose_;
  EvaluateFn evaluate_;
};

/// Builds and validates the proposal for `turn` from `sender` to `recipient`.
inline Envelope alt_proposal(const AltSession& s, std::int64_t turn, Attributes terms, const Clock& clock,
                             IdGenerator& ids, ConsentScope scope = {}) {
  const std::string& sender = s.party_for(turn);
  const std::string& recipient = s.party_for(turn + 1);
  AlternatingOffer offer{s.session_id, static_cast<std::uint64_t>(turn), std::move(terms), s.deadline, Attributes::object()};
  Envelope env = make_envelope(agent_uri(sender), {agent_uri(recipient)}, offer, scope, clock, ids, default_capabilities());
  if (auto v = validate(env); !v.ok()) throw Error(ErrorCode::invalid_payload, v.violations.front().str());
  return env;
}

/// Applies one incoming proposal to the session on behalf of its recipient.
/// Returns the reply: a counter AlternatingOffer, an Accept, or a Reject that
/// ends the session. WrongTurn leaves the session untouched; Expired marks it
/// terminated.
inline Envelope alt_step(AltSession& s, const Envelope& incoming, AltStrategy& strategy, const Clock& clock,
                         IdGenerator& ids, ConsentScope scope = {}) {
  const auto* offer = incoming.as<AlternatingOffer>();
  if (offer == nullptr || offer->session_id != s.session_id) {
    throw Error(ErrorCode::invalid_payload, "not a proposal for session " + s.session_id);
  }
  if (s.status != AltStatus::active) {
    throw Error(ErrorCode::wrong_turn, "session " + s.session_id + " is " + std::string(to_string(s.status)));
  }
  if (static_cast<std::int64_t>(offer->turn) != s.turn) {
    throw Error(ErrorCode::wrong_turn,
                "turn " + std::to_string(offer->turn) + " received, expected " + std::to_string(s.turn));
  }
  if (incoming.from != agent_uri(s.party_for(s.turn))) {
    throw Error(ErrorCode::wrong_turn, incoming.from + " may not send turn " + std::to_string(s.turn));
  }
  if (clock.now() >= std::min(s.deadline, offer->valid_until)) {
    s.status = AltStatus::terminated;
    throw Error(ErrorCode::expired, "proposal at turn " + std::to_string(offer->turn) + " arrived after its deadline");
  }

  s.current_terms = offer->terms;
  s.history.push_back(offer->terms);
  s.last_msg_id = incoming.msg_id;
  const std::string& me = s.party_for(s.turn + 1);
  const std::vector<std::string> to{incoming.from};

  switch (strategy.evaluate(offer->terms)) {
    case AltVerdict::accept:
      s.status = AltStatus::agreed;
      return make_envelope(agent_uri(me), to, Accept{incoming.msg_id, s.session_id}, scope, clock, ids,
                           default_capabilities());
    case AltVerdict::quit:
      s.status = AltStatus::terminated;
      return make_envelope(agent_uri(me), to, Reject{incoming.msg_id, s.session_id}, scope, clock, ids,
                           default_capabilities());
    case AltVerdict::counter: break;
  }
  Envelope reply = alt_proposal(s, s.turn + 1, strategy.propose(s.turn + 1, s.history), clock, ids, scope);
  ++s.turn;
  return reply;
}

struct AltOutcome {
  AltStatus status = AltStatus::active;
  /// Number of proposals accepted into the session.
  std::size_t turns = 0;
  /// Turn of the last accepted proposal.
  std::int64_t final_turn = 0;
  Attributes final_terms = Attributes::object();
  std::vector<Attributes> history;
  Timestamp ended_at;
  /// "agreed", "quit" or "expired".
  std::string reason;
};

struct AltOptions {
  std::string session_id = "s1";
  /// Think time between receiving a proposal and sending the reply.
  Duration turn_delay = 1ms;
  RetryPolicy retry;
};

/// Runs one session between registered agents `a` and `b` over the bus,
/// driving the event loop until the session ends. Party a opens at turn 0.
inline AltOutcome run_alt_session(Exchange& x, const std::string& a, AltStrategy& a_strategy, const std::string& b,
                                  AltStrategy& b_strategy, Duration deadline, AltOptions options = {}) {
  AltSession s;
  s.session_id = options.session_id;
  s.parties = {a, b};
  s.deadline = x.loop.now() + deadline;

  AltOutcome out;
  std::optional<TimerId> deadline_timer;
  // Scheduled callbacks may outlive this frame; they check this flag first.
  auto alive = std::make_shared<bool>(true);
  auto finish = [&](std::string reason) {
    if (!out.reason.empty()) return;
    out.reason = std::move(reason);
    out.ended_at = x.loop.now();
    if (deadline_timer) x.loop.cancel(*deadline_timer);
    x.trace.record({.ts = x.loop.now(), .kind = TraceKind::round_terminal, .round_id = s.session_id,
                    .detail = out.reason});
  };

  auto send = [&](const std::string& sender, const Envelope& env) {
    const AuthToken* token = x.registry.token(sender);
    if (token == nullptr) throw Error(ErrorCode::config_error, sender + " is not registered");
    auto [admission, pub] = x.gateway.submit(x.bus, env, *token, Reliability::ack_required, options.retry);
    return admission.admitted();
  };

  auto on_message = [&](const std::string& me, AltStrategy& strategy, const Delivery& d) {
    x.bus.ack(d.envelope.msg_id, me);
    const Envelope& env = d.envelope;
    if (env.as<Accept>() != nullptr) return finish("agreed");
    if (env.as<Reject>() != nullptr) return finish("quit");
    if (env.as<AlternatingOffer>() == nullptr) return;
    const auto turn = static_cast<std::int64_t>(env.as<AlternatingOffer>()->turn);
    Envelope reply;
    try {
      reply = alt_step(s, env, strategy, x.loop, x.ids);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::expired) finish("expired");
      x.trace.record({.ts = x.loop.now(), .kind = TraceKind::late_offer, .round_id = s.session_id,
                      .agent_id = agent_name(env.from), .msg_id = env.msg_id, .turn = turn,
                      .detail = std::string(to_string(e.code()))});
      return;
    }
    x.trace.record({.ts = x.loop.now(), .kind = TraceKind::alt_turn, .round_id = s.session_id,
                    .agent_id = agent_name(env.from), .msg_id = env.msg_id, .turn = turn});
    x.loop.schedule_after(options.turn_delay, [&, alive, me, reply] {
      if (!*alive || !out.reason.empty()) return;
      if (!send(me, reply)) finish("quit");
    });
  };

  auto sub_a = x.bus.subscribe(inbox_subject(a).str(), a, [&](const Delivery& d) { on_message(a, a_strategy, d); });
  auto sub_b = x.bus.subscribe(inbox_subject(b).str(), b, [&](const Delivery& d) { on_message(b, b_strategy, d); });

  deadline_timer = x.loop.schedule_at(s.deadline, [&] {
    deadline_timer.reset();
    if (s.status == AltStatus::active) s.status = AltStatus::terminated;
    finish(s.status == AltStatus::agreed ? "agreed" : "expired");
  });

  if (!send(a, alt_proposal(s, 0, a_strategy.propose(0, s.history), x.loop, x.ids))) finish("quit");

  while (out.reason.empty() && x.loop.pending() > 0) {
    if (auto* v = dynamic_cast<VirtualClock*>(&x.loop)) {
      v->step();
    } else {
      x.loop.run_until(s.deadline);
    }
  }
  *alive = false;
  if (deadline_timer) x.loop.cancel(*deadline_timer);
  x.bus.unsubscribe(sub_a);
  x.bus.unsubscribe(sub_b);

  out.status = s.status;
  out.turns = s.history.size();
  out.final_turn = s.history.empty() ? 0 : static_cast<std::int64_t>(s.history.size()) - 1;
  out.final_terms = s.current_terms;
  out.history = s.history;
  return out;
}

}  // namespace llmx
