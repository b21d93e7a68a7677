#pragma once

#include <cstdint>
#include <cstdio>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "llmx/agents.hpp"
#include "llmx/envelope.hpp"
#include "llmx/error.hpp"
#include "llmx/gateway.hpp"
#include "llmx/policy.hpp"
#include "llmx/random.hpp"
#include "llmx/time.hpp"
#include "llmx/trace.hpp"
#include "llmx/transport.hpp"

namespace llmx {

enum class Role { initiator, contractor };

/// Control plane: agent registration and token issuance.
class Registry {
 public:
  Registry(Gateway& gateway, Duration token_validity) : gateway_(gateway), validity_(token_validity) {}

  const AuthToken& register_agent(const std::string& agent_id, Role role, const Clock& clock) {
    auto [it, inserted] = agents_.insert_or_assign(agent_id, Entry{role, gateway_.issue(agent_id, validity_, clock)});
    return it->second.token;
  }

  const AuthToken* token(std::string_view agent_id) const {
    auto it = agents_.find(std::string(agent_id));
    return it == agents_.end() ? nullptr : &it->second.token;
  }

  void set_token(const std::string& agent_id, AuthToken token) { agents_.at(agent_id).token = std::move(token); }

  std::size_t contractor_count() const {
    std::size_t n = 0;
    for (const auto& [id, e] : agents_) n += e.role == Role::contractor ? 1 : 0;
    return n;
  }

 private:
  struct Entry {
    Role role;
    AuthToken token;
  };
  Gateway& gateway_;
  Duration validity_;
  std::map<std::string, Entry> agents_;
};

/// Everything an agent task needs to talk to the exchange.
struct Exchange {
  EventLoop& loop;
  Bus& bus;
  Gateway& gateway;
  Registry& registry;
  TraceSink& trace;
  IdGenerator& ids;
};

inline const std::vector<std::string>& default_capabilities() {
  static const std::vector<std::string> caps{"propose", "negotiate"};
  return caps;
}

struct InitiatorOptions {
  PolicyConfig policy;
  std::string topic = "negotiation";
  RetryPolicy retry;
  ConsentScope scope;
};

/// The initiator side of ContractNet. Owns every RoundState it opens.
class Initiator {
 public:
  Initiator(Exchange& x, std::string agent_id, InitiatorOptions options = {})
      : x_(x), agent_id_(std::move(agent_id)), options_(std::move(options)) {}

  Initiator(const Initiator&) = delete;
  Initiator& operator=(const Initiator&) = delete;

  const std::string& agent_id() const { return agent_id_; }
  const PolicyConfig& policy() const { return options_.policy; }

  void start() {
    inbox_ = x_.bus.subscribe(inbox_subject(agent_id_).str(), agent_id_, [this](const Delivery& d) { on_offer(d); });
  }

  /// Publishes a CFP and opens its round. Throws RoundStartFailed if the
  /// gateway refuses the CFP.
  std::string start_round(Duration deadline, Attributes constraints = Attributes::object()) {
    const AuthToken* token = x_.registry.token(agent_id_);
    if (token == nullptr) throw Error(ErrorCode::round_start_failed, agent_id_ + " is not registered");
    const Timestamp now = x_.loop.now();

    char id[16];
    std::snprintf(id, sizeof id, "r%04zu", next_round_ + 1);
    Cfp cfp{id, now + deadline, constraints};
    Envelope env = make_envelope(agent_uri(agent_id_), {"topic://" + options_.topic}, cfp, options_.scope, x_.loop,
                                 x_.ids, default_capabilities());
    auto [admission, pub] = x_.gateway.submit(x_.bus, env, *token, Reliability::ack_required, options_.retry);
    if (!admission) {
      throw Error(ErrorCode::round_start_failed,
                  std::string(to_string(*admission.reason)) + " (" + admission.detail + ")");
    }
    ++next_round_;

    RoundState st;
    st.round_id = id;
    st.cfp_msg_id = env.msg_id;
    st.cfp_sent_at = now;
    st.deadline = now + deadline;
    st.expected_contractors = x_.registry.contractor_count();
    if (auto mv = constraints.find("min_value"); mv != constraints.end() && mv->is_number()) {
      st.min_value = mv->get<double>();
    }
    rounds_.emplace(st.round_id, st);
    x_.trace.record({.ts = now, .kind = TraceKind::cfp_sent, .round_id = st.round_id, .agent_id = agent_id_,
                     .msg_id = env.msg_id, .expected = static_cast<std::int64_t>(st.expected_contractors)});

    const std::string round_id = st.round_id;
    const Timestamp cutoff = std::min(st.deadline, now + options_.policy.round_timeout);
    x_.loop.schedule_at(cutoff, [this, round_id] { evaluate(round_id); });
    if (st.deadline != cutoff) x_.loop.schedule_at(st.deadline, [this, round_id] { evaluate(round_id); });
    return round_id;
  }

  void on_offer(const Delivery& d) {
    const Envelope& env = d.envelope;
    const Offer* offer = env.as<Offer>();
    if (offer == nullptr) return;
    const Timestamp now = x_.loop.now();
    const std::string from = agent_name(env.from);

    x_.bus.ack(env.msg_id, agent_id_);
    if (!seen_.insert(env.msg_id)) return;

    auto late = [&](std::string reason) {
      x_.trace.record({.ts = now, .kind = TraceKind::late_offer, .round_id = offer->round_id, .agent_id = from,
                       .msg_id = env.msg_id, .detail = std::move(reason)});
    };
    auto it = rounds_.find(offer->round_id);
    if (it == rounds_.end()) return late("unknown-round");
    RoundState& st = it->second;
    evaluate(st);
    if (st.terminal) return late("after-terminal");
    if (st.has_offer_from(from)) return late("duplicate-sender");

    st.offers.push_back({*offer, env.msg_id, now, from});
    x_.trace.record({.ts = now, .kind = TraceKind::offer_received, .round_id = st.round_id, .agent_id = from,
                     .latency_ms = to_ms(now - st.cfp_sent_at), .msg_id = env.msg_id});
    evaluate(st);
  }

  const RoundState* round(const std::string& id) const {
    auto it = rounds_.find(id);
    return it == rounds_.end() ? nullptr : &it->second;
  }

  const std::map<std::string, RoundState>& rounds() const { return rounds_; }

 private:
  void evaluate(const std::string& round_id) {
    if (auto it = rounds_.find(round_id); it != rounds_.end()) evaluate(it->second);
  }

  void evaluate(RoundState& st) {
    if (st.terminal) return;
    const Decision d = decide(options_.policy, st, x_.loop.now());
    if (!is_terminal(d)) return;
    st.terminal = d;
    if (const auto* c = std::get_if<ConfirmFirst>(&d)) {
      notify(st, st.offers[c->offer], Confirm{st.offers[c->offer].msg_id, st.round_id}, TraceKind::confirm);
    } else if (const auto* a = std::get_if<Award>(&d)) {
      notify(st, st.offers[a->winner], Accept{st.offers[a->winner].msg_id, st.round_id}, TraceKind::accept);
      for (std::size_t i : a->losers) {
        notify(st, st.offers[i], Reject{st.offers[i].msg_id, st.round_id}, TraceKind::reject);
      }
    }
    x_.trace.record({.ts = x_.loop.now(), .kind = TraceKind::round_terminal, .round_id = st.round_id,
                     .agent_id = agent_id_, .expected = static_cast<std::int64_t>(st.expected_contractors),
                     .detail = std::string(decision_name(d))});
  }

  void notify(const RoundState& st, const ReceivedOffer& target, Payload payload, TraceKind kind) {
    const AuthToken* token = x_.registry.token(agent_id_);
    Envelope env = make_envelope(agent_uri(agent_id_), {agent_uri(target.from)}, std::move(payload), options_.scope,
                                 x_.loop, x_.ids, default_capabilities());
    auto [admission, pub] = x_.gateway.submit(x_.bus, env, *token, Reliability::ack_required, options_.retry);
    if (!admission) return;
    x_.trace.record({.ts = x_.loop.now(), .kind = kind, .round_id = st.round_id, .agent_id = target.from,
                     .msg_id = env.msg_id});
  }

  Exchange& x_;
  std::string agent_id_;
  InitiatorOptions options_;
  SubscriptionPtr inbox_;
  std::size_t next_round_ = 0;
  std::map<std::string, RoundState> rounds_;
  DedupStore seen_;
};

enum class AckBehavior { always, never, drop_probability };

struct ContractorConfig {
  std::string agent_id;
  AckBehavior ack_behavior = AckBehavior::always;
  double ack_drop_probability = 0.0;
  std::uint64_t seed = 0;
  std::string topic = "negotiation";
  RetryPolicy retry;
  ConsentScope scope;
};

/// A bidding agent: answers every admitted CFP with one offer after the
/// producer's think time, whether or not that lands before the deadline.
class Contractor {
 public:
  Contractor(Exchange& x, ContractorConfig cfg, std::unique_ptr<PayloadProducer> producer)
      : x_(x), cfg_(std::move(cfg)), producer_(std::move(producer)), rng_(mix_seed(cfg_.seed, 0xac4)) {}

  Contractor(const Contractor&) = delete;
  Contractor& operator=(const Contractor&) = delete;

  const std::string& agent_id() const { return cfg_.agent_id; }

  void start() {
    topic_ = x_.bus.subscribe("topic." + cfg_.topic, cfg_.agent_id, [this](const Delivery& d) { on_cfp(d); });
    inbox_ = x_.bus.subscribe(inbox_subject(cfg_.agent_id).str(), cfg_.agent_id,
                              [this](const Delivery& d) { on_inbox(d); });
  }

  std::size_t offers_sent() const { return offers_sent_; }
  std::size_t confirms() const { return confirms_; }
  std::size_t accepts() const { return accepts_; }
  std::size_t rejects() const { return rejects_; }

 private:
  void on_cfp(const Delivery& d) {
    const Cfp* cfp = d.envelope.as<Cfp>();
    if (cfp == nullptr) return;
    x_.bus.ack(d.envelope.msg_id, cfg_.agent_id);
    if (!seen_.insert(d.envelope.msg_id)) return;

    NegotiationContext ctx{cfg_.agent_id, cfp->round_id, cfp->constraints, history_};
    OfferDraft draft;
    try {
      draft = producer_->produce(ctx);
    } catch (const Error&) {
      return;
    }
    history_.push_back(draft.value);
    const std::string initiator = d.envelope.from;
    const std::string round_id = cfp->round_id;
    x_.loop.schedule_after(draft.delay, [this, initiator, round_id, draft] { send_offer(initiator, round_id, draft); });
  }

  void send_offer(const std::string& initiator, const std::string& round_id, const OfferDraft& draft) {
    const AuthToken* token = x_.registry.token(cfg_.agent_id);
    if (token == nullptr) return;
    Offer offer{round_id, draft.value, x_.loop.now(), draft.conditions};
    Envelope env = make_envelope(agent_uri(cfg_.agent_id), {initiator}, offer, cfg_.scope, x_.loop, x_.ids,
                                 default_capabilities());
    auto [admission, pub] = x_.gateway.submit(x_.bus, env, *token, Reliability::ack_required, cfg_.retry);
    if (!admission) return;
    ++offers_sent_;
    x_.trace.record({.ts = x_.loop.now(), .kind = TraceKind::offer_sent, .round_id = round_id,
                     .agent_id = cfg_.agent_id, .msg_id = env.msg_id});
  }

  void on_inbox(const Delivery& d) {
    const auto& p = d.envelope.payload;
    if (!std::holds_alternative<Confirm>(p) && !std::holds_alternative<Accept>(p) &&
        !std::holds_alternative<Reject>(p)) {
      return;
    }
    bool do_ack = cfg_.ack_behavior == AckBehavior::always;
    if (cfg_.ack_behavior == AckBehavior::drop_probability) do_ack = rng_.uniform01() >= cfg_.ack_drop_probability;
    if (do_ack) x_.bus.ack(d.envelope.msg_id, cfg_.agent_id);
    if (!seen_.insert(d.envelope.msg_id)) return;
    if (std::holds_alternative<Confirm>(p)) ++confirms_;
    if (std::holds_alternative<Accept>(p)) ++accepts_;
    if (std::holds_alternative<Reject>(p)) ++rejects_;
  }

  Exchange& x_;
  ContractorConfig cfg_;
  std::unique_ptr<PayloadProducer> producer_;
  Rng rng_;
  SubscriptionPtr topic_;
  SubscriptionPtr inbox_;
  DedupStore seen_;
  std::vector<double> history_;
  std::size_t offers_sent_ = 0;
  std::size_t confirms_ = 0;
  std::size_t accepts_ = 0;
  std::size_t rejects_ = 0;
};

}  // namespace llmx
