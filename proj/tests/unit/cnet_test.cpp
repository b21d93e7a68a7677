#include <gtest/gtest.h>

#include "world.hpp"

namespace llmx {
namespace {

using test::t0;

struct Market {
  explicit Market(PolicyConfig policy, std::size_t n, DelayDistribution delay = dist::Uniform{1, 5},
                  ValueDistribution value = dist::Uniform{0, 10}) {
    w.registry.register_agent("alice", Role::initiator, w.loop);
    initiator = std::make_unique<Initiator>(w.x, "alice", InitiatorOptions{policy});
    initiator->start();
    for (std::size_t i = 0; i < n; ++i) {
      const std::string id = "c" + std::to_string(i + 1);
      w.registry.register_agent(id, Role::contractor, w.loop);
      auto bidder = std::make_unique<ScriptedBidder>(value, delay, 100 + i);
      contractors.push_back(std::make_unique<Contractor>(w.x, ContractorConfig{.agent_id = id}, std::move(bidder)));
      contractors.back()->start();
    }
  }

  std::size_t count(TraceKind k, const std::string& round) const {
    std::size_t n = 0;
    for (const auto& e : w.trace.events()) n += e.kind == k && e.round_id == round ? 1 : 0;
    return n;
  }

  test::World w;
  std::unique_ptr<Initiator> initiator;
  std::vector<std::unique_ptr<Contractor>> contractors;
};

PolicyConfig high() { return {PolicyKind::high, 2s, AwardMode::collect_only, TieBreak::earliest_arrival}; }

TEST(Initiator, ExpectedContractorsSnapshot) {
  Market m(high(), 5);
  const auto id = m.initiator->start_round(2s);
  EXPECT_EQ(id, "r0001");
  EXPECT_EQ(m.initiator->round(id)->expected_contractors, 5u);
  EXPECT_EQ(m.w.of_kind(TraceKind::cfp_sent).at(0).expected, 5);
}

TEST(Initiator, ThreeHighRoundsFiveContractors) {
  Market m(high(), 5);
  for (int i = 0; i < 3; ++i) {
    m.initiator->start_round(2s);
    m.w.loop.advance(30s);
  }
  m.w.loop.run();
  EXPECT_EQ(m.w.trace.count(TraceKind::offer_received), 15u);
  for (const auto& [id, st] : m.initiator->rounds()) {
    EXPECT_EQ(st.offers.size(), 5u);
    ASSERT_TRUE(st.terminal);
    EXPECT_EQ(*st.terminal, Decision{CloseNoAward{}});
  }
  EXPECT_EQ(m.w.trace.count(TraceKind::accept) + m.w.trace.count(TraceKind::reject), 0u);
}

TEST(Initiator, ExpiredTokenFailsRoundStart) {
  Market m(high(), 1);
  m.w.registry.set_token("alice", m.w.gateway.issue("alice", 1s, m.w.loop));
  m.w.loop.advance(2s);
  try {
    m.initiator->start_round(2s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::round_start_failed);
    EXPECT_NE(std::string(e.what()).find("token-expired"), std::string::npos);
  }
  EXPECT_TRUE(m.initiator->rounds().empty());
}

TEST(Initiator, UnregisteredFailsRoundStart) {
  test::World w;
  Initiator i(w.x, "ghost");
  EXPECT_THROW(i.start_round(1s), Error);
}

TEST(Initiator, MediumConfirmsFirstResponder) {
  Market m({PolicyKind::medium, 2s}, 4);
  const auto id = m.initiator->start_round(2s);
  m.w.loop.run();
  const RoundState* st = m.initiator->round(id);
  ASSERT_TRUE(st->terminal);
  const auto* c = std::get_if<ConfirmFirst>(&*st->terminal);
  ASSERT_NE(c, nullptr);
  EXPECT_EQ(c->offer, 0u);
  EXPECT_EQ(st->offers.size(), 1u);
  auto confirms = m.w.of_kind(TraceKind::confirm);
  ASSERT_EQ(confirms.size(), 1u);
  EXPECT_EQ(confirms[0].agent_id, st->offers[0].from);
  std::size_t got = 0;
  for (const auto& k : m.contractors) got += k->confirms();
  EXPECT_EQ(got, 1u);
  EXPECT_EQ(m.count(TraceKind::late_offer, id), 3u);
}

TEST(Initiator, HighAwardSendsAcceptAndRejects) {
  Market m({PolicyKind::high, 2s, AwardMode::award}, 4);
  m.initiator->start_round(2s);
  m.w.loop.run();
  EXPECT_EQ(m.w.trace.count(TraceKind::accept), 1u);
  EXPECT_EQ(m.w.trace.count(TraceKind::reject), 3u);
  std::size_t accepts = 0, rejects = 0;
  for (const auto& k : m.contractors) {
    accepts += k->accepts();
    rejects += k->rejects();
  }
  EXPECT_EQ(accepts, 1u);
  EXPECT_EQ(rejects, 3u);
}

TEST(Initiator, UnknownRoundOfferDroppedAndTraced) {
  Market m(high(), 1);
  const AuthToken* tok = m.w.registry.token("c1");
  Envelope e = make_envelope(agent_uri("c1"), {"agent://alice"}, Offer{"r9999", 1, m.w.loop.now(), {}}, {}, m.w.loop,
                             m.w.ids);
  m.w.gateway.submit(m.w.bus, e, *tok, Reliability::ack_required);
  m.w.loop.run();
  auto late = m.w.of_kind(TraceKind::late_offer);
  ASSERT_EQ(late.size(), 1u);
  EXPECT_EQ(late[0].detail, "unknown-round");
  EXPECT_EQ(m.w.trace.count(TraceKind::offer_received), 0u);
}

TEST(Contractor, ZeroDelayGivesExactlyOneOffer) {
  Market m(high(), 1, dist::Constant{0});
  m.initiator->start_round(2s);
  m.w.loop.run();
  EXPECT_EQ(m.contractors[0]->offers_sent(), 1u);
  EXPECT_EQ(m.w.trace.count(TraceKind::offer_received), 1u);
}

TEST(Contractor, TwelveContractorsThreeCfps) {
  Market m(high(), 12);
  for (int i = 0; i < 3; ++i) {
    m.initiator->start_round(2s);
    m.w.loop.advance(30s);
  }
  m.w.loop.run();
  EXPECT_EQ(m.w.trace.count(TraceKind::offer_received), 36u);
}

TEST(Contractor, DelayBeyondDeadlineIsLate) {
  Market m(high(), 1, dist::Constant{3000});
  const auto id = m.initiator->start_round(2s);
  m.w.loop.run();
  EXPECT_EQ(m.initiator->round(id)->offers.size(), 0u);
  auto late = m.w.of_kind(TraceKind::late_offer);
  ASSERT_EQ(late.size(), 1u);
  EXPECT_EQ(late[0].detail, "after-terminal");
}

TEST(Contractor, ProducerErrorSkipsRound) {
  struct Failing : PayloadProducer {
    OfferDraft produce(const NegotiationContext&) override { throw Error(ErrorCode::invalid_payload, "no"); }
  };
  test::World w;
  w.registry.register_agent("alice", Role::initiator, w.loop);
  w.registry.register_agent("c1", Role::contractor, w.loop);
  Initiator init(w.x, "alice", {high()});
  init.start();
  Contractor c(w.x, {.agent_id = "c1"}, std::make_unique<Failing>());
  c.start();
  init.start_round(1s);
  w.loop.run();
  EXPECT_EQ(c.offers_sent(), 0u);
  EXPECT_EQ(init.rounds().begin()->second.offers.size(), 0u);
}

// Properties over mixed-delay runs: conservation of offers, latency bookkeeping,
// one terminal per round and nothing emitted after it.
TEST(Initiator, ConservationAndLatencyInvariants) {
  for (int policy = 0; policy < 3; ++policy) {
    Market m({static_cast<PolicyKind>(policy), 40ms}, 6, dist::Exponential{30});
    std::vector<std::string> ids;
    for (int i = 0; i < 20; ++i) {
      ids.push_back(m.initiator->start_round(60ms));
      m.w.loop.advance(500ms);
    }
    m.w.loop.run();
    std::size_t sent = 0;
    for (const auto& id : ids) {
      const std::size_t s = m.count(TraceKind::offer_sent, id);
      const std::size_t rec = m.count(TraceKind::offer_received, id);
      const std::size_t late = m.count(TraceKind::late_offer, id);
      EXPECT_EQ(rec + late, s) << id;
      EXPECT_EQ(m.count(TraceKind::round_terminal, id), 1u) << id;
      sent += s;
    }
    EXPECT_EQ(sent, 20u * 6u);

    std::map<std::string, Timestamp> terminal_at;
    for (const auto& e : m.w.trace.events()) {
      if (e.kind == TraceKind::round_terminal) terminal_at[*e.round_id] = e.ts;
    }
    for (const auto& e : m.w.trace.events()) {
      if (e.kind == TraceKind::offer_received) {
        const RoundState* st = m.initiator->round(*e.round_id);
        ASSERT_NE(st, nullptr);
        ASSERT_TRUE(e.latency_ms);
        EXPECT_GE(*e.latency_ms, 0.0);
        auto it = std::find_if(st->offers.begin(), st->offers.end(), [&](auto& o) { return o.msg_id == e.msg_id; });
        ASSERT_NE(it, st->offers.end());
        EXPECT_DOUBLE_EQ(*e.latency_ms, to_ms(it->received_at - st->cfp_sent_at));
        EXPECT_LE(e.ts, terminal_at[*e.round_id]);
      }
      if (e.kind == TraceKind::confirm || e.kind == TraceKind::accept || e.kind == TraceKind::reject) {
        EXPECT_EQ(e.ts, terminal_at[*e.round_id]);
      }
    }
    if (policy == 1) {
      std::size_t responsive = 0;
      for (const auto& id : ids) responsive += m.initiator->round(id)->offers.empty() ? 0 : 1;
      EXPECT_EQ(m.w.trace.count(TraceKind::confirm), responsive);
    }
  }
}

TEST(Initiator, HighCompleteWhenAllRespondInTime) {
  Market m(high(), 9);
  for (int i = 0; i < 10; ++i) {
    m.initiator->start_round(2s);
    m.w.loop.advance(10s);
  }
  for (const auto& [id, st] : m.initiator->rounds()) EXPECT_EQ(st.offers.size(), 9u);
}

}  // namespace
}  // namespace llmx
