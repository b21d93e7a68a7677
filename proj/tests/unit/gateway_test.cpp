#include <gtest/gtest.h>

#include "world.hpp"

namespace llmx {
namespace {

using test::t0;

struct Gate : ::testing::Test {
  VirtualClock clock{t0()};
  IdGenerator ids{11};
  Gateway gw;
  AuthToken alice = gw.issue("alice", 1h, clock);

  Envelope offer(std::string from = "alice") {
    return make_envelope(agent_uri(from), {"agent://bob"}, Offer{"r1", 3.0, clock.now(), {}}, {}, clock, ids);
  }
  std::optional<RejectReason> reason(const Envelope& e, const AuthToken& t) { return gw.admit(e, t, clock).reason; }
};

TEST_F(Gate, TokenVerifiesUntilExpiry) {
  const auto secret = gw.config().secret;
  EXPECT_EQ(verify_token(alice, secret, clock), TokenStatus::ok);
  EXPECT_EQ(verify_token(alice, to_bytes("other"), clock), TokenStatus::auth_failure);
  clock.advance(1h);
  EXPECT_EQ(verify_token(alice, secret, clock), TokenStatus::ok);
  clock.advance(1ms);
  EXPECT_EQ(verify_token(alice, secret, clock), TokenStatus::expired);
}

TEST_F(Gate, TamperedClaimsFail) {
  AuthToken t = alice;
  t.agent_id = "mallory";
  EXPECT_EQ(verify_token(t, gw.config().secret, clock), TokenStatus::auth_failure);
  t = alice;
  t.expires_at += 1h;
  EXPECT_EQ(verify_token(t, gw.config().secret, clock), TokenStatus::auth_failure);
}

TEST_F(Gate, HmacMatchesKnownVector) {
  // RFC 4231 test case 2.
  const Bytes mac = detail::hmac_sha256(to_bytes("Jefe"), "what do ya want for nothing?");
  const Bytes want = {0x5b, 0xdc, 0xc1, 0x46, 0xbf, 0x60, 0x75, 0x4e, 0x6a, 0x04, 0x24, 0x26, 0x08, 0x95, 0x75, 0xc7,
                      0x5a, 0x00, 0x3f, 0x08, 0x9d, 0x27, 0x39, 0x83, 0x9d, 0xec, 0x58, 0xb9, 0x64, 0xec, 0x38, 0x43};
  EXPECT_EQ(mac, want);
}

TEST_F(Gate, ValidOfferAdmitted) { EXPECT_FALSE(reason(offer(), alice)); }

TEST_F(Gate, ReplayIsDuplicate) {
  const Envelope e = offer();
  EXPECT_FALSE(reason(e, alice));
  EXPECT_EQ(reason(e, alice), RejectReason::duplicate);
}

TEST_F(Gate, RejectionReasons) {
  Gateway other(GatewayConfig{to_bytes("wrong")});
  EXPECT_EQ(reason(offer(), other.issue("alice", 1h, clock)), RejectReason::invalid_token);
  EXPECT_EQ(reason(offer("bob"), alice), RejectReason::sender_mismatch);
  Envelope opt_out = offer();
  opt_out.scope.consent = Consent::opt_out;
  EXPECT_EQ(reason(opt_out, alice), RejectReason::consent_required);
  Envelope bad = offer();
  std::get<Offer>(bad.payload).value = std::nan("");
  EXPECT_EQ(reason(bad, alice), RejectReason::malformed);
  const AuthToken short_lived = gw.issue("alice", 1s, clock);
  clock.advance(2s);
  EXPECT_EQ(reason(offer(), short_lived), RejectReason::token_expired);
}

TEST_F(Gate, ChecksRunInDocumentedOrder) {
  // An envelope failing every check reports the first; fixing each in turn
  // exposes the next.
  const Envelope dup = offer();
  ASSERT_FALSE(reason(dup, alice));
  Envelope e = dup;
  e.from = agent_uri("bob");
  e.scope.consent = Consent::opt_out;
  std::get<Offer>(e.payload).value = std::nan("");
  const AuthToken expired = gw.issue("alice", 0s, clock);
  clock.advance(1ms);
  EXPECT_EQ(reason(e, expired), RejectReason::token_expired);
  EXPECT_EQ(reason(e, alice), RejectReason::sender_mismatch);
  e.from = agent_uri("alice");
  EXPECT_EQ(reason(e, alice), RejectReason::consent_required);
  e.scope.consent = Consent::opt_in;
  EXPECT_EQ(reason(e, alice), RejectReason::malformed);
  std::get<Offer>(e.payload).value = 1.0;
  EXPECT_EQ(reason(e, alice), RejectReason::duplicate);
}

TEST_F(Gate, MalformedDocumentPerDeletedField) {
  const Json doc = to_json(offer());
  for (const auto& [key, _] : doc["payload"].items()) {
    if (key == "conditions") continue;
    Json d = doc;
    d["payload"].erase(key);
    EXPECT_EQ(gw.admit_document(d, alice, clock).reason, RejectReason::malformed) << key;
  }
  for (const auto& [key, _] : doc["envelope"].items()) {
    Json d = doc;
    d["envelope"].erase(key);
    EXPECT_EQ(gw.admit_document(d, alice, clock).reason, RejectReason::malformed) << key;
  }
  EXPECT_TRUE(gw.admit_document(doc, alice, clock).admitted());
}

// Token bucket with no refill admits exactly `capacity` of a burst.
TEST(RateLimit, BurstBeyondCapacity) {
  VirtualClock clock(t0());
  IdGenerator ids(1);
  GatewayConfig cfg;
  cfg.rate_capacity = 50;
  cfg.rate_refill_per_s = 0;
  Gateway gw(cfg);
  const AuthToken tok = gw.issue("alice", 1h, clock);
  std::vector<AdmissionResult> results;
  for (int i = 0; i < 51; ++i) {
    results.push_back(gw.admit(make_envelope(agent_uri("alice"), {"agent://b"}, Ack{"x"}, {}, clock, ids), tok, clock));
  }
  for (int i = 0; i < 50; ++i) EXPECT_TRUE(results[i].admitted()) << i;
  EXPECT_EQ(results[50].reason, RejectReason::rate_limited);
  EXPECT_EQ(gw.audit_size(), 51u);
}

// Oracle: simulate the bucket independently in integer quarter-tokens and
// compare the admitted/denied pattern at random arrival times. Arrivals are
// multiples of 62.5 ms so each gap refills a whole number of quarters.
TEST(RateLimit, MatchesBucketSimulation) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const double capacity = 5, refill = 4;
    RateLimiter lim(capacity, refill);
    Rng rng(seed);
    Timestamp t = t0();
    std::int64_t quarters = 20;
    std::size_t admitted = 0;
    for (int i = 0; i < 500; ++i) {
      const auto k = static_cast<std::int64_t>(rng.uniform(0, 6));
      t += Duration{k * 62500};
      quarters = std::min<std::int64_t>(20, quarters + k);
      const bool want = quarters >= 4;
      if (want) quarters -= 4;
      ASSERT_EQ(lim.try_acquire("a", t), want) << "seed " << seed << " i " << i;
      admitted += want ? 1 : 0;
    }
    const double span_s = std::chrono::duration<double>(t - t0()).count();
    EXPECT_LE(admitted, capacity + refill * span_s);
  }
}

TEST(RateLimit, BucketsArePerAgent) {
  RateLimiter lim(1, 0);
  EXPECT_TRUE(lim.try_acquire("a", t0()));
  EXPECT_FALSE(lim.try_acquire("a", t0()));
  EXPECT_TRUE(lim.try_acquire("b", t0()));
  EXPECT_EQ(lim.level("a"), 0.0);
  EXPECT_EQ(lim.level("zed"), 1.0);
}

TEST(Dedup, EvictsOldestInsertion) {
  DedupStore d(3);
  for (const char* id : {"a", "b", "c"}) EXPECT_TRUE(d.insert(id));
  EXPECT_FALSE(d.insert("a"));
  EXPECT_TRUE(d.insert("d"));
  EXPECT_FALSE(d.contains("a"));
  EXPECT_TRUE(d.contains("b"));
  EXPECT_EQ(d.size(), 3u);
}

// Property: in any stream of k distinct ids with repeats, only first sightings pass.
TEST_F(Gate, DuplicatesNeverAdmitted) {
  std::vector<Envelope> distinct;
  for (int i = 0; i < 20; ++i) distinct.push_back(offer());
  Rng rng(3);
  std::set<std::string> admitted;
  std::size_t calls = 0;
  for (int i = 0; i < 40; ++i) {
    const Envelope& e = distinct[static_cast<std::size_t>(rng.uniform(0, 20))];
    clock.advance(100ms);
    ++calls;
    if (gw.admit(e, alice, clock).admitted()) EXPECT_TRUE(admitted.insert(e.msg_id).second);
  }
  EXPECT_EQ(gw.audit_size(), calls);
}

TEST_F(Gate, AuditRecordPerAttempt) {
  for (int i = 0; i < 5; ++i) reason(offer(), alice);
  reason(offer("bob"), alice);
  const auto audit = gw.audit();
  ASSERT_EQ(audit.size(), 6u);
  EXPECT_EQ(audit.back().decision, AdmissionDecision::rejected);
  EXPECT_EQ(audit.back().reason, "sender-mismatch");
  EXPECT_EQ(to_json(audit.front())["decision"], "admitted");
}

TEST(Gateway, RejectedEnvelopesNeverReachBus) {
  test::World w;
  const AuthToken tok = w.gateway.issue("alice", 1h, w.loop);
  auto sub = w.bus.subscribe("agent.bob.inbox", "bob");
  Envelope e = make_envelope(agent_uri("alice"), {"agent://bob"}, Ack{"x"}, {Consent::opt_out, 120}, w.loop, w.ids);
  auto [r, pub] = w.gateway.submit(w.bus, e, tok, Reliability::fire_and_forget);
  w.loop.run();
  EXPECT_FALSE(r.admitted());
  EXPECT_EQ(pub, nullptr);
  EXPECT_EQ(sub->queued(), 0u);
  EXPECT_EQ(w.trace.count(TraceKind::rejected_admission), 1u);
}

}  // namespace
}  // namespace llmx
