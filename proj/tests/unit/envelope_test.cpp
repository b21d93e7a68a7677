#include <gtest/gtest.h>

#include <set>

#include "world.hpp"

namespace llmx {
namespace {

using test::t0;

Envelope sample(const Payload& p, IdGenerator& ids) {
  VirtualClock clock(t0());
  return make_envelope(agent_uri("alice"), {"topic://negotiation"}, p, {}, clock, ids, {"propose", "negotiate"});
}

std::vector<Payload> one_of_each() {
  return {Cfp{"r1", t0() + 120s, {{"min_value", 3}}},
          Offer{"r1", 4.5, t0(), {{"note", "x"}}},
          Accept{"m1", "r1"},
          Reject{"m1", "r1"},
          Confirm{"m1", "r1"},
          Ack{"m1"},
          AlternatingOffer{"s1", 2, {{"price", 8}}, t0() + 5s, {{"min", 6}}}};
}

TEST(Envelope, CfpToTopicCarriesDefaultTtl) {
  IdGenerator ids(1);
  Envelope env = sample(Cfp{"r1", t0() + 120s, {}}, ids);
  EXPECT_EQ(env.scope.ttl_s, 120);
  EXPECT_EQ(env.scope.consent, Consent::opt_in);
  EXPECT_EQ(env.ts, t0());
  EXPECT_TRUE(validate(env).ok());
}

TEST(Envelope, EmptyRecipientsRejected) {
  IdGenerator ids(1);
  VirtualClock clock(t0());
  try {
    make_envelope(agent_uri("alice"), {}, Ack{"x"}, {}, clock, ids);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::empty_recipients);
  }
}

TEST(Envelope, MsgIdsAreDistinctUuids) {
  IdGenerator ids(1);
  std::set<std::string> seen;
  for (int i = 0; i < 1000; ++i) {
    Envelope env = sample(Ack{"x"}, ids);
    ASSERT_EQ(env.msg_id.size(), 36u);
    EXPECT_EQ(env.msg_id[14], '4');
    EXPECT_TRUE(seen.insert(env.msg_id).second);
  }
}

TEST(Envelope, TimestampTruncatedToMillis) {
  IdGenerator ids(1);
  VirtualClock clock(t0() + 1234567us);
  Envelope env = make_envelope(agent_uri("a"), {"agent://b"}, Ack{"x"}, {}, clock, ids);
  EXPECT_EQ(env.ts, t0() + 1234ms);
}

TEST(Envelope, TypedConstructionAlwaysValidates) {
  IdGenerator ids(3);
  for (const auto& p : one_of_each()) EXPECT_TRUE(validate(sample(p, ids)).ok()) << type_name(kind_of(p));
}

// Required fields per the wire schema, written out independently of the
// validator's tables.
const std::map<std::string, std::set<std::string>> kRequired = {
    {"CFP", {"round_id", "deadline"}},
    {"Offer", {"round_id", "value", "timestamp"}},
    {"Accept", {"ref_msg_id", "round_id"}},
    {"Reject", {"ref_msg_id", "round_id"}},
    {"Confirm", {"ref_msg_id", "round_id"}},
    {"Ack", {"ref_msg_id"}},
    {"AlternatingOffer", {"session_id", "turn", "terms", "valid_until", "acceptance_conditions"}},
};
const std::set<std::string> kEnvelopeRequired = {"msg_id", "ts", "from", "to", "capabilities", "scope"};

TEST(Envelope, EveryRequiredFieldDeletionIsCaught) {
  IdGenerator ids(5);
  int checked = 0;
  for (const auto& p : one_of_each()) {
    const Json doc = to_json(sample(p, ids));
    const std::string type = doc["payload"]["type"];
    ASSERT_TRUE(kRequired.contains(type)) << type;

    for (const auto& [key, _] : doc["envelope"].items()) {
      Json d = doc;
      d["envelope"].erase(key);
      const auto r = validate_document(d);
      EXPECT_EQ(!r.ok(), kEnvelopeRequired.contains(key)) << key;
      if (kEnvelopeRequired.contains(key)) EXPECT_TRUE(r.mentions("missing required field: " + key));
      ++checked;
    }
    for (const auto& key : {"consent", "ttl"}) {
      Json d = doc;
      d["envelope"]["scope"].erase(key);
      EXPECT_TRUE(validate_document(d).mentions(std::string("missing required field: ") + key));
    }
    for (const auto& [key, _] : doc["payload"].items()) {
      if (key == "type" || key == "$schema") continue;
      Json d = doc;
      d["payload"].erase(key);
      const auto r = validate_document(d);
      const bool required = kRequired.at(type).contains(key);
      EXPECT_EQ(!r.ok(), required) << type << "." << key;
      if (required) EXPECT_TRUE(r.mentions("missing required field: " + key)) << type << "." << key;
      ++checked;
    }
    // Every required field must have been present to delete.
    for (const auto& key : kRequired.at(type)) EXPECT_TRUE(doc["payload"].contains(key)) << key;
  }
  EXPECT_GT(checked, 40);
}

TEST(Envelope, ValidatorTablesMatchRequiredSets) {
  for (const auto& s : schema::kPayloadSchemas) {
    std::set<std::string> req;
    for (const auto& f : s.fields) {
      if (f.required) req.insert(std::string(f.name));
    }
    EXPECT_EQ(req, kRequired.at(std::string(type_name(s.kind))));
  }
}

TEST(Envelope, OfferMissingValue) {
  IdGenerator ids(1);
  Json doc = to_json(sample(Offer{"r1", 1.0, t0(), {}}, ids));
  doc["payload"].erase("value");
  EXPECT_TRUE(validate_document(doc).mentions("missing required field: value"));
}

TEST(Envelope, ConsentOutOfRange) {
  IdGenerator ids(1);
  Json doc = to_json(sample(Ack{"m"}, ids));
  doc["envelope"]["scope"]["consent"] = "maybe";
  EXPECT_TRUE(validate_document(doc).mentions("enum out of range"));
}

TEST(Envelope, StructuralViolations) {
  IdGenerator ids(1);
  const Json base = to_json(sample(Offer{"r1", 1.0, t0(), {}}, ids));
  auto with = [&](auto mutate) {
    Json d = base;
    mutate(d);
    return validate_document(d);
  };
  EXPECT_TRUE(with([](Json& d) { d["payload"]["value"] = "high"; }).mentions("wrong type: expected number"));
  EXPECT_TRUE(with([](Json& d) { d["payload"]["timestamp"] = "yesterday"; }).mentions("invalid timestamp"));
  EXPECT_TRUE(with([](Json& d) { d["envelope"]["from"] = "alice"; }).mentions("invalid agent uri"));
  EXPECT_TRUE(with([](Json& d) { d["envelope"]["to"] = Json::array(); }).mentions("empty recipient list"));
  EXPECT_TRUE(with([](Json& d) { d["envelope"]["to"] = {"mailto:x"}; }).mentions("invalid recipient uri: mailto:x"));
  EXPECT_TRUE(with([](Json& d) { d["envelope"]["scope"]["ttl"] = -1; }).mentions("wrong type"));
  EXPECT_TRUE(with([](Json& d) { d["payload"]["type"] = "bid"; }).mentions("enum out of range"));
  EXPECT_TRUE(with([](Json& d) { d["payload"]["$schema"] = "Cfp.json"; }).mentions("schema mismatch"));
  EXPECT_FALSE(validate_document(Json::array()).ok());
}

TEST(Envelope, NonFiniteOfferValue) {
  IdGenerator ids(1);
  for (double v : {std::nan(""), std::numeric_limits<double>::infinity()}) {
    const auto r = validate(sample(Offer{"r1", v, t0(), {}}, ids));
    EXPECT_TRUE(r.mentions("non-finite number"));
    EXPECT_EQ(r.violations.size(), 1u);
  }
}

TEST(Envelope, AlternatingOfferNeedsNumericPrice) {
  IdGenerator ids(1);
  EXPECT_TRUE(validate(sample(AlternatingOffer{"s", 0, {{"qty", 1}}, t0(), {}}, ids)).mentions("missing required field: price"));
  EXPECT_TRUE(validate(sample(AlternatingOffer{"s", 0, {{"price", "ten"}}, t0(), {}}, ids)).mentions("wrong type"));
}

TEST(Envelope, SerializationIsCanonical) {
  IdGenerator ids(9);
  for (const auto& p : one_of_each()) {
    const std::string once = serialize(sample(p, ids));
    EXPECT_EQ(serialize(parse_envelope(once)), once);
  }
  // Sorted keys: "envelope" precedes "payload", "capabilities" leads the envelope map.
  const std::string s = serialize(sample(Ack{"m"}, ids));
  EXPECT_EQ(s.rfind("{\"envelope\":{\"capabilities\":", 0), 0u) << s;
  EXPECT_LT(s.find("\"$schema\""), s.find("\"ref_msg_id\""));
}

TEST(Envelope, RoundTripPreservesFields) {
  IdGenerator ids(2);
  Envelope env = sample(Offer{"r7", 2.25, t0() + 3ms, {{"sla", {{"p95", 11}}}}}, ids);
  env.scope = {Consent::opt_out, 30};
  Envelope back = parse_envelope(serialize(env));
  EXPECT_EQ(back.msg_id, env.msg_id);
  EXPECT_EQ(back.ts, env.ts);
  EXPECT_EQ(back.from, env.from);
  EXPECT_EQ(back.to, env.to);
  EXPECT_EQ(back.capabilities, env.capabilities);
  EXPECT_EQ(back.scope, env.scope);
  const Offer* o = back.as<Offer>();
  ASSERT_NE(o, nullptr);
  EXPECT_EQ(o->round_id, "r7");
  EXPECT_EQ(o->value, 2.25);
  EXPECT_EQ(o->timestamp, t0() + 3ms);
  EXPECT_EQ(o->conditions["sla"]["p95"], 11);
}

TEST(Envelope, ParseErrors) {
  EXPECT_THROW(parse_envelope("{not json"), Error);
  try {
    parse_envelope(R"({"envelope":{},"payload":{"type":"ack"}})");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::parse_error);
    EXPECT_NE(std::string(e.what()).find("missing required field: msg_id"), std::string::npos);
  }
}

TEST(Sanitize, RedactsListedKey) {
  IdGenerator ids(1);
  Envelope env = sample(Offer{"r1", 1, t0(), {{"api_key", "s3cr3t"}, {"region", "eu"}}}, ids);
  const std::vector<std::string> keys{"api_key"};
  Envelope out = sanitize(env, keys);
  EXPECT_EQ(out.as<Offer>()->conditions["api_key"], "[REDACTED]");
  EXPECT_EQ(out.as<Offer>()->conditions["region"], "eu");
  EXPECT_EQ(env.as<Offer>()->conditions["api_key"], "s3cr3t");
}

TEST(Sanitize, EmptyKeyListIsIdentity) {
  IdGenerator ids(1);
  Envelope env = sample(Cfp{"r1", t0(), {{"token", "t"}}}, ids);
  EXPECT_EQ(serialize(sanitize(env, std::vector<std::string>{})), serialize(env));
}

// Independent recursive walk: every value under a sensitive key becomes the
// marker, everything else is copied.
Json redact_oracle(const Json& n, const std::set<std::string>& keys) {
  if (n.is_object()) {
    Json out = Json::object();
    for (const auto& [k, v] : n.items()) out[k] = keys.contains(k) ? Json("[REDACTED]") : redact_oracle(v, keys);
    return out;
  }
  if (n.is_array()) {
    Json out = Json::array();
    for (const auto& v : n) out.push_back(redact_oracle(v, keys));
    return out;
  }
  return n;
}

TEST(Sanitize, NestedMapsMatchRecursiveOracle) {
  IdGenerator ids(1);
  const Json cond = {{"auth", {{"token", "t"}, {"user", "u"}}},
                     {"list", {{{"token", 1}}, 2, {{"deep", {{"token", {{"x", 1}}}}}}}},
                     {"token", "top"}};
  Envelope env = sample(Offer{"r1", 1, t0(), cond}, ids);
  Envelope out = sanitize(env, {"token"});
  EXPECT_EQ(out.as<Offer>()->conditions, redact_oracle(cond, {"token"}));
  EXPECT_EQ(out.as<Offer>()->conditions["auth"]["token"], "[REDACTED]");
}

TEST(Sanitize, Idempotent) {
  IdGenerator ids(1);
  for (const auto& p : one_of_each()) {
    Envelope once = sanitize(sample(p, ids), {"min_value", "note", "price"});
    EXPECT_EQ(serialize(sanitize(once, {"min_value", "note", "price"})), serialize(once));
  }
}

TEST(Time, IsoRoundTripAndRejects) {
  const auto t = parse_iso8601("2024-02-29T23:59:59.123Z");
  ASSERT_TRUE(t);
  EXPECT_EQ(format_iso8601(*t), "2024-02-29T23:59:59.123Z");
  EXPECT_EQ(format_iso8601(*parse_iso8601("1970-01-01T00:00Z")), "1970-01-01T00:00:00.000Z");
  EXPECT_EQ(format_iso8601(*parse_iso8601("2025-06-01T12:00:00.5Z")), "2025-06-01T12:00:00.500Z");
  for (const char* bad : {"2023-02-29T00:00:00Z", "2025-13-01T00:00:00Z", "2025-01-01 00:00:00Z", "2025-01-01T00:00:00",
                          "2025-01-01T00:00:00.1234Z", ""}) {
    EXPECT_FALSE(parse_iso8601(bad)) << bad;
  }
}

TEST(Time, GoldenEpochValues) {
  EXPECT_EQ(t0().time_since_epoch().count(), 1735689600000000LL);
  EXPECT_EQ(format_iso8601(Timestamp{Duration{-1000}}), "1969-12-31T23:59:59.999Z");
}

TEST(Random, FrozenStreams) {
  // mt19937_64 is fully specified: the 10000th draw from the default seed is fixed.
  std::mt19937_64 ref;
  ref.discard(9999);
  EXPECT_EQ(ref(), 9981545732273789042ULL);
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.uniform01(), b.uniform01());
  EXPECT_EQ(mix_seed(0, 0), 0xe220a8397b1dcdafULL);
  IdGenerator g1(3), g2(3);
  EXPECT_EQ(g1.next(), g2.next());
}

TEST(Random, UniformRange) {
  Rng r(1);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform01();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(VirtualClock, OrdersByTimeThenScheduling) {
  VirtualClock c(t0());
  std::vector<int> order;
  c.schedule_at(t0() + 2ms, [&] { order.push_back(3); });
  c.schedule_at(t0() + 1ms, [&] { order.push_back(1); });
  c.schedule_at(t0() + 1ms, [&] { order.push_back(2); });
  const TimerId gone = c.schedule_at(t0() + 1ms, [&] { order.push_back(99); });
  c.cancel(gone);
  c.run_until(t0() + 1ms);
  EXPECT_EQ(order, (std::vector<int>{1, 2}));
  EXPECT_EQ(c.now(), t0() + 1ms);
  c.run();
  EXPECT_EQ(order, (std::vector<int>{1, 2, 3}));
  c.advance(10s);
  EXPECT_EQ(c.now(), t0() + 10s + 2ms);
}

}  // namespace
}  // namespace llmx
