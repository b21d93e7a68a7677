#include <gtest/gtest.h>

#include "world.hpp"

namespace llmx {
namespace {

using test::t0;

TEST(Bidder, ConstantIsConstant) {
  ScriptedBidder b(dist::Constant{5.0}, dist::Constant{0}, 1);
  for (int i = 0; i < 10; ++i) {
    const auto bid = b.produce_offer();
    EXPECT_EQ(bid.value, 5.0);
    EXPECT_EQ(bid.delay, Duration{0});
  }
}

TEST(Bidder, SeedReproducible) {
  ScriptedBidder a(dist::Uniform{0, 1}, dist::Uniform{1, 5}, 42), b(dist::Uniform{0, 1}, dist::Uniform{1, 5}, 42);
  ScriptedBidder c(dist::Uniform{0, 1}, dist::Uniform{1, 5}, 43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.produce_offer(), y = b.produce_offer(), z = c.produce_offer();
    ASSERT_EQ(x.value, y.value);
    ASSERT_EQ(x.delay, y.delay);
    ASSERT_GE(x.value, 0.0);
    ASSERT_LT(x.value, 1.0);
    ASSERT_GE(x.delay, 1ms);
    ASSERT_LE(x.delay, 5ms);
    differs = differs || x.value != z.value;
  }
  EXPECT_TRUE(differs);
}

TEST(Bidder, ExponentialMeanWithinFivePercent) {
  ScriptedBidder b(dist::Constant{1}, dist::Exponential{3}, 7);
  double sum = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const auto d = b.produce_offer().delay;
    ASSERT_GE(d, Duration{0});
    sum += to_ms(d);
  }
  EXPECT_NEAR(sum / n, 3.0, 0.15);
}

TEST(Bidder, NormalValuesClippedAtZero) {
  ScriptedBidder b(dist::Normal{0, 1}, dist::Constant{0}, 3);
  int zeros = 0;
  for (int i = 0; i < 1000; ++i) {
    const double v = b.produce_offer().value;
    ASSERT_GE(v, 0.0);
    zeros += v == 0.0 ? 1 : 0;
  }
  EXPECT_GT(zeros, 400);
  EXPECT_LT(zeros, 600);
}

TEST(Bidder, InvalidDistributions) {
  auto code = [](auto make) {
    try {
      make();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::io_error;
  };
  EXPECT_EQ(code([] { ScriptedBidder(dist::Uniform{2, 1}, dist::Constant{0}, 1); }), ErrorCode::invalid_distribution);
  EXPECT_EQ(code([] { ScriptedBidder(dist::Normal{0, -1}, dist::Constant{0}, 1); }), ErrorCode::invalid_distribution);
  EXPECT_EQ(code([] { ScriptedBidder(dist::Constant{0}, dist::Exponential{0}, 1); }), ErrorCode::invalid_distribution);
  EXPECT_EQ(code([] { ScriptedBidder(dist::Constant{std::nan("")}, dist::Constant{0}, 1); }), ErrorCode::invalid_distribution);
}

ScriptedBidder fallback() { return ScriptedBidder(dist::Constant{1.5}, dist::Constant{2}, 1); }

NegotiationContext ctx() { return {"c1", "r1", Attributes::object(), {}}; }

TEST(ExternalProducer, ValidOutputPassesThrough) {
  TraceSink trace;
  auto p = wrap_external_producer(
      [](const NegotiationContext&) { return ExternalReply{R"({"value": 7.25, "conditions": {"sla": "p95<11"}})", 30ms}; },
      1s, 2, fallback(), &trace);
  const OfferDraft d = p->produce(ctx());
  EXPECT_EQ(d.value, 7.25);
  EXPECT_EQ(d.conditions["sla"], "p95<11");
  EXPECT_EQ(d.delay, 30ms);
  EXPECT_EQ(trace.size(), 0u);
}

TEST(ExternalProducer, JunkTwiceThenValid) {
  TraceSink trace;
  int calls = 0;
  ExternalProducer p(
      [&](const NegotiationContext&) {
        ++calls;
        if (calls == 1) return ExternalReply{"I would bid seven", 5ms};
        if (calls == 2) return ExternalReply{R"({"value": "seven"})", 5ms};
        return ExternalReply{R"({"value": 7})", 5ms};
      },
      1s, 3, fallback(), &trace);
  const OfferDraft d = p.produce(ctx());
  EXPECT_EQ(d.value, 7.0);
  EXPECT_EQ(calls, 3);
  EXPECT_EQ(trace.count(TraceKind::retry), 2u);
  EXPECT_EQ(trace.count(TraceKind::producer_fallback), 0u);
  EXPECT_EQ(d.delay, 15ms);
}

TEST(ExternalProducer, AlwaysFailingFallsBack) {
  TraceSink trace;
  ExternalProducer p([](const NegotiationContext&) -> ExternalReply { throw std::runtime_error("503"); }, 1s, 1,
                     fallback(), &trace);
  const OfferDraft d = p.produce(ctx());
  EXPECT_EQ(d.value, 1.5);
  EXPECT_EQ(p.invocations(), 2u);
  auto events = trace.events();
  ASSERT_EQ(events.size(), 2u);
  EXPECT_EQ(events[0].detail, "producer-error");
  EXPECT_EQ(events[1].kind, TraceKind::producer_fallback);
  EXPECT_EQ(events[1].detail, "producer-fallback");
}

TEST(ExternalProducer, TimeoutCountsAsFailure) {
  TraceSink trace;
  ExternalProducer p([](const NegotiationContext&) { return ExternalReply{R"({"value": 3})", 5s}; }, 1s, 2,
                     fallback(), &trace);
  const OfferDraft d = p.produce(ctx());
  EXPECT_EQ(d.value, 1.5);
  EXPECT_EQ(p.invocations(), 3u);
  // Three timed-out attempts cost the full timeout each, plus the fallback's think time.
  EXPECT_EQ(d.delay, 3s + 2ms);
  EXPECT_EQ(trace.events().front().detail, "producer-timeout");
}

TEST(ExternalProducer, InvocationsBoundedAndOutputValid) {
  Rng rng(8);
  const std::vector<std::string> replies = {R"({"value": 1})", "null", R"({"value": 1, "conditions": 3})",
                                            R"([1,2])", R"({"value": 1e999})", R"({"value": -2.5})", ""};
  for (int trial = 0; trial < 200; ++trial) {
    const int retries = trial % 4;
    ExternalProducer p([&](const NegotiationContext&) {
      return ExternalReply{replies[static_cast<std::size_t>(rng.uniform(0, 7))], 1ms};
    }, 1s, retries, fallback());
    const OfferDraft d = p.produce(ctx());
    EXPECT_LE(p.invocations(), static_cast<std::size_t>(retries + 1));
    IdGenerator ids(1);
    VirtualClock clock(t0());
    const Envelope env = make_envelope(agent_uri("c1"), {"agent://alice"}, Offer{"r1", d.value, t0(), d.conditions}, {},
                                       clock, ids);
    EXPECT_TRUE(validate(env).ok());
  }
}

TEST(Traffic, ZeroRateIsEmpty) { EXPECT_EQ(poisson_schedule(0, 60min, 1).size(), 0u); }

TEST(Traffic, NegativeRateRejected) {
  try {
    poisson_schedule(-1, 60min, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::invalid_rate);
  }
}

TEST(Traffic, DeterministicSortedWithinHorizon) {
  const auto a = poisson_schedule(90, 60min, 5), b = poisson_schedule(90, 60min, 5);
  EXPECT_EQ(a.offsets, b.offsets);
  EXPECT_NE(a.offsets, poisson_schedule(90, 60min, 6).offsets);
  EXPECT_TRUE(std::is_sorted(a.offsets.begin(), a.offsets.end()));
  EXPECT_GE(a.offsets.front(), Duration{0});
  EXPECT_LT(a.offsets.back(), Duration{60min});
}

// Count law: N ~ Poisson(lambda = 90 * 60). The mean over 200 seeds has
// standard error sqrt(lambda / 200); the sample variance should be near lambda.
TEST(Traffic, PoissonCountLaw) {
  const double lambda = 90.0 * 60.0;
  const int seeds = 200;
  std::vector<double> counts;
  for (int s = 0; s < seeds; ++s) counts.push_back(static_cast<double>(poisson_schedule(90, 60min, s).size()));
  double mean = 0;
  for (double c : counts) mean += c;
  mean /= seeds;
  double var = 0;
  for (double c : counts) var += (c - mean) * (c - mean);
  var /= seeds - 1;
  EXPECT_LT(std::abs(mean - lambda), 3 * std::sqrt(lambda / seeds));
  // Var of the sample variance for a Poisson is about 2 lambda^2 / (n - 1).
  EXPECT_LT(std::abs(var - lambda), 4 * lambda * std::sqrt(2.0 / (seeds - 1)));
}

TEST(Traffic, FixedSchedules) {
  EXPECT_EQ(fixed_schedule(3, 30s).offsets, (std::vector<Duration>{0s, 30s, 60s}));
  EXPECT_EQ(fixed_schedule(6, 20s).size(), 6u);
  EXPECT_EQ(fixed_schedule(1, 0s).offsets, (std::vector<Duration>{0s}));
}

}  // namespace
}  // namespace llmx
