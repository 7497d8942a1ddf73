#include <gtest/gtest.h>

#include <atomic>
#include <deque>
#include <random>
#include <thread>

#include "ticketing/flowcontrol.hpp"

using namespace ticketing::flow;

namespace {

FlowRule rule(std::int64_t qps = 1000, std::int64_t conc = 1000) {
  FlowRule r;
  r.resource = "r";
  r.qps_limit = qps;
  r.max_concurrency = conc;
  return r;
}

Permit must_admit(FlowController& fc, std::int64_t now) {
  auto a = fc.admit("r", now);
  EXPECT_TRUE(std::holds_alternative<Permit>(a)) << "at " << now;
  return std::holds_alternative<Permit>(a) ? std::get<Permit>(a) : Permit{};
}

std::optional<RejectReason> reason(const Admission& a) {
  if (auto* r = std::get_if<Rejected>(&a)) return r->reason;
  return std::nullopt;
}

}  // namespace

TEST(FlowRule, Validation) {
  EXPECT_NO_THROW(rule().validate());
  for (auto mutate : std::vector<std::function<void(FlowRule&)>>{
           [](FlowRule& r) { r.resource.clear(); }, [](FlowRule& r) { r.qps_limit = 0; },
           [](FlowRule& r) { r.max_concurrency = -1; }, [](FlowRule& r) { r.rt_threshold_ms = 0; },
           [](FlowRule& r) { r.breaker_error_ratio = 0; }, [](FlowRule& r) { r.breaker_error_ratio = 1.5; },
           [](FlowRule& r) { r.breaker_min_samples = 0; }, [](FlowRule& r) { r.open_duration_ms = 0; },
           [](FlowRule& r) { r.half_open_probes = 0; }}) {
    FlowRule r = rule();
    mutate(r);
    EXPECT_THROW(r.validate(), ConfigurationError);
  }
}

TEST(FlowController, UnknownResource) {
  FlowController fc;
  EXPECT_THROW(fc.admit("nope", 0), ConfigurationError);
  EXPECT_THROW(fc.breaker_state("nope"), ConfigurationError);
}

TEST(FlowController, QpsThreshold) {
  FlowController fc;
  fc.register_rule(rule(10));
  for (int i = 0; i < 10; ++i) fc.record_outcome(must_admit(fc, 1000 + i), 1, true, 1000 + i);
  EXPECT_EQ(reason(fc.admit("r", 1050)), RejectReason::kQps);
  EXPECT_EQ(fc.in_flight("r"), 0);
  // A rejection is not an admission; the window frees up later.
  EXPECT_EQ(reason(fc.admit("r", 2099)), RejectReason::kQps);
  EXPECT_FALSE(reason(fc.admit("r", 2100)).has_value());
}

TEST(FlowController, AnySlidingSecondStaysUnderLimit) {
  // Checked against a naive list of admission times.
  std::mt19937 rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    FlowController fc;
    const std::int64_t limit = 5 + rng() % 50;
    fc.register_rule(rule(limit));
    std::deque<std::int64_t> admitted;
    std::int64_t now = rng() % 1000;
    for (int i = 0; i < 5000; ++i) {
      now += rng() % 15;
      auto a = fc.admit("r", now);
      if (auto* p = std::get_if<Permit>(&a)) {
        admitted.push_back(now);
        fc.record_outcome(*p, 1, true, now);
      }
      while (!admitted.empty() && admitted.front() <= now - 1000) admitted.pop_front();
      ASSERT_LE(static_cast<std::int64_t>(admitted.size()), limit);
    }
  }
}

TEST(FlowController, ConcurrencyLimitAndInFlight) {
  FlowController fc;
  fc.register_rule(rule(1000, 3));
  std::vector<Permit> held;
  for (int i = 0; i < 3; ++i) held.push_back(must_admit(fc, 0));
  EXPECT_EQ(reason(fc.admit("r", 0)), RejectReason::kConcurrency);
  EXPECT_EQ(fc.in_flight("r"), 3);
  fc.record_outcome(held.back(), 1, true, 0);
  EXPECT_EQ(fc.in_flight("r"), 2);
  EXPECT_THROW(fc.record_outcome(held.back(), 1, true, 0), ContractViolation);
  EXPECT_EQ(fc.in_flight("r"), 2);
  EXPECT_THROW(fc.record_outcome(Permit{"r", 9999, false}, 1, true, 0), ContractViolation);
}

TEST(FlowController, ConcurrentCallersNeverExceedLimits) {
  FlowController fc;
  fc.register_rule(rule(1'000'000, 4));
  std::atomic<std::int64_t> inside{0}, peak{0};
  std::vector<std::thread> pool;
  for (int t = 0; t < 8; ++t) {
    pool.emplace_back([&] {
      for (int i = 0; i < 2000; ++i) {
        auto a = fc.admit("r", 0);
        if (auto* p = std::get_if<Permit>(&a)) {
          const auto now = ++inside;
          auto prev = peak.load();
          while (now > prev && !peak.compare_exchange_weak(prev, now)) {
          }
          --inside;
          fc.record_outcome(*p, 1, true, 0);
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  EXPECT_LE(peak.load(), 4);
  EXPECT_EQ(fc.in_flight("r"), 0);
}

TEST(Breaker, SlowCallsTripIt) {
  FlowController fc;
  fc.register_rule(rule());
  for (int i = 0; i < 9; ++i) fc.record_outcome(must_admit(fc, 100), 900, true, 100);
  EXPECT_EQ(fc.breaker_state("r").state, BreakerPhase::kClosed);  // below min samples
  fc.record_outcome(must_admit(fc, 100), 900, true, 100);
  EXPECT_EQ(fc.breaker_state("r").state, BreakerPhase::kOpen);
  EXPECT_EQ(fc.breaker_state("r").opened_at_ms, 100);
  EXPECT_EQ(reason(fc.admit("r", 200)), RejectReason::kBreaker);
}

TEST(Breaker, TwentySlowSamplesInOneBatch) {
  FlowController fc;
  fc.register_rule(rule());
  std::vector<Permit> permits;
  for (int i = 0; i < 20; ++i) permits.push_back(must_admit(fc, 0));
  for (auto& p : permits) fc.record_outcome(p, 501, true, 10);
  EXPECT_EQ(fc.breaker_state("r").state, BreakerPhase::kOpen);
}

TEST(Breaker, ErrorsTripItAndRtAtThresholdIsNotSlow) {
  FlowController fc;
  fc.register_rule(rule());
  for (int i = 0; i < 10; ++i) fc.record_outcome(must_admit(fc, 0), 500, i % 2 == 0, 0);
  EXPECT_EQ(fc.breaker_state("r").state, BreakerPhase::kOpen);

  FlowController healthy;
  healthy.register_rule(rule());
  for (int i = 0; i < 100; ++i) {
    auto p = std::get<Permit>(healthy.admit("r", i * 10));
    healthy.record_outcome(p, 500, i % 3 != 0, i * 10);
  }
  EXPECT_EQ(healthy.breaker_state("r").state, BreakerPhase::kClosed);
}

TEST(Breaker, RecoversThroughHalfOpen) {
  FlowController fc;
  fc.register_rule(rule());
  for (int i = 0; i < 10; ++i) fc.record_outcome(must_admit(fc, 0), 1000, true, 0);
  EXPECT_EQ(reason(fc.admit("r", 4999)), RejectReason::kBreaker);

  // Exactly three probes once the open period has elapsed.
  std::vector<Permit> probes;
  for (int i = 0; i < 3; ++i) {
    probes.push_back(must_admit(fc, 5000));
    EXPECT_TRUE(probes.back().probe);
  }
  EXPECT_EQ(fc.breaker_state("r").state, BreakerPhase::kHalfOpen);
  EXPECT_EQ(reason(fc.admit("r", 5000)), RejectReason::kBreaker);
  for (int i = 0; i < 2; ++i) fc.record_outcome(probes[i], 10, true, 5010);
  EXPECT_EQ(fc.breaker_state("r").state, BreakerPhase::kHalfOpen);
  fc.record_outcome(probes[2], 10, true, 5010);
  EXPECT_EQ(fc.breaker_state("r").state, BreakerPhase::kClosed);
  EXPECT_EQ(fc.breaker_history("r"),
            (std::vector<BreakerPhase>{BreakerPhase::kClosed, BreakerPhase::kOpen,
                                       BreakerPhase::kHalfOpen, BreakerPhase::kClosed}));
  // Old slow samples were cleared with the transition.
  fc.record_outcome(must_admit(fc, 5020), 10, true, 5020);
  EXPECT_EQ(fc.breaker_state("r").state, BreakerPhase::kClosed);
}

TEST(Breaker, FailedProbeReopensWithFreshTimer) {
  FlowController fc;
  fc.register_rule(rule());
  for (int i = 0; i < 10; ++i) fc.record_outcome(must_admit(fc, 0), 0, false, 0);
  auto p1 = must_admit(fc, 6000);
  auto p2 = must_admit(fc, 6000);
  fc.record_outcome(p1, 10, true, 6001);
  fc.record_outcome(p2, 10, false, 6002);
  EXPECT_EQ(fc.breaker_state("r").state, BreakerPhase::kOpen);
  EXPECT_EQ(fc.breaker_state("r").opened_at_ms, 6002);
  EXPECT_EQ(reason(fc.admit("r", 11001)), RejectReason::kBreaker);
  EXPECT_TRUE(must_admit(fc, 11002).probe);
}

TEST(Breaker, SlowProbeCountsAsFailure) {
  FlowController fc;
  fc.register_rule(rule());
  for (int i = 0; i < 10; ++i) fc.record_outcome(must_admit(fc, 0), 0, false, 0);
  auto p = must_admit(fc, 5000);
  fc.record_outcome(p, 501, true, 5600);
  EXPECT_EQ(fc.breaker_state("r").state, BreakerPhase::kOpen);
}

TEST(Breaker, OpenRejectsRegardlessOfLoad) {
  FlowController fc;
  fc.register_rule(rule());
  for (int i = 0; i < 10; ++i) fc.record_outcome(must_admit(fc, 0), 0, false, 0);
  for (std::int64_t t = 0; t < 5000; t += 250) EXPECT_EQ(reason(fc.admit("r", t)), RejectReason::kBreaker);
  EXPECT_EQ(fc.breaker_states().at("r"), BreakerPhase::kOpen);
}

TEST(Gateway, Precedence) {
  std::int64_t now = 0;
  SessionStore sessions(std::chrono::milliseconds(1000), [&] { return now; });
  AccessPolicy policy{{"/health", "trusted"}, {"10.0.0.9", "mallory"}};
  const auto token = sessions.issue("alice");
  const auto bad_token = sessions.issue("mallory");

  auto decide = [&](GatewayRequest r) { return gateway_filter(policy, sessions, r); };
  auto denied = [](const GatewayDecision& d) -> std::optional<DenyReason> {
    if (auto* x = std::get_if<Deny>(&d)) return x->reason;
    return std::nullopt;
  };

  EXPECT_EQ(denied(decide({"", "10.0.0.9", "/orders/1", token})), DenyReason::kBlacklist);
  EXPECT_EQ(denied(decide({"", "10.0.0.9", "/health", ""})), DenyReason::kBlacklist);
  EXPECT_EQ(denied(decide({"", "1.2.3.4", "/orders/1", bad_token})), DenyReason::kBlacklist);
  EXPECT_FALSE(denied(decide({"", "1.2.3.4", "/health", ""})));
  EXPECT_FALSE(denied(decide({"trusted", "1.2.3.4", "/orders/1", ""})));
  EXPECT_EQ(denied(decide({"", "1.2.3.4", "/orders/1", ""})), DenyReason::kAuth);
  EXPECT_EQ(denied(decide({"", "1.2.3.4", "/orders/1", "forged"})), DenyReason::kAuth);
  auto ok = decide({"", "1.2.3.4", "/orders/1", token});
  ASSERT_FALSE(denied(ok));
  EXPECT_EQ(std::get<Allow>(ok).principal, "alice");

  now = 1000;
  EXPECT_EQ(denied(decide({"", "1.2.3.4", "/orders/1", token})), DenyReason::kAuth);
}

TEST(Gateway, RevokedToken) {
  SessionStore sessions(std::chrono::milliseconds(1000), [] { return std::int64_t{0}; });
  const auto token = sessions.issue("bob");
  EXPECT_EQ(sessions.principal_of(token), "bob");
  sessions.revoke(token);
  EXPECT_FALSE(sessions.principal_of(token));
}
