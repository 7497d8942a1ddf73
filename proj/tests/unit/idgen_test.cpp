#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <random>
#include <set>
#include <thread>

#include "ticketing/idgen.hpp"

using namespace ticketing::idgen;

namespace {

// Clock that returns scripted values, then keeps returning the last one + n.
struct ScriptedClock {
  std::vector<std::int64_t> values;
  std::size_t next = 0;
  std::int64_t operator()() {
    if (next < values.size()) return values[next++];
    return values.back() + static_cast<std::int64_t>(++next - values.size());
  }
};

constexpr std::int64_t kEpoch = SnowflakeLayout{}.epoch_ms;

}  // namespace

TEST(SnowflakeLayout, DefaultWidthsAndShifts) {
  SnowflakeLayout l;
  EXPECT_EQ(l.timestamp_bits + l.datacenter_bits + l.worker_bits + l.sequence_bits, 63);
  EXPECT_EQ(l.worker_shift(), 12);
  EXPECT_EQ(l.datacenter_shift(), 17);
  EXPECT_EQ(l.timestamp_shift(), 22);
  EXPECT_EQ(l.max_sequence(), 4095u);
  EXPECT_EQ(l.max_worker(), 31u);
  EXPECT_FALSE(validate_layout(l, system_now_ms()).has_value());
}

TEST(SnowflakeLayout, RejectsBadLayouts) {
  SnowflakeLayout l;
  l.sequence_bits = 13;
  EXPECT_EQ(validate_layout(l, system_now_ms())->issue, LayoutIssue::kWidthSumMismatch);

  l = {};
  l.worker_bits = 0;
  l.sequence_bits = 17;
  EXPECT_EQ(validate_layout(l, system_now_ms())->issue, LayoutIssue::kZeroWidthField);

  l = {};
  l.worker_bits = -1;
  l.sequence_bits = 18;
  EXPECT_EQ(validate_layout(l, system_now_ms())->issue, LayoutIssue::kNegativeWidth);

  l = {};
  EXPECT_EQ(validate_layout(l, l.epoch_ms - 1)->issue, LayoutIssue::kEpochInFuture);

  EXPECT_THROW(SnowflakeGenerator(l, 0, 0, [] { return kEpoch - 10; }), LayoutError);
  EXPECT_THROW(SnowflakeGenerator(SnowflakeLayout{}, 32, 0), std::invalid_argument);
  EXPECT_THROW(SnowflakeGenerator(SnowflakeLayout{}, 0, 32), std::invalid_argument);
}

TEST(SnowflakeLayout, DecomposeInvertsRecompose) {
  SnowflakeLayout l;
  std::mt19937_64 rng(7);
  for (int i = 0; i < 10000; ++i) {
    IdParts p{rng() & l.max_timestamp_offset(), rng() & l.max_datacenter(),
              rng() & l.max_worker(), rng() & l.max_sequence()};
    const auto id = recompose(p, l);
    EXPECT_EQ(decompose(id, l), p);
    EXPECT_EQ(id >> 63, 0u);
  }
}

TEST(SnowflakeGenerator, EncodesIdentityAndTime) {
  SnowflakeGenerator gen(SnowflakeLayout{}, 3, 17, [] { return kEpoch + 123456; });
  const auto parts = decompose(gen.next_id(), gen.layout());
  EXPECT_EQ(parts.timestamp_offset_ms, 123456u);
  EXPECT_EQ(parts.datacenter_id, 3u);
  EXPECT_EQ(parts.worker_id, 17u);
  EXPECT_EQ(parts.sequence, 0u);
  EXPECT_EQ(decompose(gen.next_id(), gen.layout()).sequence, 1u);
}

TEST(SnowflakeGenerator, SequenceRolloverMovesToNextMillisecond) {
  // 4096 ids fit in one millisecond; the 4097th waits for the clock.
  std::vector<std::int64_t> script(4096 + 3, kEpoch + 50);
  script.push_back(kEpoch + 51);
  SnowflakeGenerator gen(SnowflakeLayout{}, 0, 0, ScriptedClock{script});
  std::uint64_t prev = 0;
  for (int i = 0; i < 4096; ++i) {
    const auto id = gen.next_id();
    const auto p = decompose(id, gen.layout());
    EXPECT_EQ(p.timestamp_offset_ms, 50u);
    EXPECT_EQ(p.sequence, static_cast<std::uint64_t>(i));
    EXPECT_GT(id, prev);
    prev = id;
  }
  const auto p = decompose(gen.next_id(), gen.layout());
  EXPECT_EQ(p.timestamp_offset_ms, 51u);
  EXPECT_EQ(p.sequence, 0u);
}

TEST(SnowflakeGenerator, SmallRegressionIsWaitedOut) {
  SnowflakeGenerator gen(SnowflakeLayout{}, 0, 0,
                         ScriptedClock{{kEpoch, kEpoch + 100, kEpoch + 97, kEpoch + 98, kEpoch + 101}});
  const auto a = gen.next_id();
  const auto b = gen.next_id();
  const auto c = gen.next_id();
  EXPECT_LT(a, b);
  EXPECT_LT(b, c);
  EXPECT_GE(decompose(c, gen.layout()).timestamp_offset_ms, 100u);
}

TEST(SnowflakeGenerator, LargeRegressionThrows) {
  SnowflakeGenerator gen(SnowflakeLayout{}, 0, 0, ScriptedClock{{kEpoch, kEpoch + 100, kEpoch + 80}});
  gen.next_id();
  try {
    gen.next_id();
    FAIL() << "expected ClockRegressionError";
  } catch (const ClockRegressionError& e) {
    EXPECT_EQ(e.regression_ms(), 20);
  }
}

TEST(SnowflakeGenerator, TimestampOverflowThrows) {
  SnowflakeLayout l;
  l.timestamp_bits = 10;
  l.sequence_bits = 43;
  SnowflakeGenerator gen(l, 0, 0, [] { return kEpoch + 1024; });
  EXPECT_THROW(gen.next_id(), std::overflow_error);
}

TEST(SnowflakeGenerator, ConcurrentCallersGetUniqueIncreasingIds) {
  SnowflakeGenerator gen(SnowflakeLayout{}, 1, 1);
  constexpr int kThreads = 4, kPer = 50000;
  std::vector<std::vector<std::uint64_t>> out(kThreads);
  std::vector<std::thread> threads;
  for (int t = 0; t < kThreads; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < kPer; ++i) out[t].push_back(gen.next_id());
    });
  }
  for (auto& th : threads) th.join();
  std::set<std::uint64_t> all;
  for (const auto& v : out) {
    EXPECT_TRUE(std::is_sorted(v.begin(), v.end()));
    EXPECT_EQ(std::adjacent_find(v.begin(), v.end()), v.end());
    all.insert(v.begin(), v.end());
  }
  EXPECT_EQ(all.size(), static_cast<std::size_t>(kThreads * kPer));
}
