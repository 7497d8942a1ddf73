#include <gtest/gtest.h>

#include <cmath>
#include <string>
#include <thread>

#include "ticketing/bloom.hpp"

using namespace ticketing::bloom;

TEST(BloomSizing, MatchesClosedForm) {
  // Frozen from an independent float64 evaluation of the sizing formulas.
  auto p = size_for(100000, 0.01);
  EXPECT_EQ(p.m, 958506u);
  EXPECT_EQ(p.k, 7u);
  p = size_for(1000000, 0.01);
  EXPECT_EQ(p.m, 9585059u);
  EXPECT_EQ(p.k, 7u);
  p = size_for(1000, 0.001);
  EXPECT_EQ(p.m, 14378u);
  EXPECT_EQ(p.k, 10u);
}

TEST(BloomSizing, RejectsBadArguments) {
  EXPECT_THROW(size_for(0, 0.01), std::invalid_argument);
  EXPECT_THROW(size_for(10, 0.0), std::invalid_argument);
  EXPECT_THROW(size_for(10, 1.0), std::invalid_argument);
}

TEST(BloomSizing, PredictedFalsePositiveRate) {
  EXPECT_NEAR(predicted_fpr(958506, 7, 100000), 0.010039209581758123, 1e-12);
  EXPECT_NEAR(predicted_fpr(1, 1, 1), 0.6321205588285577, 1e-12);
  EXPECT_EQ(predicted_fpr(1000, 3, 0), 0.0);
}

TEST(Murmur3, ReferenceVectors) {
  // x64_128, seed 0, checked against an independent implementation.
  EXPECT_EQ(murmur3_128(""), std::make_pair(std::uint64_t{0}, std::uint64_t{0}));
  EXPECT_EQ(murmur3_128("hello"),
            std::make_pair(std::uint64_t{0xcbd8a7b341bd9b02}, std::uint64_t{0x5b1e906a48ae1d19}));
  EXPECT_EQ(murmur3_128("route:2026-11-01:Beijing:Nanjing"),
            std::make_pair(std::uint64_t{0xb94cbceac44aef89}, std::uint64_t{0x26d84fbff599033d}));
  EXPECT_EQ(murmur3_128("The quick brown fox jumps over the lazy dog"),
            std::make_pair(std::uint64_t{0xe34bbc7bbc071b6c}, std::uint64_t{0x7a433ca9c49a9347}));
}

TEST(BloomFilter, NoFalseNegatives) {
  BloomFilter f(size_for(5000, 0.01));
  for (int i = 0; i < 5000; ++i) f.insert("key-" + std::to_string(i));
  for (int i = 0; i < 5000; ++i) EXPECT_TRUE(f.maybe_contains("key-" + std::to_string(i)));
}

TEST(BloomFilter, EmptyFilterContainsNothing) {
  BloomFilter f(size_for(100, 0.01));
  EXPECT_EQ(f.popcount(), 0u);
  EXPECT_FALSE(f.maybe_contains("anything"));
}

TEST(BloomFilter, ProbesAreInRangeAndDeterministic) {
  BloomFilter f(size_for(1000, 0.01));
  std::vector<std::uint64_t> a, b;
  f.for_each_position("x", [&](std::uint64_t pos) { a.push_back(pos); });
  f.for_each_position("x", [&](std::uint64_t pos) { b.push_back(pos); });
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.size(), f.params().k);
  for (auto pos : a) EXPECT_LT(pos, f.params().m);
}

TEST(BloomFilter, MeasuredRateTracksPrediction) {
  const auto params = size_for(20000, 0.02);
  BloomFilter f(params);
  for (int i = 0; i < 20000; ++i) f.insert("in-" + std::to_string(i));
  int fp = 0;
  for (int i = 0; i < 50000; ++i) fp += f.maybe_contains("out-" + std::to_string(i)) ? 1 : 0;
  const double rate = fp / 50000.0;
  const double predicted = predicted_fpr(params.m, params.k, 20000);
  // Binomial sd at 50k draws is about 0.0006; allow a generous 5 sd.
  EXPECT_NEAR(rate, predicted, 0.003);
}

TEST(BloomFilter, ConcurrentInsertsAreAllVisible) {
  BloomFilter f(size_for(40000, 0.01));
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < 10000; ++i) f.insert(std::to_string(t) + ":" + std::to_string(i));
    });
  }
  for (auto& th : threads) th.join();
  for (int t = 0; t < 4; ++t) {
    for (int i = 0; i < 10000; ++i) {
      ASSERT_TRUE(f.maybe_contains(std::to_string(t) + ":" + std::to_string(i)));
    }
  }
}
