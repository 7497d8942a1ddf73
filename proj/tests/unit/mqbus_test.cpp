#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <thread>

#include "ticketing/mqbus.hpp"

using namespace ticketing::mq;
using namespace std::chrono_literals;

namespace {
struct ManualClock {
  std::shared_ptr<std::int64_t> now = std::make_shared<std::int64_t>(0);
  std::int64_t operator()() const { return *now; }
};
}  // namespace

TEST(MessageBus, OffsetsAreDenseFromZero) {
  MessageBus bus;
  EXPECT_EQ(bus.publish("t", "a"), 0u);
  EXPECT_EQ(bus.publish("t", "b"), 1u);
  EXPECT_EQ(bus.publish("u", "c"), 0u);
  EXPECT_EQ(bus.published("t"), 2u);
  EXPECT_THROW(bus.publish("", "x"), std::invalid_argument);
}

TEST(MessageBus, UnackedMessagesReappearAfterVisibilityTimeout) {
  ManualClock clock;
  MessageBus bus(clock);
  bus.publish("t", "a");
  bus.publish("t", "b");
  auto first = bus.poll("t", "g", 10, 100ms);
  ASSERT_EQ(first.size(), 2u);
  EXPECT_TRUE(bus.poll("t", "g", 10, 100ms).empty());
  bus.ack("t", "g", 0);
  *clock.now = 100;
  auto again = bus.poll("t", "g", 10, 100ms);
  ASSERT_EQ(again.size(), 1u);
  EXPECT_EQ(again[0].payload, "b");
  EXPECT_EQ(bus.unacked("t", "g"), 1u);
  bus.ack("t", "g", 1);
  EXPECT_EQ(bus.unacked("t", "g"), 0u);
}

TEST(MessageBus, GroupsAreIndependent) {
  MessageBus bus;
  bus.publish("t", "a");
  EXPECT_EQ(bus.poll("t", "g1", 10, 1s).size(), 1u);
  EXPECT_EQ(bus.poll("t", "g2", 10, 1s).size(), 1u);
  bus.ack("t", "g1", 0);
  EXPECT_EQ(bus.unacked("t", "g1"), 0u);
  EXPECT_EQ(bus.unacked("t", "g2"), 1u);
}

TEST(MessageBus, OutOfOrderAcksAndUnknownOffsets) {
  MessageBus bus;
  for (int i = 0; i < 5; ++i) bus.publish("t", std::to_string(i));
  bus.poll("t", "g", 10, 1s);
  bus.ack("t", "g", 3);
  bus.ack("t", "g", 1);
  bus.ack("t", "g", 99);
  bus.ack("t", "g", 3);
  EXPECT_EQ(bus.unacked("t", "g"), 3u);
  bus.ack("t", "g", 0);
  bus.ack("t", "g", 2);
  bus.ack("t", "g", 4);
  EXPECT_EQ(bus.unacked("t", "g"), 0u);
}

TEST(MessageBus, PollRespectsMaxAndOrder) {
  MessageBus bus;
  for (int i = 0; i < 10; ++i) bus.publish("t", std::to_string(i));
  auto batch = bus.poll("t", "g", 4, 1s);
  ASSERT_EQ(batch.size(), 4u);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(batch[i].offset, static_cast<std::uint64_t>(i));
  batch = bus.poll("t", "g", 100, 1s);
  EXPECT_EQ(batch.front().offset, 4u);
  EXPECT_EQ(batch.size(), 6u);
}

TEST(MessageBus, EveryMessageDeliveredAtLeastOnceUnderConcurrency) {
  MessageBus bus;
  constexpr int kMessages = 20000;
  std::thread producer([&] {
    for (int i = 0; i < kMessages; ++i) bus.publish("t", std::to_string(i));
  });
  std::set<std::string> seen;
  int idle = 0;
  while (static_cast<int>(seen.size()) < kMessages && idle < 100000) {
    auto batch = bus.poll("t", "g", 256, 1s);
    if (batch.empty()) {
      ++idle;
      std::this_thread::yield();
    }
    for (const auto& m : batch) {
      seen.insert(m.payload);
      bus.ack("t", "g", m.offset);
    }
  }
  producer.join();
  EXPECT_EQ(seen.size(), static_cast<std::size_t>(kMessages));
  EXPECT_EQ(bus.unacked("t", "g"), 0u);
}

TEST(MessageBus, ConcurrentPublishersGetDenseOffsets) {
  MessageBus bus;
  std::vector<std::vector<std::uint64_t>> got(4);
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < 2500; ++i) got[t].push_back(bus.publish("t", "m"));
    });
  }
  for (auto& th : threads) th.join();
  std::vector<std::uint64_t> all;
  for (const auto& v : got) all.insert(all.end(), v.begin(), v.end());
  std::sort(all.begin(), all.end());
  ASSERT_EQ(all.size(), 10000u);
  for (std::uint64_t i = 0; i < all.size(); ++i) ASSERT_EQ(all[i], i);
}

TEST(MessageBus, EmptyTopicAndAckedMessages) {
  MessageBus bus;
  EXPECT_TRUE(bus.poll("none", "g", 10, 1s).empty());
  bus.publish("t", "a");
  bus.publish("t", "b");
  bus.ack("t", "g", 1);
  auto batch = bus.poll("t", "g", 10, 1s);
  ASSERT_EQ(batch.size(), 1u);
  EXPECT_EQ(batch[0].payload, "a");
}
