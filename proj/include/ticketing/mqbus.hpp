#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include "ticketing/kvcache.hpp"

namespace ticketing::mq {

struct BusMessage {
  std::string topic;
  std::uint64_t offset = 0;
  std::string payload;
  std::int64_t enqueue_time_ms = 0;
};

// Topic-based pull bus. Each topic keeps every message; each consumer group
// tracks its own acks. A polled message is hidden from its group until the
// visibility timeout passes, after which it is delivered again unless acked.
class MessageBus {
 public:
  explicit MessageBus(kv::MonotonicClock clock = kv::steady_now_ms) : clock_(std::move(clock)) {}

  MessageBus(const MessageBus&) = delete;
  MessageBus& operator=(const MessageBus&) = delete;

  std::uint64_t publish(const std::string& topic, std::string payload);

  std::vector<BusMessage> poll(const std::string& topic, const std::string& group,
                               std::size_t max, std::chrono::milliseconds visibility_timeout);

  // Unknown offsets are ignored.
  void ack(const std::string& topic, const std::string& group, std::uint64_t offset);

  // Messages the group has not acked yet, in flight or not.
  std::size_t unacked(const std::string& topic, const std::string& group);
  std::uint64_t published(const std::string& topic);

 private:
  struct GroupState {
    std::uint64_t ack_floor = 0;  // every offset below this is acked
    std::set<std::uint64_t> acked_above_floor;
    std::map<std::uint64_t, std::int64_t> invisible_until;
  };

  struct Topic {
    std::mutex mu;
    std::vector<BusMessage> messages;
    std::map<std::string, GroupState> groups;
  };

  Topic& topic_for(const std::string& name);

  kv::MonotonicClock clock_;
  std::mutex topics_mu_;
  std::map<std::string, std::unique_ptr<Topic>> topics_;
};

}  // namespace ticketing::mq
