#include "ticketing/mqbus.hpp"

#include <stdexcept>

namespace ticketing::mq {

MessageBus::Topic& MessageBus::topic_for(const std::string& name) {
  std::lock_guard lock(topics_mu_);
  auto& slot = topics_[name];
  if (!slot) slot = std::make_unique<Topic>();
  return *slot;
}

std::uint64_t MessageBus::publish(const std::string& topic, std::string payload) {
  if (topic.empty()) throw std::invalid_argument("mq: topic name must not be empty");
  Topic& t = topic_for(topic);
  std::lock_guard lock(t.mu);
  const auto offset = static_cast<std::uint64_t>(t.messages.size());
  t.messages.push_back({topic, offset, std::move(payload), clock_()});
  return offset;
}

std::vector<BusMessage> MessageBus::poll(const std::string& topic, const std::string& group,
                                         std::size_t max,
                                         std::chrono::milliseconds visibility_timeout) {
  Topic& t = topic_for(topic);
  std::lock_guard lock(t.mu);
  GroupState& g = t.groups[group];
  const std::int64_t now = clock_();

  std::vector<BusMessage> out;
  for (std::uint64_t off = g.ack_floor; off < t.messages.size() && out.size() < max; ++off) {
    if (g.acked_above_floor.contains(off)) continue;
    auto hidden = g.invisible_until.find(off);
    if (hidden != g.invisible_until.end() && now < hidden->second) continue;
    g.invisible_until[off] = now + visibility_timeout.count();
    out.push_back(t.messages[off]);
  }
  return out;
}

void MessageBus::ack(const std::string& topic, const std::string& group, std::uint64_t offset) {
  Topic& t = topic_for(topic);
  std::lock_guard lock(t.mu);
  if (offset >= t.messages.size()) return;
  GroupState& g = t.groups[group];
  if (offset < g.ack_floor) return;
  g.invisible_until.erase(offset);
  g.acked_above_floor.insert(offset);
  while (g.acked_above_floor.erase(g.ack_floor) > 0) ++g.ack_floor;
}

std::size_t MessageBus::unacked(const std::string& topic, const std::string& group) {
  Topic& t = topic_for(topic);
  std::lock_guard lock(t.mu);
  GroupState& g = t.groups[group];
  return t.messages.size() - g.ack_floor - g.acked_above_floor.size();
}

std::uint64_t MessageBus::published(const std::string& topic) {
  Topic& t = topic_for(topic);
  std::lock_guard lock(t.mu);
  return t.messages.size();
}

}  // namespace ticketing::mq
