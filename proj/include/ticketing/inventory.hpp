#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "ticketing/kvcache.hpp"
#include "ticketing/recordstore.hpp"
#include "ticketing/schema.hpp"

namespace ticketing::inventory {

using schema::SeatType;

struct CarriageSpec {
  int carriage_no = 0;
  SeatType seat_type = SeatType::kSecond;
  int seat_count = 0;
};

struct TrainPlan {
  std::string train_id;
  std::string service_date;  // YYYY-MM-DD
  std::vector<std::string> stations;
  std::vector<CarriageSpec> carriages;

  std::size_t leg_count() const { return stations.size() - 1; }
  std::optional<std::size_t> station_index(std::string_view name) const;
  // Throws std::invalid_argument on an unusable plan.
  void validate() const;
};

struct SegmentKey {
  std::string departure;
  std::string arrival;
  SeatType seat_type = SeatType::kSecond;

  std::string field() const { return schema::segment_field(departure, arrival, seat_type); }
  bool operator==(const SegmentKey&) const = default;
};

struct Seat {
  int carriage_no = 0;
  int seat_no = 0;
  SeatType seat_type = SeatType::kSecond;
  std::uint64_t legs = 0;  // bit i set: leg i occupied or locked

  bool operator==(const Seat&) const = default;
};

// Seats ordered by (carriage_no, seat_no).
struct SeatOccupancy {
  std::vector<Seat> seats;
  bool operator==(const SeatOccupancy&) const = default;
};

SeatOccupancy empty_occupancy(const TrainPlan& plan);

// Legs d..a-1 of `key` on `plan`; throws if the key does not fit the plan.
std::uint64_t legs_for(const TrainPlan& plan, const SegmentKey& key);

// Brute-force count of seats of key.seat_type whose legs d..a-1 are all free.
// Kept deliberately naive: it is the reference the allocator and the cache
// are checked against.
std::int64_t remaining_oracle(const TrainPlan& plan, const SeatOccupancy& occupancy,
                              const SegmentKey& key);

class ContainerNotInitializedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TokenGrant { kGranted, kRejected };

// Remaining-ticket tokens in the cache hash "tokens:<train_id>:<date>".
class TokenContainer {
 public:
  explicit TokenContainer(kv::KvCache& cache) : cache_(cache) {}

  // Rewrites the container from the occupancy; returns fields written.
  std::size_t init_segment_tokens(const TrainPlan& plan, const SeatOccupancy& occupancy);

  // One conditional decrement of `count` on the key's own field, floor 0.
  TokenGrant deduct_tokens(const std::string& train_id, const std::string& date,
                           const SegmentKey& key, std::int64_t count);
  void refund_tokens(const std::string& train_id, const std::string& date, const SegmentKey& key,
                     std::int64_t count);
  std::optional<std::int64_t> tokens(const std::string& train_id, const std::string& date,
                                     const SegmentKey& key);

 private:
  kv::KvCache& cache_;
};

struct SeatAssignment {
  std::uint64_t hold_id = 0;
  int carriage_no = 0;
  int seat_no = 0;
  SeatType seat_type = SeatType::kSecond;
  std::uint64_t legs = 0;
};

struct SoldOut {};

struct SeatPreference {
  int carriage_no = 0;
  int seat_no = 0;
};

// Seat-level source of truth. Every change is committed to the record store
// as an UPDATE of the seat row, which CDC turns into cache updates.
// Allocation and release are serialized per train-date.
class SeatInventory {
 public:
  SeatInventory(store::RecordStore& store, TokenContainer& tokens)
      : store_(store), tokens_(tokens) {}

  // Creates seat rows (and the train row if new) and fills the token
  // container. Throws if the train-date already exists.
  void register_train(const TrainPlan& plan);

  bool has_train(const std::string& train_id, const std::string& date) const;
  std::optional<TrainPlan> plan(const std::string& train_id, const std::string& date) const;
  std::vector<TrainPlan> plans() const;

  std::variant<std::vector<SeatAssignment>, SoldOut> allocate_seats(
      const std::string& train_id, const std::string& date, const SegmentKey& key, int count,
      const std::vector<SeatPreference>& preference = {});

  // Clears the legs of holds that are still active and refunds tokens for
  // them. Holds released earlier are ignored. Returns how many were released.
  std::size_t release_seats(const std::string& train_id, const std::string& date,
                            const std::vector<SeatAssignment>& assignments,
                            const SegmentKey& key);

  SeatOccupancy occupancy(const std::string& train_id, const std::string& date) const;

  // Active holds per seat, for overlap audits.
  std::vector<SeatAssignment> active_holds(const std::string& train_id,
                                           const std::string& date) const;

  std::uint64_t oversell_alarms() const { return alarms_.load(); }

 private:
  struct TrainState {
    TrainPlan plan;
    mutable std::mutex mu;
    SeatOccupancy occupancy;
    std::map<std::uint64_t, SeatAssignment> holds;
  };

  TrainState& state(const std::string& train_id, const std::string& date) const;
  store::Mutation seat_update(const TrainState& st, const Seat& seat) const;

  store::RecordStore& store_;
  TokenContainer& tokens_;
  mutable std::shared_mutex trains_mu_;
  std::map<std::pair<std::string, std::string>, std::unique_ptr<TrainState>> trains_;
  std::atomic<std::uint64_t> next_hold_{1};
  std::atomic<std::uint64_t> alarms_{0};
};

class UnknownTrainError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

}  // namespace ticketing::inventory
