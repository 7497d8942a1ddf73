#include "ticketing/inventory.hpp"

#include <algorithm>
#include <set>

#include <spdlog/spdlog.h>

namespace ticketing::inventory {

std::optional<std::size_t> TrainPlan::station_index(std::string_view name) const {
  auto it = std::find(stations.begin(), stations.end(), name);
  if (it == stations.end()) return std::nullopt;
  return static_cast<std::size_t>(it - stations.begin());
}

void TrainPlan::validate() const {
  if (train_id.empty() || service_date.empty()) {
    throw std::invalid_argument("train plan needs a train id and a service date");
  }
  if (train_id.find_first_of(":|") != std::string::npos ||
      service_date.find_first_of(":|") != std::string::npos) {
    throw std::invalid_argument("train id and date must not contain ':' or '|'");
  }
  if (stations.size() < 2 || stations.size() > 64) {
    throw std::invalid_argument("train plan needs between 2 and 64 stations");
  }
  std::set<std::string> seen;
  for (const auto& s : stations) {
    if (s.empty() || s.find_first_of("_,:|") != std::string::npos) {
      throw std::invalid_argument("station name '" + s + "' is empty or contains one of _,:|");
    }
    if (!seen.insert(s).second) throw std::invalid_argument("duplicate station '" + s + "'");
  }
  if (carriages.empty()) throw std::invalid_argument("train plan needs at least one carriage");
  std::set<int> numbers;
  for (const auto& c : carriages) {
    if (c.seat_count <= 0) throw std::invalid_argument("carriage needs at least one seat");
    if (!numbers.insert(c.carriage_no).second) {
      throw std::invalid_argument("duplicate carriage " + std::to_string(c.carriage_no));
    }
  }
}

SeatOccupancy empty_occupancy(const TrainPlan& plan) {
  SeatOccupancy occ;
  auto carriages = plan.carriages;
  std::sort(carriages.begin(), carriages.end(),
            [](const auto& a, const auto& b) { return a.carriage_no < b.carriage_no; });
  for (const auto& c : carriages) {
    for (int s = 1; s <= c.seat_count; ++s) occ.seats.push_back({c.carriage_no, s, c.seat_type, 0});
  }
  return occ;
}

std::uint64_t legs_for(const TrainPlan& plan, const SegmentKey& key) {
  const auto d = plan.station_index(key.departure);
  const auto a = plan.station_index(key.arrival);
  if (!d || !a || *d >= *a) {
    throw std::invalid_argument("segment " + key.departure + "->" + key.arrival +
                                " is not a forward segment of train " + plan.train_id);
  }
  return schema::segment_mask(*d, *a);
}

std::int64_t remaining_oracle(const TrainPlan& plan, const SeatOccupancy& occupancy,
                              const SegmentKey& key) {
  std::size_t dep = plan.stations.size();
  std::size_t arr = plan.stations.size();
  for (std::size_t i = 0; i < plan.stations.size(); ++i) {
    if (plan.stations[i] == key.departure) dep = i;
    if (plan.stations[i] == key.arrival) arr = i;
  }
  if (dep >= arr || arr >= plan.stations.size()) return 0;

  std::int64_t count = 0;
  for (const Seat& seat : occupancy.seats) {
    if (seat.seat_type != key.seat_type) continue;
    bool all_free = true;
    for (std::size_t leg = dep; leg < arr; ++leg) {
      if ((seat.legs >> leg) & 1U) {
        all_free = false;
        break;
      }
    }
    if (all_free) ++count;
  }
  return count;
}

std::size_t TokenContainer::init_segment_tokens(const TrainPlan& plan,
                                                const SeatOccupancy& occupancy) {
  std::map<SeatType, std::vector<std::uint64_t>> by_type;
  for (const auto& c : plan.carriages) by_type[c.seat_type];
  for (const auto& seat : occupancy.seats) by_type[seat.seat_type].push_back(seat.legs);

  const auto key = schema::tokens_key(plan.train_id, plan.service_date);
  return cache_.run([&](kv::Commands& c) {
    c.del(key);
    std::size_t written = 0;
    for (const auto& [type, legs] : by_type) {
      for (const auto& [field, count] : schema::derive_remaining(plan.stations, type, legs)) {
        c.hash_set(key, field, count);
        ++written;
      }
    }
    return written;
  });
}

TokenGrant TokenContainer::deduct_tokens(const std::string& train_id, const std::string& date,
                                         const SegmentKey& key, std::int64_t count) {
  if (count < 1) throw std::invalid_argument("token deduction count must be >= 1");
  const auto container = schema::tokens_key(train_id, date);
  return cache_.run([&](kv::Commands& c) {
    if (!c.exists(container)) {
      throw ContainerNotInitializedError("token container " + container + " is not initialized");
    }
    return c.hash_incr_if_at_least(container, key.field(), 0, -count) ? TokenGrant::kGranted
                                                                      : TokenGrant::kRejected;
  });
}

void TokenContainer::refund_tokens(const std::string& train_id, const std::string& date,
                                   const SegmentKey& key, std::int64_t count) {
  cache_.hash_incr(schema::tokens_key(train_id, date), key.field(), count);
}

std::optional<std::int64_t> TokenContainer::tokens(const std::string& train_id,
                                                   const std::string& date,
                                                   const SegmentKey& key) {
  auto v = cache_.hash_get(schema::tokens_key(train_id, date), key.field());
  if (!v) return std::nullopt;
  return std::get<std::int64_t>(*v);
}

void SeatInventory::register_train(const TrainPlan& plan) {
  plan.validate();
  auto st = std::make_unique<TrainState>();
  st->plan = plan;
  st->occupancy = empty_occupancy(plan);

  const std::string seat_table(schema::kSeatTable);
  const std::string train_table(schema::kTrainTable);
  if (!store_.has_table(seat_table)) store_.create_table(seat_table);
  if (!store_.has_table(train_table)) store_.create_table(train_table);

  std::unique_lock lock(trains_mu_);
  const auto id = std::make_pair(plan.train_id, plan.service_date);
  if (trains_.contains(id)) {
    throw std::invalid_argument("train " + plan.train_id + " on " + plan.service_date +
                                " is already registered");
  }

  std::vector<store::Mutation> rows;
  const auto stations = schema::join_stations(plan.stations);
  if (!store_.get(train_table, plan.train_id)) {
    rows.push_back(store::Mutation::insert(train_table, plan.train_id,
                                           {{"train_id", plan.train_id}, {"stations", stations}}));
  }
  for (const auto& seat : st->occupancy.seats) {
    rows.push_back(store::Mutation::insert(
        seat_table,
        schema::seat_primary_key(plan.train_id, plan.service_date, seat.carriage_no, seat.seat_no),
        {{"train_id", plan.train_id},
         {"service_date", plan.service_date},
         {"seat_type", std::string(schema::to_string(seat.seat_type))},
         {"carriage_no", std::int64_t{seat.carriage_no}},
         {"seat_no", std::int64_t{seat.seat_no}},
         {"stations", stations},
         {"legs", schema::format_legs(0, plan.leg_count())}}));
  }
  store_.commit(std::move(rows));
  tokens_.init_segment_tokens(plan, st->occupancy);
  trains_.emplace(id, std::move(st));
}

SeatInventory::TrainState& SeatInventory::state(const std::string& train_id,
                                                const std::string& date) const {
  std::shared_lock lock(trains_mu_);
  auto it = trains_.find({train_id, date});
  if (it == trains_.end()) {
    throw UnknownTrainError("train " + train_id + " does not run on " + date);
  }
  return *it->second;
}

bool SeatInventory::has_train(const std::string& train_id, const std::string& date) const {
  std::shared_lock lock(trains_mu_);
  return trains_.contains({train_id, date});
}

std::optional<TrainPlan> SeatInventory::plan(const std::string& train_id,
                                             const std::string& date) const {
  std::shared_lock lock(trains_mu_);
  auto it = trains_.find({train_id, date});
  if (it == trains_.end()) return std::nullopt;
  return it->second->plan;
}

std::vector<TrainPlan> SeatInventory::plans() const {
  std::shared_lock lock(trains_mu_);
  std::vector<TrainPlan> out;
  for (const auto& [id, st] : trains_) out.push_back(st->plan);
  return out;
}

store::Mutation SeatInventory::seat_update(const TrainState& st, const Seat& seat) const {
  return store::Mutation::update(
      std::string(schema::kSeatTable),
      schema::seat_primary_key(st.plan.train_id, st.plan.service_date, seat.carriage_no,
                               seat.seat_no),
      {{"legs", schema::format_legs(seat.legs, st.plan.leg_count())}});
}

std::variant<std::vector<SeatAssignment>, SoldOut> SeatInventory::allocate_seats(
    const std::string& train_id, const std::string& date, const SegmentKey& key, int count,
    const std::vector<SeatPreference>& preference) {
  if (count < 1) throw std::invalid_argument("seat count must be >= 1");
  TrainState& st = state(train_id, date);
  const std::uint64_t need = legs_for(st.plan, key);

  std::lock_guard lock(st.mu);
  auto& seats = st.occupancy.seats;
  auto qualifies = [&](const Seat& s) {
    return s.seat_type == key.seat_type && (s.legs & need) == 0;
  };

  std::vector<std::size_t> chosen;
  for (const auto& pref : preference) {
    if (static_cast<int>(chosen.size()) == count) break;
    for (std::size_t i = 0; i < seats.size(); ++i) {
      if (seats[i].carriage_no == pref.carriage_no && seats[i].seat_no == pref.seat_no &&
          qualifies(seats[i]) && std::find(chosen.begin(), chosen.end(), i) == chosen.end()) {
        chosen.push_back(i);
        break;
      }
    }
  }
  for (std::size_t i = 0; i < seats.size() && static_cast<int>(chosen.size()) < count; ++i) {
    if (qualifies(seats[i]) && std::find(chosen.begin(), chosen.end(), i) == chosen.end()) {
      chosen.push_back(i);
    }
  }
  if (static_cast<int>(chosen.size()) < count) {
    alarms_.fetch_add(1);
    spdlog::warn("tokens granted but seats exhausted for {} {} {}; refunding", train_id, date,
                 key.field());
    return SoldOut{};
  }

  std::vector<store::Mutation> mutations;
  for (auto i : chosen) {
    Seat updated = seats[i];
    updated.legs |= need;
    mutations.push_back(seat_update(st, updated));
  }
  store_.commit(std::move(mutations));

  std::vector<SeatAssignment> out;
  for (auto i : chosen) {
    seats[i].legs |= need;
    SeatAssignment a{next_hold_.fetch_add(1), seats[i].carriage_no, seats[i].seat_no,
                     seats[i].seat_type, need};
    st.holds.emplace(a.hold_id, a);
    out.push_back(a);
  }
  return out;
}

std::size_t SeatInventory::release_seats(const std::string& train_id, const std::string& date,
                                         const std::vector<SeatAssignment>& assignments,
                                         const SegmentKey& key) {
  TrainState& st = state(train_id, date);
  std::lock_guard lock(st.mu);

  std::vector<SeatAssignment> live;
  for (const auto& a : assignments) {
    if (st.holds.contains(a.hold_id)) live.push_back(st.holds.at(a.hold_id));
  }
  if (live.empty()) return 0;

  auto& seats = st.occupancy.seats;
  auto find_seat = [&](const SeatAssignment& a) -> Seat& {
    for (auto& s : seats) {
      if (s.carriage_no == a.carriage_no && s.seat_no == a.seat_no) return s;
    }
    throw std::logic_error("hold refers to an unknown seat");
  };

  // Several holds in one release may share a seat; fold them first.
  std::map<std::pair<int, int>, Seat> updated;
  for (const auto& a : live) {
    auto [it, fresh] = updated.try_emplace({a.carriage_no, a.seat_no}, find_seat(a));
    it->second.legs &= ~a.legs;
  }
  std::vector<store::Mutation> mutations;
  for (const auto& [pos, seat] : updated) mutations.push_back(seat_update(st, seat));
  store_.commit(std::move(mutations));

  for (const auto& [pos, seat] : updated) find_seat({0, pos.first, pos.second}) = seat;
  for (const auto& a : live) st.holds.erase(a.hold_id);
  tokens_.refund_tokens(train_id, date, key, static_cast<std::int64_t>(live.size()));
  return live.size();
}

SeatOccupancy SeatInventory::occupancy(const std::string& train_id,
                                       const std::string& date) const {
  TrainState& st = state(train_id, date);
  std::lock_guard lock(st.mu);
  return st.occupancy;
}

std::vector<SeatAssignment> SeatInventory::active_holds(const std::string& train_id,
                                                        const std::string& date) const {
  TrainState& st = state(train_id, date);
  std::lock_guard lock(st.mu);
  std::vector<SeatAssignment> out;
  for (const auto& [id, a] : st.holds) out.push_back(a);
  return out;
}

}  // namespace ticketing::inventory
