#include "ticketing/orders.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>
#include <random>

namespace ticketing::orders {

namespace {

constexpr std::string_view kStatusNames[] = {"PENDING_PAYMENT", "PAID", "CANCELLED", "CLOSED"};
constexpr std::string_view kTicketNames[] = {"adult", "child", "student"};

std::string item_pk(const std::string& order_no, std::size_t index) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "%03zu", index);
  return order_no + "#" + buf;
}

}  // namespace

std::string_view to_string(OrderStatus status) {
  return kStatusNames[static_cast<int>(status)];
}

std::optional<OrderStatus> parse_order_status(std::string_view text) {
  for (int i = 0; i < 4; ++i) {
    if (kStatusNames[i] == text) return static_cast<OrderStatus>(i);
  }
  return std::nullopt;
}

bool is_terminal(OrderStatus status) { return status != OrderStatus::kPendingPayment; }

bool is_legal_transition(OrderStatus from, OrderStatus to) {
  return from == OrderStatus::kPendingPayment && to != OrderStatus::kPendingPayment;
}

std::string_view to_string(TicketType type) { return kTicketNames[static_cast<int>(type)]; }

std::optional<TicketType> parse_ticket_type(std::string_view text) {
  for (int i = 0; i < 3; ++i) {
    if (kTicketNames[i] == text) return static_cast<TicketType>(i);
  }
  return std::nullopt;
}

std::string mask_id_number(std::string_view id_number) {
  if (id_number.size() <= 8) return std::string(id_number.size(), '*');
  return std::string(id_number.substr(0, 4)) + std::string(id_number.size() - 8, '*') +
         std::string(id_number.substr(id_number.size() - 4));
}

std::string passenger_digest(std::string_view id_number) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(id_number.data(), id_number.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 digest failed");
  }
  return aes::to_hex({md, len});
}

std::string make_order_no(std::uint64_t snowflake_id, std::uint64_t user_id) {
  char suffix[8];
  std::snprintf(suffix, sizeof suffix, "%06llu",
                static_cast<unsigned long long>(user_id % 1000000ULL));
  return std::to_string(snowflake_id) + suffix;
}

std::int64_t fare_cents(std::size_t legs, TicketType type) {
  const std::int64_t base = static_cast<std::int64_t>(legs) * 10000;
  switch (type) {
    case TicketType::kAdult: return base;
    case TicketType::kChild: return base / 2;
    case TicketType::kStudent: return base * 3 / 4;
  }
  return base;
}

std::string DedupRegistry::issue(std::chrono::milliseconds ttl) {
  static thread_local std::mt19937_64 rng{std::random_device{}()};
  char buf[33];
  std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(rng()),
                static_cast<unsigned long long>(rng()));
  const auto now = clock_();
  std::lock_guard lock(mu_);
  tokens_[buf] = Entry{false, now + ttl.count()};
  return buf;
}

DedupRegistry::Outcome DedupRegistry::check_locked(const std::string& token,
                                                   std::int64_t now) const {
  auto it = tokens_.find(token);
  if (it == tokens_.end()) return Outcome::kUnknown;
  if (it->second.consumed) return Outcome::kAlreadyConsumed;
  if (now >= it->second.expires_at_ms) return Outcome::kExpired;
  return Outcome::kConsumed;
}

DedupRegistry::Outcome DedupRegistry::consume(const std::string& token) {
  const auto now = clock_();
  std::lock_guard lock(mu_);
  const auto outcome = check_locked(token, now);
  if (outcome == Outcome::kConsumed) tokens_[token].consumed = true;
  return outcome;
}

DedupRegistry::Outcome DedupRegistry::peek(const std::string& token) {
  const auto now = clock_();
  std::lock_guard lock(mu_);
  return check_locked(token, now);
}

std::size_t DedupRegistry::purge_expired() {
  const auto now = clock_();
  std::lock_guard lock(mu_);
  return std::erase_if(tokens_, [&](const auto& kv) { return now >= kv.second.expires_at_ms; });
}

OrderService::OrderService(store::RecordStore& store, inventory::SeatInventory& seats,
                           idgen::SnowflakeGenerator& ids, aes::FieldCodec codec,
                           DedupRegistry& dedup, OrderServiceConfig config, WallClock clock)
    : store_(store),
      seats_(seats),
      ids_(ids),
      codec_(std::move(codec)),
      dedup_(dedup),
      config_(config),
      clock_(std::move(clock)) {
  config_.topology.validate();
  for (std::uint32_t db = 0; db < config_.topology.db_count; ++db) {
    for (std::uint32_t t = 0; t < config_.topology.tables_per_db; ++t) {
      for (std::string_view logical : {schema::kOrderTable, schema::kOrderItemTable}) {
        auto name = shard::physical_table(logical, {db, t});
        if (!store_.has_table(name)) store_.create_table(name, std::string(logical));
      }
    }
  }
  for (std::string_view name : {schema::kPassengerRouteTable, schema::kPayTable}) {
    if (!store_.has_table(std::string(name))) store_.create_table(std::string(name));
  }
}

std::string OrderService::order_table(const std::string& order_no) const {
  return shard::physical_table(schema::kOrderTable,
                               shard::route_by_trailing_digits(order_no, config_.topology));
}

std::string OrderService::item_table(const std::string& order_no) const {
  return shard::physical_table(schema::kOrderItemTable,
                               shard::route_by_trailing_digits(order_no, config_.topology));
}

Order OrderService::create_order(std::uint64_t user_id, const std::string& train_id,
                                 const std::string& date, const inventory::SegmentKey& segment,
                                 const std::vector<PassengerInput>& passengers,
                                 const std::vector<inventory::SeatAssignment>& holds,
                                 const std::string& dedup_token) {
  if (passengers.empty()) throw std::invalid_argument("an order needs at least one passenger");
  if (holds.size() != passengers.size()) {
    throw std::invalid_argument("one seat assignment per passenger is required");
  }
  for (const auto& p : passengers) {
    if (p.name.empty() || p.id_number.empty()) {
      throw std::invalid_argument("passenger name and id number are required");
    }
  }

  switch (dedup_.consume(dedup_token)) {
    case DedupRegistry::Outcome::kConsumed: break;
    case DedupRegistry::Outcome::kAlreadyConsumed:
      throw OrderError(OrderError::Kind::kDuplicateSubmission,
                       "purchase form was already submitted");
    case DedupRegistry::Outcome::kExpired:
    case DedupRegistry::Outcome::kUnknown:
      throw OrderError(OrderError::Kind::kStaleForm, "purchase form expired; reload it");
  }

  Order order;
  order.order_no = make_order_no(ids_.next_id(), user_id);
  order.user_id = user_id;
  order.train_id = train_id;
  order.service_date = date;
  order.segment = segment;
  order.created_at_ms = clock_();
  order.close_deadline_ms = order.created_at_ms + config_.payment_deadline.count();

  const auto legs = static_cast<std::size_t>(std::popcount(holds.front().legs));
  std::vector<store::Mutation> rows;
  rows.push_back(store::Mutation::insert(
      order_table(order.order_no), order.order_no,
      {{"order_no", order.order_no},
       {"user_id", static_cast<std::int64_t>(user_id)},
       {"train_id", train_id},
       {"service_date", date},
       {"departure", segment.departure},
       {"arrival", segment.arrival},
       {"seat_type", std::string(schema::to_string(segment.seat_type))},
       {"status", std::string(to_string(order.status))},
       {"created_at", order.created_at_ms},
       {"close_deadline", order.close_deadline_ms}}));

  const auto items_table = item_table(order.order_no);
  for (std::size_t i = 0; i < passengers.size(); ++i) {
    const auto& p = passengers[i];
    OrderItem item;
    item.passenger_id_number = codec_.encode(p.id_number);
    item.passenger_name = codec_.encode(p.name);
    item.seat = holds[i];
    item.ticket_type = p.ticket_type;
    item.price_cents = fare_cents(legs, p.ticket_type);
    rows.push_back(store::Mutation::insert(
        items_table, item_pk(order.order_no, i),
        {{"order_no", order.order_no},
         {"passenger_id_number", item.passenger_id_number.hex()},
         {"passenger_name", item.passenger_name.hex()},
         {"carriage_no", std::int64_t{item.seat.carriage_no}},
         {"seat_no", std::int64_t{item.seat.seat_no}},
         {"ticket_type", std::string(to_string(item.ticket_type))},
         {"price_cents", item.price_cents},
         {"confirmed", std::int64_t{0}}}));
    rows.push_back(store::Mutation::insert(
        std::string(schema::kPassengerRouteTable),
        passenger_digest(p.id_number) + "#" + order.order_no,
        {{"order_no", order.order_no}}));
    order.items.push_back(std::move(item));
  }
  store_.commit(std::move(rows));

  auto rec = std::make_unique<Record>();
  rec->order = order;
  rec->history.push_back(order.status);
  std::unique_lock lock(orders_mu_);
  deadlines_.emplace(order.close_deadline_ms, order.order_no);
  orders_.emplace(order.order_no, std::move(rec));
  return order;
}

OrderService::Record* OrderService::find(const std::string& order_no) const {
  std::shared_lock lock(orders_mu_);
  auto it = orders_.find(order_no);
  return it == orders_.end() ? nullptr : it->second.get();
}

void OrderService::commit_status(const Order& order, bool confirm_items) {
  std::vector<store::Mutation> rows;
  rows.push_back(store::Mutation::update(order_table(order.order_no), order.order_no,
                                         {{"status", std::string(to_string(order.status))}}));
  if (confirm_items) {
    const auto items_table = item_table(order.order_no);
    for (std::size_t i = 0; i < order.items.size(); ++i) {
      rows.push_back(store::Mutation::update(items_table, item_pk(order.order_no, i),
                                             {{"confirmed", std::int64_t{1}}}));
    }
  }
  store_.commit(std::move(rows));
}

void OrderService::release_and_finish(Record& rec, OrderStatus terminal) {
  Order& order = rec.order;
  std::vector<inventory::SeatAssignment> holds;
  for (const auto& item : order.items) holds.push_back(item.seat);
  seats_.release_seats(order.train_id, order.service_date, holds, order.segment);
  order.status = terminal;
  commit_status(order, false);
  rec.history.push_back(terminal);
}

OrderStatus OrderService::payment_callback(const std::string& order_no, PaymentResult result,
                                           const std::string& callback_id) {
  Record* rec = find(order_no);
  if (!rec) throw OrderError(OrderError::Kind::kNotFound, "order " + order_no + " not found");

  std::lock_guard order_lock(rec->mu);
  {
    std::lock_guard lock(callbacks_mu_);
    if (auto it = callbacks_.find(callback_id); it != callbacks_.end()) return it->second;
  }

  Order& order = rec->order;
  if (result == PaymentResult::kSuccess) {
    if (order.status == OrderStatus::kPendingPayment) {
      order.status = OrderStatus::kPaid;
      for (auto& item : order.items) item.confirmed = true;
      commit_status(order, true);
      rec->history.push_back(OrderStatus::kPaid);
    } else if (order.status != OrderStatus::kPaid) {
      std::lock_guard lock(callbacks_mu_);
      manual_refunds_.push_back({order_no, callback_id});
    }
  }
  std::lock_guard lock(callbacks_mu_);
  callbacks_.emplace(callback_id, order.status);
  return order.status;
}

OrderStatus OrderService::cancel_order(const std::string& order_no, std::uint64_t user_id) {
  Record* rec = find(order_no);
  if (!rec) throw OrderError(OrderError::Kind::kNotFound, "order " + order_no + " not found");

  std::lock_guard lock(rec->mu);
  if (rec->order.user_id != user_id) {
    throw OrderError(OrderError::Kind::kPermission, "order " + order_no + " belongs to another user");
  }
  if (rec->order.status != OrderStatus::kPendingPayment) {
    throw OrderError(OrderError::Kind::kInvalidTransition,
                     "order " + order_no + " is already " + std::string(to_string(rec->order.status)));
  }
  release_and_finish(*rec, OrderStatus::kCancelled);
  return rec->order.status;
}

std::vector<std::string> OrderService::close_expired(std::int64_t now_ms) {
  std::vector<std::string> due;
  {
    std::unique_lock lock(orders_mu_);
    auto end = deadlines_.upper_bound(now_ms);
    for (auto it = deadlines_.begin(); it != end; ++it) due.push_back(it->second);
    deadlines_.erase(deadlines_.begin(), end);
  }

  std::vector<std::string> closed;
  for (const auto& order_no : due) {
    Record* rec = find(order_no);
    if (!rec) continue;
    std::lock_guard lock(rec->mu);
    if (rec->order.status != OrderStatus::kPendingPayment) continue;
    release_and_finish(*rec, OrderStatus::kClosed);
    closed.push_back(order_no);
  }
  return closed;
}

std::vector<OrderView> OrderService::find_orders_by_passenger(const std::string& id_number) const {
  std::vector<OrderView> out;
  const auto routes = store_.scan_prefix(std::string(schema::kPassengerRouteTable),
                                         passenger_digest(id_number) + "#");
  for (const auto& route : routes) {
    const auto& order_no = route.text("order_no");
    auto row = store_.get(order_table(order_no), order_no);
    if (!row) continue;

    OrderView view;
    view.order_no = order_no;
    view.user_id = static_cast<std::uint64_t>(row->integer("user_id"));
    view.train_id = row->text("train_id");
    view.service_date = row->text("service_date");
    view.segment.departure = row->text("departure");
    view.segment.arrival = row->text("arrival");
    view.segment.seat_type = schema::parse_seat_type(row->text("seat_type")).value();
    view.status = parse_order_status(row->text("status")).value();
    view.created_at_ms = row->integer("created_at");

    for (const auto& item : store_.scan_prefix(item_table(order_no), order_no + "#")) {
      OrderView::Item v;
      v.passenger_name =
          codec_.decode(aes::EncryptedField::from_hex(item.text("passenger_name")));
      v.masked_id_number = mask_id_number(
          codec_.decode(aes::EncryptedField::from_hex(item.text("passenger_id_number"))));
      v.carriage_no = static_cast<int>(item.integer("carriage_no"));
      v.seat_no = static_cast<int>(item.integer("seat_no"));
      v.ticket_type = parse_ticket_type(item.text("ticket_type")).value();
      v.price_cents = item.integer("price_cents");
      view.items.push_back(std::move(v));
    }
    out.push_back(std::move(view));
  }
  std::sort(out.begin(), out.end(), [](const OrderView& a, const OrderView& b) {
    if (a.created_at_ms != b.created_at_ms) return a.created_at_ms > b.created_at_ms;
    return a.order_no > b.order_no;
  });
  return out;
}

std::optional<Order> OrderService::get(const std::string& order_no) const {
  Record* rec = find(order_no);
  if (!rec) return std::nullopt;
  std::lock_guard lock(rec->mu);
  return rec->order;
}

std::vector<OrderStatus> OrderService::history(const std::string& order_no) const {
  Record* rec = find(order_no);
  if (!rec) return {};
  std::lock_guard lock(rec->mu);
  return rec->history;
}

std::vector<ManualRefund> OrderService::manual_refunds() const {
  std::lock_guard lock(callbacks_mu_);
  return manual_refunds_;
}

std::vector<std::string> OrderService::order_numbers() const {
  std::shared_lock lock(orders_mu_);
  std::vector<std::string> out;
  for (const auto& [no, rec] : orders_) out.push_back(no);
  return out;
}

}  // namespace ticketing::orders
