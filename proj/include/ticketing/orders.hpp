#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "ticketing/aes.hpp"
#include "ticketing/idgen.hpp"
#include "ticketing/inventory.hpp"
#include "ticketing/recordstore.hpp"
#include "ticketing/shardrouter.hpp"

namespace ticketing::orders {

enum class OrderStatus { kPendingPayment, kPaid, kCancelled, kClosed };
std::string_view to_string(OrderStatus status);
std::optional<OrderStatus> parse_order_status(std::string_view text);
bool is_terminal(OrderStatus status);
bool is_legal_transition(OrderStatus from, OrderStatus to);

enum class TicketType { kAdult, kChild, kStudent };
std::string_view to_string(TicketType type);
std::optional<TicketType> parse_ticket_type(std::string_view text);

struct PassengerInput {
  std::string name;
  std::string id_number;
  TicketType ticket_type = TicketType::kAdult;
};

struct OrderItem {
  aes::EncryptedField passenger_id_number;
  aes::EncryptedField passenger_name;
  inventory::SeatAssignment seat;
  TicketType ticket_type = TicketType::kAdult;
  std::int64_t price_cents = 0;
  bool confirmed = false;  // lock turned into a sold seat on payment
};

struct Order {
  std::string order_no;
  std::uint64_t user_id = 0;
  std::string train_id;
  std::string service_date;
  inventory::SegmentKey segment;
  OrderStatus status = OrderStatus::kPendingPayment;
  std::int64_t created_at_ms = 0;
  std::int64_t close_deadline_ms = 0;
  std::vector<OrderItem> items;
};

// Read model returned by passenger lookups; id numbers are masked.
struct OrderView {
  std::string order_no;
  std::uint64_t user_id = 0;
  std::string train_id;
  std::string service_date;
  inventory::SegmentKey segment;
  OrderStatus status = OrderStatus::kPendingPayment;
  std::int64_t created_at_ms = 0;

  struct Item {
    std::string passenger_name;
    std::string masked_id_number;
    int carriage_no = 0;
    int seat_no = 0;
    TicketType ticket_type = TicketType::kAdult;
    std::int64_t price_cents = 0;
  };
  std::vector<Item> items;
};

// "1234********5678": first four and last four characters kept.
std::string mask_id_number(std::string_view id_number);

// Lowercase hex SHA-256; the passenger routing key.
std::string passenger_digest(std::string_view id_number);

// Snowflake id in decimal followed by the user id's last six digits.
std::string make_order_no(std::uint64_t snowflake_id, std::uint64_t user_id);

// Fare for one passenger: 100 yuan per leg travelled, scaled by ticket type.
std::int64_t fare_cents(std::size_t legs, TicketType type);

class OrderError : public std::runtime_error {
 public:
  enum class Kind {
    kDuplicateSubmission,
    kStaleForm,
    kNotFound,
    kPermission,
    kInvalidTransition,
  };
  OrderError(Kind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// Single-use tokens issued when a purchase form is loaded.
class DedupRegistry {
 public:
  enum class Outcome { kConsumed, kAlreadyConsumed, kExpired, kUnknown };

  explicit DedupRegistry(kv::MonotonicClock clock = kv::steady_now_ms)
      : clock_(std::move(clock)) {}

  std::string issue(std::chrono::milliseconds ttl);
  // Atomically flips unused -> consumed.
  Outcome consume(const std::string& token);
  // Non-consuming check; kConsumed means the token would be accepted now.
  Outcome peek(const std::string& token);
  std::size_t purge_expired();

 private:
  struct Entry {
    bool consumed = false;
    std::int64_t expires_at_ms = 0;
  };
  Outcome check_locked(const std::string& token, std::int64_t now) const;

  kv::MonotonicClock clock_;
  std::mutex mu_;
  std::map<std::string, Entry> tokens_;
};

enum class PaymentResult { kSuccess, kFailure };

struct OrderServiceConfig {
  std::chrono::milliseconds payment_deadline{std::chrono::seconds(600)};
  shard::ShardTopology topology{1, 1};
};

struct ManualRefund {
  std::string order_no;
  std::string callback_id;
};

// Order lifecycle. Transitions on one order are serialized by a per-order
// mutex; pay, cancel and close_expired may race freely.
class OrderService {
 public:
  using WallClock = std::function<std::int64_t()>;

  OrderService(store::RecordStore& store, inventory::SeatInventory& seats,
               idgen::SnowflakeGenerator& ids, aes::FieldCodec codec, DedupRegistry& dedup,
               OrderServiceConfig config, WallClock clock = idgen::system_now_ms);

  // The caller has already been granted tokens and seats for `holds`, one per
  // passenger in the same order. On any error nothing is persisted and the
  // caller still owns the holds.
  Order create_order(std::uint64_t user_id, const std::string& train_id, const std::string& date,
                     const inventory::SegmentKey& segment,
                     const std::vector<PassengerInput>& passengers,
                     const std::vector<inventory::SeatAssignment>& holds,
                     const std::string& dedup_token);

  // Idempotent per callback_id: a replay returns the first response.
  OrderStatus payment_callback(const std::string& order_no, PaymentResult result,
                               const std::string& callback_id);

  OrderStatus cancel_order(const std::string& order_no, std::uint64_t user_id);

  std::vector<std::string> close_expired(std::int64_t now_ms);
  std::vector<std::string> close_expired() { return close_expired(clock_()); }

  std::vector<OrderView> find_orders_by_passenger(const std::string& id_number) const;

  std::optional<Order> get(const std::string& order_no) const;
  // Every status an order has held, in order; used by interleaving audits.
  std::vector<OrderStatus> history(const std::string& order_no) const;
  std::vector<ManualRefund> manual_refunds() const;
  std::vector<std::string> order_numbers() const;

  std::string order_table(const std::string& order_no) const;
  std::string item_table(const std::string& order_no) const;

 private:
  struct Record {
    mutable std::mutex mu;
    Order order;
    std::vector<OrderStatus> history;
  };

  Record* find(const std::string& order_no) const;
  // Releases seats (refunding tokens) then commits the terminal status.
  void release_and_finish(Record& rec, OrderStatus terminal);
  void commit_status(const Order& order, bool confirm_items);

  store::RecordStore& store_;
  inventory::SeatInventory& seats_;
  idgen::SnowflakeGenerator& ids_;
  aes::FieldCodec codec_;
  DedupRegistry& dedup_;
  OrderServiceConfig config_;
  WallClock clock_;

  mutable std::shared_mutex orders_mu_;
  std::map<std::string, std::unique_ptr<Record>> orders_;
  std::multimap<std::int64_t, std::string> deadlines_;  // pending orders only

  mutable std::mutex callbacks_mu_;
  std::map<std::string, OrderStatus> callbacks_;
  std::vector<ManualRefund> manual_refunds_;
};

}  // namespace ticketing::orders
