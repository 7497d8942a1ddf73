#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "ticketing/kvcache.hpp"
#include "ticketing/mqbus.hpp"

namespace ticketing::store {

using Scalar = std::variant<std::int64_t, std::string>;
using Columns = std::map<std::string, Scalar>;

// Images carried by change events hold the row's columns plus these two.
inline constexpr const char* kPkColumn = "pk";
inline constexpr const char* kVersionColumn = "version";

struct TableRow {
  std::string table;
  std::string primary_key;
  Columns columns;
  std::int64_t version = 0;

  std::int64_t integer(const std::string& column) const;
  const std::string& text(const std::string& column) const;
};

enum class ChangeOp { kInsert, kUpdate, kDelete };
std::string_view to_string(ChangeOp op);

struct ChangeEvent {
  std::uint64_t sequence = 0;
  std::string table;
  ChangeOp op = ChangeOp::kInsert;
  std::optional<Columns> before;
  std::optional<Columns> after;
  std::int64_t commit_time_ms = 0;
};

// {"seq":int,"table":str,"op":"INSERT|UPDATE|DELETE","before":obj|null,"after":obj|null,"ts":int}
std::string to_cdc_json(const ChangeEvent& event);

class MalformedEventError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
ChangeEvent parse_cdc_json(std::string_view json);

struct Mutation {
  ChangeOp kind = ChangeOp::kInsert;
  std::string table;
  std::string primary_key;
  Columns columns;  // full row for inserts; changed columns for updates

  static Mutation insert(std::string table, std::string pk, Columns columns) {
    return {ChangeOp::kInsert, std::move(table), std::move(pk), std::move(columns)};
  }
  static Mutation update(std::string table, std::string pk, Columns columns) {
    return {ChangeOp::kUpdate, std::move(table), std::move(pk), std::move(columns)};
  }
  static Mutation remove(std::string table, std::string pk) {
    return {ChangeOp::kDelete, std::move(table), std::move(pk), {}};
  }
};

class CommitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tables of versioned rows. Every commit is atomic and appends one
// ChangeEvent per mutation to the change log, in commit order.
class RecordStore {
 public:
  using WallClock = std::function<std::int64_t()>;

  RecordStore();
  explicit RecordStore(WallClock clock);
  ~RecordStore();

  RecordStore(const RecordStore&) = delete;
  RecordStore& operator=(const RecordStore&) = delete;

  // `logical` defaults to `name`; shards of one logical table share it.
  void create_table(const std::string& name, std::string logical = {});
  bool has_table(const std::string& name) const;
  std::string logical_name(const std::string& table) const;
  std::vector<std::string> tables_of(const std::string& logical) const;

  std::vector<ChangeEvent> commit(std::vector<Mutation> mutations);

  std::optional<TableRow> get(const std::string& table, const std::string& pk) const;
  std::vector<TableRow> scan(const std::string& table) const;
  std::vector<TableRow> scan_logical(const std::string& logical) const;
  // Rows whose primary key starts with `prefix`, in key order.
  std::vector<TableRow> scan_prefix(const std::string& table, const std::string& prefix) const;

  // Events with sequence >= from_sequence, at most `max` of them.
  std::vector<ChangeEvent> changes_since(std::uint64_t from_sequence, std::size_t max) const;
  std::uint64_t last_sequence() const;

  // Replays an existing change-log file (tables must already exist), then
  // appends every later commit to it as one JSON line.
  void attach_log_file(const std::filesystem::path& path);

 private:
  struct Table {
    std::string logical;
    std::map<std::string, TableRow> rows;
    std::unordered_map<std::string, std::int64_t> retired_versions;  // deleted keys
  };

  void apply_locked(const ChangeEvent& event);

  WallClock clock_;
  mutable std::shared_mutex mu_;
  std::map<std::string, Table> tables_;
  std::vector<ChangeEvent> log_;
  std::ofstream log_file_;
};

// Moves change events onto the bus, topic "cdc.<logical table>".
class CdcPump {
 public:
  CdcPump(const RecordStore& store, mq::MessageBus& bus) : store_(store), bus_(bus) {}

  // Publishes every unpumped event whose logical table is in `filter`;
  // events outside it are skipped. Returns the number published.
  std::size_t pump_changes(const std::set<std::string>& filter);
  std::uint64_t position() const;

 private:
  const RecordStore& store_;
  mq::MessageBus& bus_;
  mutable std::mutex mu_;
  std::uint64_t next_sequence_ = 1;
};

enum class ApplyResult { kApplied, kSkippedStale };

class PoisonMessageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Rebuilds cache entries from CDC after-images. Seat events rewrite the
// per-seat leg map and recompute every remaining-ticket field of that seat
// type; other tables are cached whole under cached_row_key(). A per-key
// version guard makes redelivered or reordered events harmless.
class CacheApplier {
 public:
  CacheApplier(kv::KvCache& cache, mq::MessageBus& bus, std::string group = "cache-applier")
      : cache_(cache), bus_(bus), group_(std::move(group)) {}

  ApplyResult apply_change_message(const mq::BusMessage& msg);

  struct Stats {
    std::size_t applied = 0;
    std::size_t stale = 0;
    std::size_t poisoned = 0;
  };

  // Polls each topic once and acks what it processed. `should_ack` lets
  // tests drop acks to force redelivery.
  Stats consume_once(const std::vector<std::string>& topics, std::size_t max_per_topic,
                     std::chrono::milliseconds visibility_timeout,
                     const std::function<bool(const mq::BusMessage&)>& should_ack = {});

  const std::string& group() const { return group_; }

 private:
  ApplyResult apply_seat(const ChangeEvent& event);
  ApplyResult apply_row(const std::string& logical, const ChangeEvent& event);

  kv::KvCache& cache_;
  mq::MessageBus& bus_;
  std::string group_;
};

struct Mismatch {
  std::string cache_key;
  std::string cached;
  std::string derived;
};

struct ConvergenceReport {
  std::size_t checked_keys = 0;
  std::vector<Mismatch> mismatches;
  bool convergent() const { return mismatches.empty(); }
};

// Recomputes every cache entry the applier maintains from a full store scan
// and compares. `row_tables` lists the logical tables cached row-by-row.
ConvergenceReport verify_convergence(const RecordStore& store, kv::KvCache& cache,
                                     const std::set<std::string>& row_tables);

// JSON text the applier stores for a cached row.
std::string cached_row_json(const Columns& image, bool deleted);

}  // namespace ticketing::store
