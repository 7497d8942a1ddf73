#include "ticketing/recordstore.hpp"

#include <json.hpp>

#include "ticketing/idgen.hpp"
#include "ticketing/schema.hpp"

namespace ticketing::store {

using nlohmann::json;

std::int64_t TableRow::integer(const std::string& column) const {
  const auto& v = columns.at(column);
  if (const auto* n = std::get_if<std::int64_t>(&v)) return *n;
  throw std::logic_error("column '" + column + "' is not an integer");
}

const std::string& TableRow::text(const std::string& column) const {
  const auto& v = columns.at(column);
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  throw std::logic_error("column '" + column + "' is not text");
}

std::string_view to_string(ChangeOp op) {
  switch (op) {
    case ChangeOp::kInsert: return "INSERT";
    case ChangeOp::kUpdate: return "UPDATE";
    case ChangeOp::kDelete: return "DELETE";
  }
  return "?";
}

namespace {

json image_to_json(const std::optional<Columns>& image) {
  if (!image) return nullptr;
  json obj = json::object();
  for (const auto& [name, value] : *image) {
    std::visit([&](const auto& v) { obj[name] = v; }, value);
  }
  return obj;
}

std::optional<Columns> image_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  if (!j.is_object()) throw MalformedEventError("cdc: image must be an object or null");
  Columns cols;
  for (const auto& [name, value] : j.items()) {
    if (value.is_number_integer()) {
      cols[name] = value.get<std::int64_t>();
    } else if (value.is_string()) {
      cols[name] = value.get<std::string>();
    } else {
      throw MalformedEventError("cdc: column '" + name + "' must be an integer or a string");
    }
  }
  return cols;
}

Columns image_of(const TableRow& row) {
  Columns image = row.columns;
  image[kPkColumn] = row.primary_key;
  image[kVersionColumn] = row.version;
  return image;
}

TableRow row_from_image(const std::string& table, const Columns& image) {
  TableRow row;
  row.table = table;
  row.columns = image;
  row.primary_key = std::get<std::string>(row.columns.at(kPkColumn));
  row.version = std::get<std::int64_t>(row.columns.at(kVersionColumn));
  row.columns.erase(kPkColumn);
  row.columns.erase(kVersionColumn);
  return row;
}

}  // namespace

std::string to_cdc_json(const ChangeEvent& event) {
  json j;
  j["seq"] = event.sequence;
  j["table"] = event.table;
  j["op"] = to_string(event.op);
  j["before"] = image_to_json(event.before);
  j["after"] = image_to_json(event.after);
  j["ts"] = event.commit_time_ms;
  return j.dump();
}

ChangeEvent parse_cdc_json(std::string_view text) {
  json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded() || !j.is_object()) throw MalformedEventError("cdc: payload is not a JSON object");
  for (const char* field : {"seq", "table", "op", "before", "after", "ts"}) {
    if (!j.contains(field)) throw MalformedEventError(std::string("cdc: missing field '") + field + "'");
  }
  if (!j["seq"].is_number_unsigned() && !j["seq"].is_number_integer()) {
    throw MalformedEventError("cdc: seq must be an integer");
  }
  if (!j["table"].is_string() || !j["op"].is_string() || !j["ts"].is_number_integer()) {
    throw MalformedEventError("cdc: table/op must be strings and ts an integer");
  }
  ChangeEvent ev;
  ev.sequence = j["seq"].get<std::uint64_t>();
  ev.table = j["table"].get<std::string>();
  const auto op = j["op"].get<std::string>();
  if (op == "INSERT") {
    ev.op = ChangeOp::kInsert;
  } else if (op == "UPDATE") {
    ev.op = ChangeOp::kUpdate;
  } else if (op == "DELETE") {
    ev.op = ChangeOp::kDelete;
  } else {
    throw MalformedEventError("cdc: unknown op '" + op + "'");
  }
  ev.before = image_from_json(j["before"]);
  ev.after = image_from_json(j["after"]);
  ev.commit_time_ms = j["ts"].get<std::int64_t>();

  const bool shape_ok = (ev.op == ChangeOp::kInsert && !ev.before && ev.after) ||
                        (ev.op == ChangeOp::kUpdate && ev.before && ev.after) ||
                        (ev.op == ChangeOp::kDelete && ev.before && !ev.after);
  if (!shape_ok) throw MalformedEventError("cdc: before/after images do not match op");
  for (const auto* image : {&ev.before, &ev.after}) {
    if (!*image) continue;
    auto pk = (*image)->find(kPkColumn);
    auto ver = (*image)->find(kVersionColumn);
    if (pk == (*image)->end() || !std::holds_alternative<std::string>(pk->second) ||
        ver == (*image)->end() || !std::holds_alternative<std::int64_t>(ver->second)) {
      throw MalformedEventError("cdc: images must carry pk (string) and version (integer)");
    }
  }
  return ev;
}

RecordStore::RecordStore() : RecordStore(idgen::system_now_ms) {}

RecordStore::RecordStore(WallClock clock) : clock_(std::move(clock)) {}

RecordStore::~RecordStore() = default;

void RecordStore::create_table(const std::string& name, std::string logical) {
  std::unique_lock lock(mu_);
  auto& t = tables_[name];
  t.logical = logical.empty() ? name : std::move(logical);
}

bool RecordStore::has_table(const std::string& name) const {
  std::shared_lock lock(mu_);
  return tables_.contains(name);
}

std::string RecordStore::logical_name(const std::string& table) const {
  std::shared_lock lock(mu_);
  auto it = tables_.find(table);
  if (it == tables_.end()) throw std::out_of_range("unknown table '" + table + "'");
  return it->second.logical;
}

std::vector<std::string> RecordStore::tables_of(const std::string& logical) const {
  std::shared_lock lock(mu_);
  std::vector<std::string> out;
  for (const auto& [name, t] : tables_) {
    if (t.logical == logical) out.push_back(name);
  }
  return out;
}

std::vector<ChangeEvent> RecordStore::commit(std::vector<Mutation> mutations) {
  std::unique_lock lock(mu_);

  // Stage against an overlay so a later mutation in the same commit sees the
  // effect of an earlier one, and nothing is applied until all validate.
  std::map<std::pair<std::string, std::string>, std::optional<TableRow>> staged;
  auto current = [&](const std::string& table,
                     const std::string& pk) -> std::optional<TableRow> {
    auto s = staged.find({table, pk});
    if (s != staged.end()) return s->second;
    const auto& rows = tables_.at(table).rows;
    auto it = rows.find(pk);
    if (it == rows.end()) return std::nullopt;
    return it->second;
  };

  std::vector<ChangeEvent> events;
  events.reserve(mutations.size());
  const std::int64_t now = clock_();
  std::uint64_t seq = log_.size() + 1;

  for (auto& m : mutations) {
    if (!tables_.contains(m.table)) throw CommitError("unknown table '" + m.table + "'");
    if (m.columns.contains(kPkColumn) || m.columns.contains(kVersionColumn)) {
      throw CommitError("columns 'pk' and 'version' are reserved");
    }
    auto existing = current(m.table, m.primary_key);
    ChangeEvent ev;
    ev.sequence = seq++;
    ev.table = m.table;
    ev.op = m.kind;
    ev.commit_time_ms = now;

    switch (m.kind) {
      case ChangeOp::kInsert: {
        if (existing) {
          throw CommitError("duplicate key '" + m.primary_key + "' in '" + m.table + "'");
        }
        std::int64_t prior = 0;
        const auto& retired = tables_.at(m.table).retired_versions;
        if (auto g = retired.find(m.primary_key); g != retired.end()) prior = g->second;
        TableRow row{m.table, m.primary_key, std::move(m.columns), prior + 1};
        ev.after = image_of(row);
        staged[{m.table, m.primary_key}] = std::move(row);
        break;
      }
      case ChangeOp::kUpdate: {
        if (!existing) {
          throw CommitError("unknown key '" + m.primary_key + "' in '" + m.table + "'");
        }
        ev.before = image_of(*existing);
        TableRow row = *existing;
        for (auto& [name, value] : m.columns) row.columns[name] = std::move(value);
        row.version += 1;
        ev.after = image_of(row);
        staged[{m.table, m.primary_key}] = std::move(row);
        break;
      }
      case ChangeOp::kDelete: {
        if (!existing) {
          throw CommitError("unknown key '" + m.primary_key + "' in '" + m.table + "'");
        }
        ev.before = image_of(*existing);
        staged[{m.table, m.primary_key}] = std::nullopt;
        break;
      }
    }
    events.push_back(std::move(ev));
  }

  for (const auto& ev : events) {
    apply_locked(ev);
    log_.push_back(ev);
    if (log_file_.is_open()) log_file_ << to_cdc_json(ev) << '\n';
  }
  if (log_file_.is_open()) log_file_.flush();
  return events;
}

void RecordStore::apply_locked(const ChangeEvent& event) {
  auto& table = tables_.at(event.table);
  switch (event.op) {
    case ChangeOp::kInsert:
    case ChangeOp::kUpdate: {
      TableRow row = row_from_image(event.table, *event.after);
      table.retired_versions.erase(row.primary_key);
      table.rows[row.primary_key] = std::move(row);
      break;
    }
    case ChangeOp::kDelete: {
      // A re-insert continues from the deleted row's version.
      const auto pk = std::get<std::string>(event.before->at(kPkColumn));
      // The delete consumes a version, so a re-insert outranks the cached tombstone.
      table.retired_versions[pk] = std::get<std::int64_t>(event.before->at(kVersionColumn)) + 1;
      table.rows.erase(pk);
      break;
    }
  }
}

std::optional<TableRow> RecordStore::get(const std::string& table, const std::string& pk) const {
  std::shared_lock lock(mu_);
  auto t = tables_.find(table);
  if (t == tables_.end()) throw std::out_of_range("unknown table '" + table + "'");
  auto it = t->second.rows.find(pk);
  if (it == t->second.rows.end()) return std::nullopt;
  return it->second;
}

std::vector<TableRow> RecordStore::scan(const std::string& table) const {
  std::shared_lock lock(mu_);
  auto t = tables_.find(table);
  if (t == tables_.end()) throw std::out_of_range("unknown table '" + table + "'");
  std::vector<TableRow> out;
  out.reserve(t->second.rows.size());
  for (const auto& [pk, row] : t->second.rows) out.push_back(row);
  return out;
}

std::vector<TableRow> RecordStore::scan_logical(const std::string& logical) const {
  std::shared_lock lock(mu_);
  std::vector<TableRow> out;
  for (const auto& [name, t] : tables_) {
    if (t.logical != logical) continue;
    for (const auto& [pk, row] : t.rows) out.push_back(row);
  }
  return out;
}

std::vector<TableRow> RecordStore::scan_prefix(const std::string& table,
                                                const std::string& prefix) const {
  std::shared_lock lock(mu_);
  auto t = tables_.find(table);
  if (t == tables_.end()) throw std::out_of_range("unknown table '" + table + "'");
  std::vector<TableRow> out;
  for (auto it = t->second.rows.lower_bound(prefix);
       it != t->second.rows.end() && it->first.compare(0, prefix.size(), prefix) == 0; ++it) {
    out.push_back(it->second);
  }
  return out;
}

std::vector<ChangeEvent> RecordStore::changes_since(std::uint64_t from_sequence,
                                                    std::size_t max) const {
  std::shared_lock lock(mu_);
  std::vector<ChangeEvent> out;
  const std::uint64_t start = from_sequence == 0 ? 0 : from_sequence - 1;
  for (std::uint64_t i = start; i < log_.size() && out.size() < max; ++i) {
    out.push_back(log_[i]);
  }
  return out;
}

std::uint64_t RecordStore::last_sequence() const {
  std::shared_lock lock(mu_);
  return log_.size();
}

void RecordStore::attach_log_file(const std::filesystem::path& path) {
  std::unique_lock lock(mu_);
  if (std::filesystem::exists(path)) {
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      ChangeEvent ev = parse_cdc_json(line);
      if (!tables_.contains(ev.table)) {
        throw CommitError("change log references unknown table '" + ev.table + "'");
      }
      if (ev.sequence != log_.size() + 1) {
        throw CommitError("change log sequence gap at " + std::to_string(ev.sequence));
      }
      apply_locked(ev);
      log_.push_back(std::move(ev));
    }
  }
  log_file_.open(path, std::ios::app);
  if (!log_file_) throw std::runtime_error("cannot open change log " + path.string());
}

std::size_t CdcPump::pump_changes(const std::set<std::string>& filter) {
  std::lock_guard lock(mu_);
  std::size_t published = 0;
  for (;;) {
    auto batch = store_.changes_since(next_sequence_, 512);
    if (batch.empty()) break;
    for (const auto& ev : batch) {
      const auto logical = store_.logical_name(ev.table);
      if (filter.contains(logical)) {
        bus_.publish(schema::cdc_topic(logical), to_cdc_json(ev));
        ++published;
      }
      next_sequence_ = ev.sequence + 1;
    }
  }
  return published;
}

std::uint64_t CdcPump::position() const {
  std::lock_guard lock(mu_);
  return next_sequence_;
}

std::string cached_row_json(const Columns& image, bool deleted) {
  json j;
  j["deleted"] = deleted;
  j["row"] = image_to_json(image);
  return j.dump();
}

namespace {

std::int64_t image_version(const Columns& image) {
  return std::get<std::int64_t>(image.at(kVersionColumn));
}

const std::string& image_text(const Columns& image, const char* column) {
  auto it = image.find(column);
  if (it == image.end() || !std::holds_alternative<std::string>(it->second)) {
    throw PoisonMessageError(std::string("cdc: seat image lacks text column '") + column + "'");
  }
  return std::get<std::string>(it->second);
}

std::int64_t image_int(const Columns& image, const char* column) {
  auto it = image.find(column);
  if (it == image.end() || !std::holds_alternative<std::int64_t>(it->second)) {
    throw PoisonMessageError(std::string("cdc: seat image lacks integer column '") + column + "'");
  }
  return std::get<std::int64_t>(it->second);
}

// Seat map values are "<version>|<legs>", or "<version>|-" once deleted.
std::int64_t seatmap_version(const kv::HashValue& v) {
  const auto& s = std::get<std::string>(v);
  return std::stoll(s.substr(0, s.find('|')));
}

}  // namespace

ApplyResult CacheApplier::apply_change_message(const mq::BusMessage& msg) {
  ChangeEvent ev;
  try {
    ev = parse_cdc_json(msg.payload);
  } catch (const MalformedEventError& e) {
    throw PoisonMessageError(e.what());
  }
  const std::string prefix = "cdc.";
  if (msg.topic.rfind(prefix, 0) != 0) throw PoisonMessageError("cdc: unexpected topic " + msg.topic);
  const std::string logical = msg.topic.substr(prefix.size());
  if (logical == schema::kSeatTable) return apply_seat(ev);
  return apply_row(logical, ev);
}

ApplyResult CacheApplier::apply_seat(const ChangeEvent& ev) {
  const bool deleted = ev.op == ChangeOp::kDelete;
  const Columns& image = deleted ? *ev.before : *ev.after;
  const std::int64_t version = image_version(image) + (deleted ? 1 : 0);

  const auto& train = image_text(image, "train_id");
  const auto& date = image_text(image, "service_date");
  const auto type = schema::parse_seat_type(image_text(image, "seat_type"));
  if (!type) throw PoisonMessageError("cdc: unknown seat type");
  const auto stations = schema::split_stations(image_text(image, "stations"));
  const std::string legs = image_text(image, "legs");
  if (stations.size() < 2 || legs.size() + 1 != stations.size()) {
    throw PoisonMessageError("cdc: seat legs do not match station list");
  }
  const auto field =
      schema::seatmap_field(*type, image_int(image, "carriage_no"), image_int(image, "seat_no"));
  const auto map_key = schema::seatmap_key(train, date);
  const auto remaining = schema::remaining_key(train, date);

  return cache_.run([&](kv::Commands& c) {
    if (auto cur = c.hash_get(map_key, field); cur && seatmap_version(*cur) >= version) {
      return ApplyResult::kSkippedStale;
    }
    c.hash_set(map_key, field, std::to_string(version) + "|" + (deleted ? "-" : legs));

    const std::string type_prefix = std::string(schema::to_string(*type)) + "|";
    std::vector<std::uint64_t> seat_legs;
    const kv::Hash* seats = c.hash_view(map_key);
    for (auto it = seats->lower_bound(type_prefix);
         it != seats->end() && it->first.compare(0, type_prefix.size(), type_prefix) == 0; ++it) {
      const auto& v = std::get<std::string>(it->second);
      const auto bar = v.find('|');
      if (v.compare(bar + 1, std::string::npos, "-") == 0) continue;
      seat_legs.push_back(schema::parse_legs(std::string_view(v).substr(bar + 1)));
    }
    for (const auto& [seg, count] : schema::derive_remaining(stations, *type, seat_legs)) {
      c.hash_set(remaining, seg, count);
    }
    return ApplyResult::kApplied;
  });
}

ApplyResult CacheApplier::apply_row(const std::string& logical, const ChangeEvent& ev) {
  const bool deleted = ev.op == ChangeOp::kDelete;
  const Columns& image = deleted ? *ev.before : *ev.after;
  const std::int64_t version = image_version(image) + (deleted ? 1 : 0);
  const auto key =
      schema::cached_row_key(logical, std::get<std::string>(image.at(kPkColumn)));

  Columns stored = image;
  stored[kVersionColumn] = version;
  const std::string value = cached_row_json(stored, deleted);

  return cache_.run([&](kv::Commands& c) {
    if (auto cur = c.get(key)) {
      const auto j = json::parse(*cur);
      if (j["row"][kVersionColumn].get<std::int64_t>() >= version) {
        return ApplyResult::kSkippedStale;
      }
    }
    c.set(key, value);
    return ApplyResult::kApplied;
  });
}

CacheApplier::Stats CacheApplier::consume_once(
    const std::vector<std::string>& topics, std::size_t max_per_topic,
    std::chrono::milliseconds visibility_timeout,
    const std::function<bool(const mq::BusMessage&)>& should_ack) {
  Stats stats;
  for (const auto& topic : topics) {
    for (const auto& msg : bus_.poll(topic, group_, max_per_topic, visibility_timeout)) {
      try {
        if (apply_change_message(msg) == ApplyResult::kApplied) {
          ++stats.applied;
        } else {
          ++stats.stale;
        }
      } catch (const PoisonMessageError&) {
        bus_.publish(std::string(schema::kDeadLetterTopic), msg.payload);
        ++stats.poisoned;
        bus_.ack(topic, group_, msg.offset);
        continue;
      }
      if (!should_ack || should_ack(msg)) bus_.ack(topic, group_, msg.offset);
    }
  }
  return stats;
}

ConvergenceReport verify_convergence(const RecordStore& store, kv::KvCache& cache,
                                     const std::set<std::string>& row_tables) {
  ConvergenceReport report;

  struct SeatGroup {
    std::vector<std::string> stations;
    std::map<schema::SeatType, std::vector<std::uint64_t>> legs_by_type;
  };
  std::map<std::pair<std::string, std::string>, SeatGroup> groups;
  for (const auto& row : store.scan_logical(std::string(schema::kSeatTable))) {
    auto& g = groups[{row.text("train_id"), row.text("service_date")}];
    g.stations = schema::split_stations(row.text("stations"));
    const auto type = *schema::parse_seat_type(row.text("seat_type"));
    g.legs_by_type[type].push_back(schema::parse_legs(row.text("legs")));

    const auto map_key = schema::seatmap_key(row.text("train_id"), row.text("service_date"));
    const auto field =
        schema::seatmap_field(type, row.integer("carriage_no"), row.integer("seat_no"));
    const std::string derived = std::to_string(row.version) + "|" + row.text("legs");
    auto cached = cache.hash_get(map_key, field);
    const std::string cached_text = cached ? std::get<std::string>(*cached) : "<absent>";
    ++report.checked_keys;
    if (cached_text != derived) {
      report.mismatches.push_back({map_key + "#" + field, cached_text, derived});
    }
  }

  for (const auto& [id, g] : groups) {
    const auto key = schema::remaining_key(id.first, id.second);
    std::map<std::string, std::int64_t> derived;
    for (const auto& [type, legs] : g.legs_by_type) {
      derived.merge(schema::derive_remaining(g.stations, type, legs));
    }
    const auto cached = cache.hash_get_all(key).value_or(kv::Hash{});
    for (const auto& [field, count] : derived) {
      ++report.checked_keys;
      auto it = cached.find(field);
      const std::string cached_text =
          it == cached.end() ? "<absent>" : std::to_string(std::get<std::int64_t>(it->second));
      if (cached_text != std::to_string(count)) {
        report.mismatches.push_back({key + "#" + field, cached_text, std::to_string(count)});
      }
    }
    for (const auto& [field, value] : cached) {
      if (!derived.contains(field)) {
        report.mismatches.push_back({key + "#" + field, "present", "<absent>"});
      }
    }
  }

  for (const auto& logical : row_tables) {
    for (const auto& row : store.scan_logical(logical)) {
      const auto key = schema::cached_row_key(logical, row.primary_key);
      const auto derived = cached_row_json(image_of(row), false);
      const auto cached = cache.get(key).value_or("<absent>");
      ++report.checked_keys;
      if (cached != derived) report.mismatches.push_back({key, cached, derived});
    }
  }
  return report;
}

}  // namespace ticketing::store
