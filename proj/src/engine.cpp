#include "ticketing/engine.hpp"

#include <openssl/evp.h>

#include <fstream>
#include <random>

#include <spdlog/spdlog.h>

#include "ticketing/schema.hpp"

namespace ticketing::engine {

using nlohmann::json;

namespace {

void reject_unknown_keys(const json& obj, std::initializer_list<std::string_view> allowed,
                         const std::string& where) {
  if (!obj.is_object()) throw std::invalid_argument(where + " must be a JSON object");
  for (const auto& [key, value] : obj.items()) {
    bool known = false;
    for (auto a : allowed) known = known || a == key;
    if (!known) throw std::invalid_argument("unknown config key '" + where + "." + key + "'");
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

void read_ms(const json& obj, const char* key, std::chrono::milliseconds& out) {
  if (obj.contains(key)) out = std::chrono::milliseconds(obj.at(key).get<std::int64_t>());
}

std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 digest failed");
  }
  return aes::to_hex({md, len});
}

std::string random_hex(std::size_t bytes) {
  static thread_local std::mt19937_64 rng{std::random_device{}()};
  std::vector<std::uint8_t> buf(bytes);
  for (auto& b : buf) b = static_cast<std::uint8_t>(rng());
  return aes::to_hex(buf);
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::size_t pos = 0;
  while (pos < path.size()) {
    auto next = path.find('/', pos);
    if (next == std::string::npos) next = path.size();
    if (next > pos) parts.push_back(path.substr(pos, next - pos));
    pos = next + 1;
  }
  return parts;
}

ApiError bad_request(const std::string& message) {
  return ApiError("bad_request", 400, false, message);
}

json parse_body(const std::string& body) {
  try {
    auto doc = json::parse(body);
    if (!doc.is_object()) throw bad_request("request body must be a JSON object");
    return doc;
  } catch (const json::exception& e) {
    throw bad_request(std::string("malformed JSON body: ") + e.what());
  }
}

std::string text_field(const json& doc, const char* key) {
  if (!doc.contains(key) || !doc.at(key).is_string() || doc.at(key).get<std::string>().empty()) {
    throw bad_request(std::string("field '") + key + "' must be a non-empty string");
  }
  return doc.at(key).get<std::string>();
}

std::string query_param(const ApiRequest& req, const char* key) {
  auto it = req.query.find(key);
  if (it == req.query.end() || it->second.empty()) {
    throw bad_request(std::string("query parameter '") + key + "' is required");
  }
  return it->second;
}

json seat_json(const inventory::SeatAssignment& s) {
  return {{"carriage_no", s.carriage_no}, {"seat_no", s.seat_no}};
}

}  // namespace

json ApiError::to_json() const {
  return {{"error", {{"code", code_}, {"message", what()}, {"retryable", retryable_}}}};
}

EngineConfig EngineConfig::defaults() {
  EngineConfig c;
  flow::FlowRule query;
  query.resource = "query";
  query.qps_limit = 20000;
  query.max_concurrency = 512;
  flow::FlowRule purchase = query;
  purchase.resource = "purchase";
  c.flow_rules = {query, purchase};
  c.access.whitelist = {"/health",       "/metrics",      "/auth/login", "/auth/register",
                        "/users/check",  "/trains/query", "/pay/callback"};
  return c;
}

EngineConfig EngineConfig::from_json(const json& doc) {
  EngineConfig c = defaults();
  reject_unknown_keys(doc,
                      {"snowflake", "bloom", "shards", "flow_rules", "access", "ttl_ms",
                       "payment_deadline_ms", "background_interval_ms", "redelivery_timeout_ms",
                       "max_passengers", "listen", "persistence_path", "field_key_hex", "trains"},
                      "config");
  try {
    if (doc.contains("snowflake")) {
      const auto& s = doc.at("snowflake");
      reject_unknown_keys(s,
                          {"epoch_ms", "timestamp_bits", "datacenter_bits", "worker_bits",
                           "sequence_bits", "datacenter_id", "worker_id"},
                          "snowflake");
      read(s, "epoch_ms", c.snowflake.epoch_ms);
      read(s, "timestamp_bits", c.snowflake.timestamp_bits);
      read(s, "datacenter_bits", c.snowflake.datacenter_bits);
      read(s, "worker_bits", c.snowflake.worker_bits);
      read(s, "sequence_bits", c.snowflake.sequence_bits);
      read(s, "datacenter_id", c.datacenter_id);
      read(s, "worker_id", c.worker_id);
    }
    if (doc.contains("bloom")) {
      const auto& b = doc.at("bloom");
      reject_unknown_keys(b, {"expected_items", "fpr"}, "bloom");
      read(b, "expected_items", c.bloom_expected_items);
      read(b, "fpr", c.bloom_fpr);
    }
    if (doc.contains("shards")) {
      const auto& s = doc.at("shards");
      reject_unknown_keys(s, {"db_count", "tables_per_db"}, "shards");
      read(s, "db_count", c.topology.db_count);
      read(s, "tables_per_db", c.topology.tables_per_db);
    }
    if (doc.contains("flow_rules")) {
      c.flow_rules.clear();
      for (const auto& r : doc.at("flow_rules")) {
        reject_unknown_keys(r,
                            {"resource", "qps_limit", "max_concurrency", "rt_threshold_ms",
                             "breaker_error_ratio", "breaker_min_samples", "open_duration_ms",
                             "half_open_probes"},
                            "flow_rules[]");
        flow::FlowRule rule;
        read(r, "resource", rule.resource);
        read(r, "qps_limit", rule.qps_limit);
        read(r, "max_concurrency", rule.max_concurrency);
        read(r, "rt_threshold_ms", rule.rt_threshold_ms);
        read(r, "breaker_error_ratio", rule.breaker_error_ratio);
        read(r, "breaker_min_samples", rule.breaker_min_samples);
        read(r, "open_duration_ms", rule.open_duration_ms);
        read(r, "half_open_probes", rule.half_open_probes);
        c.flow_rules.push_back(rule);
      }
    }
    if (doc.contains("access")) {
      const auto& a = doc.at("access");
      reject_unknown_keys(a, {"whitelist", "blacklist"}, "access");
      read(a, "whitelist", c.access.whitelist);
      read(a, "blacklist", c.access.blacklist);
    }
    if (doc.contains("ttl_ms")) {
      const auto& t = doc.at("ttl_ms");
      reject_unknown_keys(t, {"query_cache", "session", "form_token"}, "ttl_ms");
      read_ms(t, "query_cache", c.query_cache_ttl);
      read_ms(t, "session", c.session_ttl);
      read_ms(t, "form_token", c.form_token_ttl);
    }
    read_ms(doc, "payment_deadline_ms", c.payment_deadline);
    read_ms(doc, "background_interval_ms", c.background_interval);
    read_ms(doc, "redelivery_timeout_ms", c.redelivery_timeout);
    read(doc, "max_passengers", c.max_passengers);
    if (doc.contains("listen")) {
      const auto& l = doc.at("listen");
      reject_unknown_keys(l, {"host", "port", "workers"}, "listen");
      read(l, "host", c.listen_host);
      read(l, "port", c.listen_port);
      read(l, "workers", c.worker_threads);
    }
    if (doc.contains("persistence_path")) {
      c.persistence_path = doc.at("persistence_path").get<std::string>();
    }
    if (doc.contains("field_key_hex")) {
      c.field_key = aes::from_hex(doc.at("field_key_hex").get<std::string>());
    }
    if (doc.contains("trains")) {
      for (const auto& t : doc.at("trains")) {
        reject_unknown_keys(t, {"train_id", "service_dates", "stations", "carriages"},
                            "trains[]");
        TrainConfig train;
        read(t, "train_id", train.train_id);
        read(t, "service_dates", train.service_dates);
        read(t, "stations", train.stations);
        for (const auto& car : t.at("carriages")) {
          reject_unknown_keys(car, {"carriage_no", "seat_type", "seat_count"}, "carriages[]");
          inventory::CarriageSpec spec;
          read(car, "carriage_no", spec.carriage_no);
          read(car, "seat_count", spec.seat_count);
          auto type = schema::parse_seat_type(car.at("seat_type").get<std::string>());
          if (!type) throw std::invalid_argument("unknown seat_type in train " + train.train_id);
          spec.seat_type = *type;
          train.carriages.push_back(spec);
        }
        c.trains.push_back(std::move(train));
      }
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

EngineConfig EngineConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument("config file " + path.string() + ": " + e.what());
  }
  return from_json(doc);
}

void EngineConfig::validate() const {
  if (auto problem = idgen::validate_layout(snowflake, idgen::system_now_ms())) {
    throw std::invalid_argument("snowflake: " + problem->message);
  }
  if (datacenter_id > snowflake.max_datacenter() || worker_id > snowflake.max_worker()) {
    throw std::invalid_argument("snowflake datacenter_id or worker_id out of range");
  }
  bloom::size_for(bloom_expected_items, bloom_fpr);
  topology.validate();
  std::set<std::string> names;
  for (const auto& r : flow_rules) {
    r.validate();
    if (!names.insert(r.resource).second) {
      throw std::invalid_argument("duplicate flow rule for '" + r.resource + "'");
    }
  }
  if (query_cache_ttl.count() <= 0 || session_ttl.count() <= 0 || form_token_ttl.count() <= 0 ||
      payment_deadline.count() <= 0 || background_interval.count() <= 0 ||
      redelivery_timeout.count() <= 0) {
    throw std::invalid_argument("ttl, deadline and interval values must be positive");
  }
  if (max_passengers < 1) throw std::invalid_argument("max_passengers must be >= 1");
  if (listen_port < 0 || listen_port > 65535) throw std::invalid_argument("listen port out of range");
  if (worker_threads < 1) throw std::invalid_argument("listen.workers must be >= 1");
  if (field_key.size() != 16 && field_key.size() != 24 && field_key.size() != 32) {
    throw std::invalid_argument("field_key_hex must encode 16, 24 or 32 bytes");
  }
  for (const auto& t : trains) {
    if (t.service_dates.empty()) {
      throw std::invalid_argument("train " + t.train_id + " has no service_dates");
    }
    for (const auto& date : t.service_dates) {
      inventory::TrainPlan{t.train_id, date, t.stations, t.carriages}.validate();
    }
  }
}

namespace {
EngineConfig validated(EngineConfig c) {
  c.validate();
  return c;
}
}  // namespace

Engine::Engine(EngineConfig config, EngineClocks clocks)
    : config_(validated(std::move(config))),
      clocks_(std::move(clocks)),
      store_(clocks_.wall),
      cache_(clocks_.monotonic),
      bus_(clocks_.monotonic),
      pump_(store_, bus_),
      applier_(cache_, bus_),
      route_bloom_(bloom::size_for(config_.bloom_expected_items, config_.bloom_fpr)),
      username_bloom_(bloom::size_for(config_.bloom_expected_items, config_.bloom_fpr)),
      tokens_(cache_),
      seats_(store_, tokens_),
      ids_(config_.snowflake, config_.datacenter_id, config_.worker_id, clocks_.wall),
      dedup_(clocks_.monotonic),
      orders_(store_, seats_, ids_, aes::FieldCodec(config_.field_key), dedup_,
              {config_.payment_deadline, config_.topology}, clocks_.wall),
      sessions_(config_.session_ttl, clocks_.monotonic) {
  for (const auto& rule : config_.flow_rules) flow_.register_rule(rule);

  for (std::uint32_t db = 0; db < config_.topology.db_count; ++db) {
    for (std::uint32_t t = 0; t < config_.topology.tables_per_db; ++t) {
      store_.create_table(shard::physical_table(schema::kUserTable, {db, t}),
                          std::string(schema::kUserTable));
    }
  }
  store_.create_table(std::string(schema::kSeatTable));
  store_.create_table(std::string(schema::kTrainTable));

  if (!config_.persistence_path.empty()) {
    std::error_code ec;
    if (std::filesystem::exists(config_.persistence_path, ec) &&
        std::filesystem::file_size(config_.persistence_path, ec) > 0) {
      throw std::invalid_argument("persistence file " + config_.persistence_path.string() +
                                  " is not empty; restart recovery is not supported");
    }
    store_.attach_log_file(config_.persistence_path);
  }

  pumped_tables_ = {std::string(schema::kSeatTable), std::string(schema::kTrainTable),
                    std::string(schema::kOrderTable)};
  row_tables_ = {std::string(schema::kTrainTable), std::string(schema::kOrderTable)};
  for (const auto& t : pumped_tables_) topics_.push_back(schema::cdc_topic(t));

  register_trains();
  drain();
}

Engine::~Engine() { stop_background(); }

std::string Engine::route_key(const std::string& date, const std::string& departure,
                              const std::string& arrival) {
  return "route:" + date + ":" + departure + ":" + arrival;
}

void Engine::register_trains() {
  for (const auto& t : config_.trains) {
    for (const auto& date : t.service_dates) {
      seats_.register_train({t.train_id, date, t.stations, t.carriages});
      for (std::size_t d = 0; d < t.stations.size(); ++d) {
        for (std::size_t a = d + 1; a < t.stations.size(); ++a) {
          route_bloom_.insert(route_key(date, t.stations[d], t.stations[a]));
        }
      }
    }
  }
  spdlog::info("registered {} train(s)", config_.trains.size());
}

std::size_t Engine::pump_and_apply() {
  std::lock_guard lock(pipeline_mu_);
  std::size_t moved = pump_.pump_changes(pumped_tables_);
  auto stats = applier_.consume_once(topics_, 4096, config_.redelivery_timeout);
  return moved + stats.applied + stats.stale + stats.poisoned;
}

void Engine::drain() {
  while (pump_and_apply() > 0) {
  }
}

void Engine::start_background() {
  std::lock_guard lock(bg_mu_);
  if (bg_thread_.joinable()) return;
  bg_stop_ = false;
  bg_thread_ = std::thread([this] { background_loop(); });
}

void Engine::stop_background() {
  {
    std::lock_guard lock(bg_mu_);
    if (!bg_thread_.joinable()) return;
    bg_stop_ = true;
  }
  bg_cv_.notify_all();
  bg_thread_.join();
  drain();
}

void Engine::background_loop() {
  std::int64_t last_sweep = clocks_.monotonic();
  std::unique_lock lock(bg_mu_);
  while (!bg_stop_) {
    lock.unlock();
    try {
      pump_and_apply();
      orders_.close_expired();
      const auto now = clocks_.monotonic();
      if (now - last_sweep >= 1000) {
        cache_.expire_sweep(now);
        dedup_.purge_expired();
        last_sweep = now;
      }
    } catch (const std::exception& e) {
      spdlog::error("background pass failed: {}", e.what());
    }
    lock.lock();
    bg_cv_.wait_for(lock, config_.background_interval, [this] { return bg_stop_; });
  }
}

json Engine::metrics() const {
  json states = json::object();
  for (const auto& [name, phase] : flow_.breaker_states()) states[name] = flow::to_string(phase);
  return {{"store_reads", store_reads_.load()},
          {"bloom_short_circuits", bloom_short_circuits_.load()},
          {"cache_hits", cache_hits_.load()},
          {"oversell_alarms", seats_.oversell_alarms()},
          {"breaker_states", states},
          {"token_grants", token_grants_.load()},
          {"token_rejections", token_rejections_.load()},
          {"orders_created", orders_created_.load()},
          {"flow_rejections", flow_rejections_.load()}};
}

std::string Engine::user_table(const std::string& username) const {
  return shard::physical_table(schema::kUserTable,
                               shard::route_by_username(username, config_.topology));
}

std::uint64_t Engine::require_user(const flow::Allow& allow) const {
  if (!allow.principal) throw ApiError("unauthorized", 401, false, "login required");
  auto& self = const_cast<Engine&>(*this);
  std::lock_guard lock(self.users_mu_);
  auto it = user_ids_.find(*allow.principal);
  if (it == user_ids_.end()) throw ApiError("unauthorized", 401, false, "unknown session user");
  return it->second;
}

ApiResponse Engine::handle(const ApiRequest& req) {
  const flow::GatewayRequest greq{"", req.ip, req.path, req.auth_token};
  const auto decision = flow::gateway_filter(config_.access, sessions_, greq);
  if (const auto* deny = std::get_if<flow::Deny>(&decision)) {
    const ApiError err = deny->reason == flow::DenyReason::kBlacklist
                             ? ApiError("forbidden", 403, false, "access denied")
                             : ApiError("unauthorized", 401, false, "valid session token required");
    return {err.http_status(), err.to_json()};
  }
  const auto& allow = std::get<flow::Allow>(decision);

  std::string resource;
  if (req.path == "/trains/query") resource = "query";
  if (req.path == "/tickets/purchase") resource = "purchase";
  std::optional<flow::Permit> permit;
  const auto start = clocks_.monotonic();
  if (!resource.empty() && flow_.has_rule(resource)) {
    auto admission = flow_.admit(resource, start);
    if (const auto* rej = std::get_if<flow::Rejected>(&admission)) {
      flow_rejections_.fetch_add(1);
      const ApiError err =
          rej->reason == flow::RejectReason::kBreaker
              ? ApiError("circuit_open", 503, true, "resource temporarily unavailable")
              : ApiError("rate_limited", 429, true,
                         "too many requests (" + std::string(flow::to_string(rej->reason)) + ")");
      return {err.http_status(), err.to_json()};
    }
    permit = std::get<flow::Permit>(admission);
  }

  ApiResponse resp = dispatch(req, allow);
  if (permit) {
    const auto end = clocks_.monotonic();
    flow_.record_outcome(*permit, end - start, resp.status < 500, end);
  }
  return resp;
}

ApiResponse Engine::dispatch(const ApiRequest& req, const flow::Allow& allow) {
  try {
    const auto parts = split_path(req.path);
    const auto& m = req.method;
    auto at = [&](std::size_t i) -> const std::string& { return parts.at(i); };

    if (m == "GET" && req.path == "/health") return {200, {{"status", "ok"}}};
    if (m == "GET" && req.path == "/metrics") return {200, metrics()};
    if (m == "POST" && req.path == "/auth/register") return {201, register_user(req)};
    if (m == "POST" && req.path == "/auth/login") return {200, login(req)};
    if (m == "GET" && req.path == "/users/check") return {200, check_username(req)};
    if (m == "GET" && req.path == "/trains/query") return {200, query_trains(req)};
    if (m == "GET" && req.path == "/tickets/form-token") {
      require_user(allow);
      return {200, issue_form_token(req)};
    }
    if (m == "POST" && req.path == "/tickets/purchase") {
      return {201, purchase(req, require_user(allow))};
    }
    if (m == "POST" && req.path == "/pay/callback") return {200, pay_callback(req)};
    if (m == "POST" && parts.size() == 2 && at(0) == "pay") {
      return {200, pay(at(1), require_user(allow))};
    }
    if (m == "POST" && parts.size() == 3 && at(0) == "orders" && at(2) == "cancel") {
      return {200, cancel(at(1), require_user(allow))};
    }
    if (m == "GET" && parts.size() == 3 && at(0) == "orders" && at(1) == "by-passenger") {
      require_user(allow);
      return {200, by_passenger(at(2))};
    }
    if (m == "GET" && parts.size() == 2 && at(0) == "orders") {
      return {200, get_order(at(1), require_user(allow))};
    }
    throw ApiError("not_found", 404, false, "no route for " + m + " " + req.path);
  } catch (const ApiError& e) {
    return {e.http_status(), e.to_json()};
  } catch (const orders::OrderError& e) {
    using K = orders::OrderError::Kind;
    ApiError err("internal", 500, false, e.what());
    switch (e.kind()) {
      case K::kDuplicateSubmission: err = ApiError("duplicate_submission", 409, false, e.what()); break;
      case K::kStaleForm: err = ApiError("stale_form", 409, true, e.what()); break;
      case K::kNotFound: err = ApiError("not_found", 404, false, e.what()); break;
      case K::kPermission: err = ApiError("permission_denied", 403, false, e.what()); break;
      case K::kInvalidTransition: err = ApiError("invalid_transition", 409, false, e.what()); break;
    }
    return {err.http_status(), err.to_json()};
  } catch (const inventory::UnknownTrainError& e) {
    ApiError err("not_found", 404, false, e.what());
    return {err.http_status(), err.to_json()};
  } catch (const std::invalid_argument& e) {
    ApiError err = bad_request(e.what());
    return {err.http_status(), err.to_json()};
  } catch (const json::exception& e) {
    ApiError err = bad_request(e.what());
    return {err.http_status(), err.to_json()};
  } catch (const std::exception& e) {
    spdlog::error("{} {} failed: {}", req.method, req.path, e.what());
    ApiError err("internal", 500, true, e.what());
    return {err.http_status(), err.to_json()};
  }
}

json Engine::register_user(const ApiRequest& req) {
  const auto body = parse_body(req.body);
  const auto username = text_field(body, "username");
  const auto password = text_field(body, "password");
  if (username.size() > 64 || username.find_first_of(":|#") != std::string::npos) {
    throw bad_request("username must be at most 64 characters without ':', '|' or '#'");
  }

  std::lock_guard lock(users_mu_);
  const auto table = user_table(username);
  if (username_bloom_.maybe_contains(username)) {
    store_reads_.fetch_add(1);
    if (store_.get(table, username)) {
      throw ApiError("username_taken", 409, false, "username '" + username + "' is taken");
    }
  }
  const auto user_id = ids_.next_id();
  const auto salt = random_hex(16);
  store_.commit({store::Mutation::insert(
      table, username,
      {{"username", username},
       {"user_id", static_cast<std::int64_t>(user_id)},
       {"salt", salt},
       {"password_hash", sha256_hex(salt + password)},
       {"created_at", clocks_.wall()}})});
  username_bloom_.insert(username);
  user_ids_[username] = user_id;
  return {{"username", username}, {"user_id", user_id}};
}

json Engine::login(const ApiRequest& req) {
  const auto body = parse_body(req.body);
  const auto username = text_field(body, "username");
  const auto password = text_field(body, "password");
  const ApiError bad("unauthorized", 401, false, "wrong username or password");
  if (!username_bloom_.maybe_contains(username)) throw bad;

  store_reads_.fetch_add(1);
  auto row = store_.get(user_table(username), username);
  if (!row || sha256_hex(row->text("salt") + password) != row->text("password_hash")) throw bad;

  const auto user_id = static_cast<std::uint64_t>(row->integer("user_id"));
  {
    std::lock_guard lock(users_mu_);
    user_ids_[username] = user_id;
  }
  return {{"token", sessions_.issue(username)}, {"user_id", user_id}};
}

json Engine::check_username(const ApiRequest& req) {
  const auto username = query_param(req, "username");
  if (!username_bloom_.maybe_contains(username)) return {{"username", username}, {"available", true}};
  store_reads_.fetch_add(1);
  const bool taken = store_.get(user_table(username), username).has_value();
  return {{"username", username}, {"available", !taken}};
}

json Engine::query_trains(const ApiRequest& req) {
  const auto date = query_param(req, "date");
  const auto departure = query_param(req, "departure");
  const auto arrival = query_param(req, "arrival");
  json result = {{"date", date}, {"departure", departure}, {"arrival", arrival},
                 {"trains", json::array()}};

  if (!route_bloom_.maybe_contains(route_key(date, departure, arrival))) {
    bloom_short_circuits_.fetch_add(1);
    return result;
  }

  const auto cache_key = "query:" + date + ":" + departure + ":" + arrival;
  std::vector<std::string> train_ids;
  if (auto cached = cache_.get(cache_key)) {
    cache_hits_.fetch_add(1);
    train_ids = json::parse(*cached).get<std::vector<std::string>>();
  } else {
    store_reads_.fetch_add(1);
    for (const auto& row : store_.scan_logical(std::string(schema::kTrainTable))) {
      const auto stations = schema::split_stations(row.text("stations"));
      auto d = std::find(stations.begin(), stations.end(), departure);
      auto a = std::find(stations.begin(), stations.end(), arrival);
      if (d == stations.end() || a == stations.end() || d >= a) continue;
      if (seats_.has_train(row.primary_key, date)) train_ids.push_back(row.primary_key);
    }
    cache_.set(cache_key, json(train_ids).dump(), config_.query_cache_ttl);
  }

  for (const auto& train_id : train_ids) {
    json remaining = json::object();
    if (auto hash = cache_.hash_get_all(schema::remaining_key(train_id, date))) {
      for (auto type : schema::kAllSeatTypes) {
        auto it = hash->find(schema::segment_field(departure, arrival, type));
        if (it != hash->end()) remaining[std::string(schema::to_string(type))] = std::get<std::int64_t>(it->second);
      }
    }
    result["trains"].push_back({{"train_id", train_id}, {"remaining", remaining}});
  }
  return result;
}

json Engine::issue_form_token(const ApiRequest&) {
  return {{"dedup", dedup_.issue(config_.form_token_ttl)},
          {"expires_in_ms", config_.form_token_ttl.count()}};
}

json Engine::purchase(const ApiRequest& req, std::uint64_t user_id) {
  const auto body = parse_body(req.body);
  const auto dedup = text_field(body, "dedup");
  const auto train_id = text_field(body, "train_id");
  const auto date = text_field(body, "date");
  inventory::SegmentKey key;
  key.departure = text_field(body, "departure");
  key.arrival = text_field(body, "arrival");
  const auto seat_type = schema::parse_seat_type(text_field(body, "seat_type"));
  if (!seat_type) throw bad_request("seat_type must be business, first or second");
  key.seat_type = *seat_type;

  if (!body.contains("passengers") || !body.at("passengers").is_array()) {
    throw bad_request("passengers must be an array");
  }
  std::vector<orders::PassengerInput> passengers;
  for (const auto& p : body.at("passengers")) {
    orders::PassengerInput in;
    in.name = text_field(p, "name");
    in.id_number = text_field(p, "id_number");
    if (p.contains("ticket_type")) {
      auto t = orders::parse_ticket_type(p.at("ticket_type").get<std::string>());
      if (!t) throw bad_request("ticket_type must be adult, child or student");
      in.ticket_type = *t;
    }
    passengers.push_back(std::move(in));
  }
  if (passengers.empty() || static_cast<int>(passengers.size()) > config_.max_passengers) {
    throw bad_request("between 1 and " + std::to_string(config_.max_passengers) +
                      " passengers per order");
  }
  std::vector<inventory::SeatPreference> preference;
  if (body.contains("preference")) {
    for (const auto& p : body.at("preference")) {
      preference.push_back({p.at("carriage_no").get<int>(), p.at("seat_no").get<int>()});
    }
  }

  const auto plan = seats_.plan(train_id, date);
  if (!plan) throw ApiError("not_found", 404, false, "train " + train_id + " does not run on " + date);
  inventory::legs_for(*plan, key);

  switch (dedup_.peek(dedup)) {
    case orders::DedupRegistry::Outcome::kConsumed: break;
    case orders::DedupRegistry::Outcome::kAlreadyConsumed:
      throw ApiError("duplicate_submission", 409, false, "purchase form was already submitted");
    default:
      throw ApiError("stale_form", 409, true, "purchase form expired; reload it");
  }

  const auto count = static_cast<std::int64_t>(passengers.size());
  if (tokens_.deduct_tokens(train_id, date, key, count) == inventory::TokenGrant::kRejected) {
    token_rejections_.fetch_add(1);
    throw ApiError("sold_out", 409, false, "not enough tickets left for " + key.field());
  }
  token_grants_.fetch_add(1);

  std::vector<inventory::SeatAssignment> holds;
  try {
    auto allocation = seats_.allocate_seats(train_id, date, key, static_cast<int>(count), preference);
    if (std::holds_alternative<inventory::SoldOut>(allocation)) {
      tokens_.refund_tokens(train_id, date, key, count);
      throw ApiError("sold_out", 409, false, "no seat left for " + key.field());
    }
    holds = std::get<std::vector<inventory::SeatAssignment>>(std::move(allocation));
  } catch (const ApiError&) {
    throw;
  } catch (...) {
    tokens_.refund_tokens(train_id, date, key, count);
    throw;
  }

  orders::Order order;
  try {
    order = orders_.create_order(user_id, train_id, date, key, passengers, holds, dedup);
  } catch (...) {
    seats_.release_seats(train_id, date, holds, key);
    throw;
  }
  orders_created_.fetch_add(1);

  json seats = json::array();
  std::int64_t total = 0;
  for (const auto& item : order.items) {
    seats.push_back(seat_json(item.seat));
    total += item.price_cents;
  }
  return {{"order_no", order.order_no},
          {"status", orders::to_string(order.status)},
          {"train_id", train_id},
          {"date", date},
          {"departure", key.departure},
          {"arrival", key.arrival},
          {"seat_type", schema::to_string(key.seat_type)},
          {"seats", seats},
          {"total_cents", total},
          {"close_deadline_ms", order.close_deadline_ms}};
}

json Engine::cancel(const std::string& order_no, std::uint64_t user_id) {
  const auto status = orders_.cancel_order(order_no, user_id);
  return {{"order_no", order_no}, {"status", orders::to_string(status)}};
}

json Engine::get_order(const std::string& order_no, std::uint64_t user_id) {
  auto order = orders_.get(order_no);
  if (!order) throw ApiError("not_found", 404, false, "order " + order_no + " not found");
  if (order->user_id != user_id) {
    throw ApiError("permission_denied", 403, false, "order belongs to another user");
  }
  json seats = json::array();
  for (const auto& item : order->items) seats.push_back(seat_json(item.seat));
  return {{"order_no", order_no},
          {"status", orders::to_string(order->status)},
          {"train_id", order->train_id},
          {"date", order->service_date},
          {"seats", seats}};
}

json Engine::pay(const std::string& order_no, std::uint64_t user_id) {
  auto order = orders_.get(order_no);
  if (!order) throw ApiError("not_found", 404, false, "order " + order_no + " not found");
  if (order->user_id != user_id) {
    throw ApiError("permission_denied", 403, false, "order belongs to another user");
  }
  if (order->status != orders::OrderStatus::kPendingPayment) {
    throw ApiError("invalid_transition", 409, false,
                   "order is " + std::string(orders::to_string(order->status)));
  }
  std::int64_t amount = 0;
  for (const auto& item : order->items) amount += item.price_cents;
  const auto callback_id = "pay-" + std::to_string(ids_.next_id());
  store_.commit({store::Mutation::insert(std::string(schema::kPayTable), callback_id,
                                         {{"order_no", order_no},
                                          {"amount_cents", amount},
                                          {"created_at", clocks_.wall()}})});
  const auto status =
      orders_.payment_callback(order_no, orders::PaymentResult::kSuccess, callback_id);
  if (status != orders::OrderStatus::kPaid) {
    throw ApiError("invalid_transition", 409, false,
                   "order became " + std::string(orders::to_string(status)) +
                       " before payment completed; refund queued");
  }
  return {{"order_no", order_no}, {"status", orders::to_string(status)}, {"callback_id", callback_id}};
}

json Engine::pay_callback(const ApiRequest& req) {
  const auto body = parse_body(req.body);
  const auto order_no = text_field(body, "order_no");
  const auto callback_id = text_field(body, "callback_id");
  const auto result = text_field(body, "result");
  if (result != "success" && result != "failure") {
    throw bad_request("result must be success or failure");
  }
  const auto status = orders_.payment_callback(
      order_no, result == "success" ? orders::PaymentResult::kSuccess : orders::PaymentResult::kFailure,
      callback_id);
  return {{"order_no", order_no}, {"status", orders::to_string(status)}};
}

json Engine::by_passenger(const std::string& id_number) {
  store_reads_.fetch_add(1);
  json out = json::array();
  for (const auto& view : orders_.find_orders_by_passenger(id_number)) {
    json items = json::array();
    for (const auto& item : view.items) {
      items.push_back({{"passenger_name", item.passenger_name},
                       {"id_number", item.masked_id_number},
                       {"carriage_no", item.carriage_no},
                       {"seat_no", item.seat_no},
                       {"ticket_type", orders::to_string(item.ticket_type)},
                       {"price_cents", item.price_cents}});
    }
    out.push_back({{"order_no", view.order_no},
                   {"status", orders::to_string(view.status)},
                   {"train_id", view.train_id},
                   {"date", view.service_date},
                   {"departure", view.segment.departure},
                   {"arrival", view.segment.arrival},
                   {"seat_type", schema::to_string(view.segment.seat_type)},
                   {"created_at_ms", view.created_at_ms},
                   {"items", items}});
  }
  return {{"orders", out}};
}

}  // namespace ticketing::engine
