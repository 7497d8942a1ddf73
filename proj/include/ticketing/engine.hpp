#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ticketing/aes.hpp"
#include "ticketing/bloom.hpp"
#include "ticketing/flowcontrol.hpp"
#include "ticketing/idgen.hpp"
#include "ticketing/inventory.hpp"
#include "ticketing/kvcache.hpp"
#include "ticketing/mqbus.hpp"
#include "ticketing/orders.hpp"
#include "ticketing/recordstore.hpp"
#include "ticketing/shardrouter.hpp"

namespace ticketing::engine {

struct TrainConfig {
  std::string train_id;
  std::vector<std::string> service_dates;
  std::vector<std::string> stations;
  std::vector<inventory::CarriageSpec> carriages;
};

struct EngineConfig {
  idgen::SnowflakeLayout snowflake;
  std::uint64_t datacenter_id = 0;
  std::uint64_t worker_id = 0;
  std::uint64_t bloom_expected_items = 100000;
  double bloom_fpr = 0.01;
  shard::ShardTopology topology{2, 4};
  std::vector<flow::FlowRule> flow_rules;
  flow::AccessPolicy access;
  std::chrono::milliseconds query_cache_ttl{std::chrono::seconds(60)};
  std::chrono::milliseconds session_ttl{std::chrono::hours(2)};
  std::chrono::milliseconds form_token_ttl{std::chrono::minutes(15)};
  std::chrono::milliseconds payment_deadline{std::chrono::seconds(600)};
  std::chrono::milliseconds background_interval{5};
  std::chrono::milliseconds redelivery_timeout{std::chrono::seconds(30)};
  int max_passengers = 5;
  std::string listen_host = "127.0.0.1";
  int listen_port = 8080;
  int worker_threads = 16;
  std::filesystem::path persistence_path;  // empty: no change-log file
  std::vector<std::uint8_t> field_key = std::vector<std::uint8_t>(16, 0x2b);
  std::vector<TrainConfig> trains;

  // Defaults plus the "query" and "purchase" rules and the public paths.
  static EngineConfig defaults();
  // Missing keys keep their defaults; unknown keys and invalid values are rejected.
  static EngineConfig from_json(const nlohmann::json& doc);
  static EngineConfig load(const std::filesystem::path& path);
  // Throws std::invalid_argument describing the first problem.
  void validate() const;
};

class ApiError : public std::runtime_error {
 public:
  ApiError(std::string code, int http_status, bool retryable, const std::string& message)
      : std::runtime_error(message),
        code_(std::move(code)),
        http_status_(http_status),
        retryable_(retryable) {}

  const std::string& code() const { return code_; }
  int http_status() const { return http_status_; }
  bool retryable() const { return retryable_; }
  nlohmann::json to_json() const;

 private:
  std::string code_;
  int http_status_;
  bool retryable_;
};

struct ApiRequest {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::string body;
  std::string auth_token;
  std::string ip = "127.0.0.1";
};

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

struct EngineClocks {
  std::function<std::int64_t()> wall = idgen::system_now_ms;
  std::function<std::int64_t()> monotonic = kv::steady_now_ms;
};

// Every module wired together behind one request entry point. Route query:
// gateway, admission, bloom filter, cache, then the store. Purchase: gateway,
// admission, token deduction, seat allocation, order creation; anything that
// fails after a deduction gives the tokens and seats back.
class Engine {
 public:
  explicit Engine(EngineConfig config, EngineClocks clocks = {});
  ~Engine();

  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  ApiResponse handle(const ApiRequest& request);

  // Pumps the change log and applies it to the cache until nothing is left.
  void drain();
  void start_background();
  void stop_background();

  nlohmann::json metrics() const;
  std::uint64_t store_reads() const { return store_reads_.load(); }

  const EngineConfig& config() const { return config_; }
  store::RecordStore& store() { return store_; }
  kv::KvCache& cache() { return cache_; }
  mq::MessageBus& bus() { return bus_; }
  inventory::SeatInventory& seats() { return seats_; }
  inventory::TokenContainer& tokens() { return tokens_; }
  orders::OrderService& orders() { return orders_; }
  flow::FlowController& flow() { return flow_; }
  const std::set<std::string>& row_cached_tables() const { return row_tables_; }

  static std::string route_key(const std::string& date, const std::string& departure,
                               const std::string& arrival);

 private:
  nlohmann::json register_user(const ApiRequest& req);
  nlohmann::json login(const ApiRequest& req);
  nlohmann::json check_username(const ApiRequest& req);
  nlohmann::json query_trains(const ApiRequest& req);
  nlohmann::json issue_form_token(const ApiRequest& req);
  nlohmann::json purchase(const ApiRequest& req, std::uint64_t user_id);
  nlohmann::json cancel(const std::string& order_no, std::uint64_t user_id);
  nlohmann::json get_order(const std::string& order_no, std::uint64_t user_id);
  nlohmann::json pay(const std::string& order_no, std::uint64_t user_id);
  nlohmann::json pay_callback(const ApiRequest& req);
  nlohmann::json by_passenger(const std::string& id_number);

  ApiResponse dispatch(const ApiRequest& req, const flow::Allow& allow);
  std::uint64_t require_user(const flow::Allow& allow) const;
  std::string user_table(const std::string& username) const;
  void register_trains();
  std::size_t pump_and_apply();
  void background_loop();

  EngineConfig config_;
  EngineClocks clocks_;

  store::RecordStore store_;
  kv::KvCache cache_;
  mq::MessageBus bus_;
  store::CdcPump pump_;
  store::CacheApplier applier_;
  bloom::BloomFilter route_bloom_;
  bloom::BloomFilter username_bloom_;
  inventory::TokenContainer tokens_;
  inventory::SeatInventory seats_;
  idgen::SnowflakeGenerator ids_;
  orders::DedupRegistry dedup_;
  orders::OrderService orders_;
  flow::FlowController flow_;
  flow::SessionStore sessions_;

  std::set<std::string> pumped_tables_;
  std::set<std::string> row_tables_;
  std::vector<std::string> topics_;

  std::mutex users_mu_;
  std::map<std::string, std::uint64_t> user_ids_;  // username -> user id, filled on login

  std::mutex pipeline_mu_;
  std::mutex bg_mu_;
  std::condition_variable bg_cv_;
  bool bg_stop_ = false;
  std::thread bg_thread_;

  std::atomic<std::uint64_t> store_reads_{0};
  std::atomic<std::uint64_t> bloom_short_circuits_{0};
  std::atomic<std::uint64_t> cache_hits_{0};
  std::atomic<std::uint64_t> token_grants_{0};
  std::atomic<std::uint64_t> token_rejections_{0};
  std::atomic<std::uint64_t> orders_created_{0};
  std::atomic<std::uint64_t> flow_rejections_{0};
};

// cpp-httplib front end over Engine::handle with a bounded worker pool.
class HttpServer {
 public:
  explicit HttpServer(Engine& engine);
  ~HttpServer();

  // Binds (port 0 picks a free port) and serves on a background thread.
  int start(const std::string& host, int port, int worker_threads);
  void stop();
  int port() const { return port_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
};

}  // namespace ticketing::engine
