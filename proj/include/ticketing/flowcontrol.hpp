#pragma once

#include <array>
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
#include <variant>
#include <vector>

namespace ticketing::flow {

struct FlowRule {
  std::string resource;
  std::int64_t qps_limit = 1000;
  std::int64_t max_concurrency = 256;
  std::int64_t rt_threshold_ms = 500;
  double breaker_error_ratio = 0.5;
  std::int64_t breaker_min_samples = 10;
  std::int64_t open_duration_ms = 5000;
  std::int64_t half_open_probes = 3;

  void validate() const;
};

enum class BreakerPhase { kClosed, kOpen, kHalfOpen };
std::string_view to_string(BreakerPhase phase);

struct BreakerState {
  BreakerPhase state = BreakerPhase::kClosed;
  std::int64_t opened_at_ms = 0;
  std::int64_t probe_budget = 0;  // probes still admissible while half-open
};

struct Permit {
  std::string resource;
  std::uint64_t id = 0;
  bool probe = false;
};

enum class RejectReason { kQps, kConcurrency, kBreaker };
std::string_view to_string(RejectReason reason);

struct Rejected {
  RejectReason reason;
};

using Admission = std::variant<Permit, Rejected>;

class ConfigurationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Time is passed explicitly so tests can step a virtual clock.
//
// QPS uses 100 ms buckets. An admission counts the current bucket and the
// ten before it, so any 1000 ms interval, aligned or not, holds at most
// qps_limit admissions. Breaker statistics cover the last ten buckets and
// are cleared on every breaker transition.
class FlowController {
 public:
  static constexpr std::int64_t kBucketMs = 100;
  static constexpr std::size_t kWindowBuckets = 10;

  void register_rule(const FlowRule& rule);
  bool has_rule(const std::string& resource) const;

  Admission admit(const std::string& resource, std::int64_t now_ms);
  void record_outcome(const Permit& permit, std::int64_t rt_ms, bool ok, std::int64_t now_ms);

  BreakerState breaker_state(const std::string& resource) const;
  // Every phase the breaker has entered, starting with kClosed.
  std::vector<BreakerPhase> breaker_history(const std::string& resource) const;
  std::int64_t in_flight(const std::string& resource) const;
  std::map<std::string, BreakerPhase> breaker_states() const;

 private:
  struct Bucket {
    std::int64_t start_ms = -1;
    std::int64_t admitted = 0;
    std::int64_t completed = 0;
    std::int64_t slow = 0;
    std::int64_t failed = 0;
  };

  struct Resource {
    FlowRule rule;
    mutable std::mutex mu;
    std::array<Bucket, kWindowBuckets + 1> buckets;
    std::int64_t in_flight = 0;
    BreakerState breaker;
    std::int64_t probes_ok = 0;
    std::uint64_t next_permit = 1;
    std::set<std::uint64_t> outstanding;
    std::vector<BreakerPhase> history{BreakerPhase::kClosed};

    Bucket& bucket_at(std::int64_t now_ms);
    std::int64_t admitted_since(std::int64_t first_bucket_start) const;
    void enter(BreakerPhase phase, std::int64_t now_ms);
  };

  Resource& resource(const std::string& name) const;

  mutable std::shared_mutex mu_;
  std::map<std::string, std::unique_ptr<Resource>> resources_;
};

struct AccessPolicy {
  std::set<std::string> whitelist;  // principals, IPs or request paths
  std::set<std::string> blacklist;  // principals or IPs
};

struct GatewayRequest {
  std::string principal;  // claimed identity, may be empty
  std::string ip;
  std::string path;
  std::string auth_token;
};

enum class DenyReason { kBlacklist, kAuth };
std::string_view to_string(DenyReason reason);

struct Allow {
  std::optional<std::string> principal;  // set when a session token was valid
};
struct Deny {
  DenyReason reason;
};
using GatewayDecision = std::variant<Allow, Deny>;

// Opaque session tokens issued at login and checked against their TTL.
class SessionStore {
 public:
  using Clock = std::function<std::int64_t()>;

  SessionStore(std::chrono::milliseconds ttl, Clock clock);

  std::string issue(const std::string& principal);
  std::optional<std::string> principal_of(const std::string& token) const;
  void revoke(const std::string& token);

 private:
  struct Session {
    std::string principal;
    std::int64_t expires_at_ms = 0;
  };
  std::chrono::milliseconds ttl_;
  Clock clock_;
  mutable std::mutex mu_;
  std::map<std::string, Session> sessions_;
};

// Blacklist, then whitelist, then session token.
GatewayDecision gateway_filter(const AccessPolicy& policy, const SessionStore& sessions,
                               const GatewayRequest& request);

}  // namespace ticketing::flow
