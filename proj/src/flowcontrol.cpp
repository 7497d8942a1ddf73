#include "ticketing/flowcontrol.hpp"

#include <cstdio>
#include <random>

namespace ticketing::flow {

void FlowRule::validate() const {
  if (resource.empty()) throw ConfigurationError("flow rule needs a resource name");
  if (qps_limit <= 0 || max_concurrency <= 0 || rt_threshold_ms <= 0 ||
      breaker_min_samples <= 0 || open_duration_ms <= 0 || half_open_probes <= 0) {
    throw ConfigurationError("flow rule '" + resource + "' has a non-positive threshold");
  }
  if (!(breaker_error_ratio > 0.0 && breaker_error_ratio <= 1.0)) {
    throw ConfigurationError("flow rule '" + resource + "' needs a ratio in (0, 1]");
  }
}

std::string_view to_string(BreakerPhase phase) {
  switch (phase) {
    case BreakerPhase::kClosed: return "CLOSED";
    case BreakerPhase::kOpen: return "OPEN";
    case BreakerPhase::kHalfOpen: return "HALF_OPEN";
  }
  return "?";
}

std::string_view to_string(RejectReason reason) {
  switch (reason) {
    case RejectReason::kQps: return "qps";
    case RejectReason::kConcurrency: return "concurrency";
    case RejectReason::kBreaker: return "breaker";
  }
  return "?";
}

std::string_view to_string(DenyReason reason) {
  return reason == DenyReason::kBlacklist ? "blacklist" : "auth";
}

FlowController::Bucket& FlowController::Resource::bucket_at(std::int64_t now_ms) {
  const std::int64_t start = now_ms - now_ms % kBucketMs;
  Bucket& b = buckets[static_cast<std::size_t>(start / kBucketMs) % buckets.size()];
  if (b.start_ms != start) b = Bucket{start};
  return b;
}

std::int64_t FlowController::Resource::admitted_since(std::int64_t first_bucket_start) const {
  std::int64_t n = 0;
  for (const auto& b : buckets) {
    if (b.start_ms >= first_bucket_start) n += b.admitted;
  }
  return n;
}

void FlowController::Resource::enter(BreakerPhase phase, std::int64_t now_ms) {
  breaker.state = phase;
  if (phase == BreakerPhase::kOpen) breaker.opened_at_ms = now_ms;
  breaker.probe_budget = phase == BreakerPhase::kHalfOpen ? rule.half_open_probes : 0;
  probes_ok = 0;
  for (auto& b : buckets) b.completed = b.slow = b.failed = 0;
  history.push_back(phase);
}

void FlowController::register_rule(const FlowRule& rule) {
  rule.validate();
  auto r = std::make_unique<Resource>();
  r->rule = rule;
  std::unique_lock lock(mu_);
  resources_[rule.resource] = std::move(r);
}

bool FlowController::has_rule(const std::string& name) const {
  std::shared_lock lock(mu_);
  return resources_.contains(name);
}

FlowController::Resource& FlowController::resource(const std::string& name) const {
  std::shared_lock lock(mu_);
  auto it = resources_.find(name);
  if (it == resources_.end()) throw ConfigurationError("no flow rule for resource '" + name + "'");
  return *it->second;
}

Admission FlowController::admit(const std::string& name, std::int64_t now_ms) {
  Resource& r = resource(name);
  std::lock_guard lock(r.mu);

  if (r.breaker.state == BreakerPhase::kOpen &&
      now_ms - r.breaker.opened_at_ms >= r.rule.open_duration_ms) {
    r.enter(BreakerPhase::kHalfOpen, now_ms);
  }
  if (r.breaker.state == BreakerPhase::kOpen) return Rejected{RejectReason::kBreaker};
  if (r.breaker.state == BreakerPhase::kHalfOpen && r.breaker.probe_budget == 0) {
    return Rejected{RejectReason::kBreaker};
  }
  if (r.in_flight >= r.rule.max_concurrency) return Rejected{RejectReason::kConcurrency};

  Bucket& current = r.bucket_at(now_ms);
  const std::int64_t first = current.start_ms - static_cast<std::int64_t>(kWindowBuckets) * kBucketMs;
  if (r.admitted_since(first) >= r.rule.qps_limit) return Rejected{RejectReason::kQps};

  ++current.admitted;
  ++r.in_flight;
  Permit p{name, r.next_permit++, false};
  if (r.breaker.state == BreakerPhase::kHalfOpen) {
    --r.breaker.probe_budget;
    p.probe = true;
  }
  r.outstanding.insert(p.id);
  return p;
}

void FlowController::record_outcome(const Permit& permit, std::int64_t rt_ms, bool ok,
                                    std::int64_t now_ms) {
  Resource& r = resource(permit.resource);
  std::lock_guard lock(r.mu);
  if (r.outstanding.erase(permit.id) == 0) {
    throw ContractViolation("permit " + std::to_string(permit.id) + " for '" + permit.resource +
                            "' was already recorded or never issued");
  }
  --r.in_flight;

  const bool slow = rt_ms > r.rule.rt_threshold_ms;
  switch (r.breaker.state) {
    case BreakerPhase::kClosed: {
      Bucket& b = r.bucket_at(now_ms);
      ++b.completed;
      if (slow) ++b.slow;
      if (!ok) ++b.failed;

      const std::int64_t first =
          b.start_ms - static_cast<std::int64_t>(kWindowBuckets - 1) * kBucketMs;
      std::int64_t samples = 0, slow_n = 0, failed_n = 0;
      for (const auto& x : r.buckets) {
        if (x.start_ms < first) continue;
        samples += x.completed;
        slow_n += x.slow;
        failed_n += x.failed;
      }
      if (samples >= r.rule.breaker_min_samples) {
        const double s = static_cast<double>(samples);
        if (slow_n / s >= r.rule.breaker_error_ratio || failed_n / s >= r.rule.breaker_error_ratio) {
          r.enter(BreakerPhase::kOpen, now_ms);
        }
      }
      break;
    }
    case BreakerPhase::kHalfOpen:
      if (!permit.probe) break;
      if (!ok || slow) {
        r.enter(BreakerPhase::kOpen, now_ms);
      } else if (++r.probes_ok == r.rule.half_open_probes) {
        r.enter(BreakerPhase::kClosed, now_ms);
      }
      break;
    case BreakerPhase::kOpen:
      break;
  }
}

BreakerState FlowController::breaker_state(const std::string& name) const {
  Resource& r = resource(name);
  std::lock_guard lock(r.mu);
  return r.breaker;
}

std::vector<BreakerPhase> FlowController::breaker_history(const std::string& name) const {
  Resource& r = resource(name);
  std::lock_guard lock(r.mu);
  return r.history;
}

std::int64_t FlowController::in_flight(const std::string& name) const {
  Resource& r = resource(name);
  std::lock_guard lock(r.mu);
  return r.in_flight;
}

std::map<std::string, BreakerPhase> FlowController::breaker_states() const {
  std::shared_lock lock(mu_);
  std::map<std::string, BreakerPhase> out;
  for (const auto& [name, r] : resources_) {
    std::lock_guard rl(r->mu);
    out[name] = r->breaker.state;
  }
  return out;
}

SessionStore::SessionStore(std::chrono::milliseconds ttl, Clock clock)
    : ttl_(ttl), clock_(std::move(clock)) {
  if (ttl_.count() <= 0) throw ConfigurationError("session ttl must be positive");
}

std::string SessionStore::issue(const std::string& principal) {
  static thread_local std::mt19937_64 rng{std::random_device{}()};
  char buf[33];
  std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(rng()),
                static_cast<unsigned long long>(rng()));
  std::lock_guard lock(mu_);
  sessions_[buf] = Session{principal, clock_() + ttl_.count()};
  return buf;
}

std::optional<std::string> SessionStore::principal_of(const std::string& token) const {
  std::lock_guard lock(mu_);
  auto it = sessions_.find(token);
  if (it == sessions_.end() || clock_() >= it->second.expires_at_ms) return std::nullopt;
  return it->second.principal;
}

void SessionStore::revoke(const std::string& token) {
  std::lock_guard lock(mu_);
  sessions_.erase(token);
}

GatewayDecision gateway_filter(const AccessPolicy& policy, const SessionStore& sessions,
                               const GatewayRequest& request) {
  const auto session_principal =
      request.auth_token.empty() ? std::nullopt : sessions.principal_of(request.auth_token);

  auto listed = [](const std::set<std::string>& set, const std::string& v) {
    return !v.empty() && set.contains(v);
  };
  if (listed(policy.blacklist, request.ip) || listed(policy.blacklist, request.principal) ||
      (session_principal && listed(policy.blacklist, *session_principal))) {
    return Deny{DenyReason::kBlacklist};
  }
  if (listed(policy.whitelist, request.path) || listed(policy.whitelist, request.ip) ||
      listed(policy.whitelist, request.principal)) {
    return Allow{session_principal};
  }
  if (!session_principal) return Deny{DenyReason::kAuth};
  return Allow{session_principal};
}

}  // namespace ticketing::flow
