#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <variant>

namespace ticketing::kv {

// Monotonic milliseconds.
using MonotonicClock = std::function<std::int64_t()>;
std::int64_t steady_now_ms();

using HashValue = std::variant<std::int64_t, std::string>;
using Hash = std::map<std::string, HashValue>;

class WrongTypeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct CacheEntry {
  std::variant<std::string, Hash> value;
  std::optional<std::int64_t> expires_at;  // visible while now < expires_at
};

class KvCache;

// Command set shared by direct calls and multi-command transactions. All
// methods assume the store lock is held.
class Commands {
 public:
  void set(const std::string& key, std::string value,
           std::optional<std::chrono::milliseconds> ttl = std::nullopt);
  std::optional<std::string> get(const std::string& key);
  bool del(const std::string& key);
  bool exists(const std::string& key);
  bool expire(const std::string& key, std::chrono::milliseconds ttl);

  void hash_set(const std::string& key, const std::string& field, HashValue value);
  std::optional<HashValue> hash_get(const std::string& key, const std::string& field);
  std::optional<Hash> hash_get_all(const std::string& key);
  // Borrowed view, valid until the transaction ends or the key is modified.
  const Hash* hash_view(const std::string& key);
  bool hash_del(const std::string& key, const std::string& field);
  // Unconditional INCRBY; missing field counts as 0.
  std::int64_t hash_incr(const std::string& key, const std::string& field, std::int64_t delta);
  // Applies delta only if the result stays >= floor. nullopt means insufficient.
  std::optional<std::int64_t> hash_incr_if_at_least(const std::string& key,
                                                    const std::string& field, std::int64_t floor,
                                                    std::int64_t delta);

 private:
  friend class KvCache;
  explicit Commands(KvCache& store) : store_(store) {}

  CacheEntry* live(const std::string& key);
  Hash& hash_for_write(const std::string& key);

  KvCache& store_;
};

// In-process key-value store. Every command runs under one mutex, so all
// operations are linearizable.
class KvCache {
 public:
  explicit KvCache(MonotonicClock clock = steady_now_ms) : clock_(std::move(clock)) {}

  KvCache(const KvCache&) = delete;
  KvCache& operator=(const KvCache&) = delete;

  // Runs fn(Commands&) atomically with respect to every other command.
  template <typename Fn>
  auto run(Fn&& fn) {
    std::lock_guard lock(mu_);
    Commands commands(*this);
    return fn(commands);
  }

  void set(const std::string& key, std::string value,
           std::optional<std::chrono::milliseconds> ttl = std::nullopt) {
    run([&](Commands& c) { c.set(key, std::move(value), ttl); });
  }
  std::optional<std::string> get(const std::string& key) {
    return run([&](Commands& c) { return c.get(key); });
  }
  bool del(const std::string& key) {
    return run([&](Commands& c) { return c.del(key); });
  }
  bool exists(const std::string& key) {
    return run([&](Commands& c) { return c.exists(key); });
  }
  bool expire(const std::string& key, std::chrono::milliseconds ttl) {
    return run([&](Commands& c) { return c.expire(key, ttl); });
  }
  void hash_set(const std::string& key, const std::string& field, HashValue value) {
    run([&](Commands& c) { c.hash_set(key, field, std::move(value)); });
  }
  std::optional<HashValue> hash_get(const std::string& key, const std::string& field) {
    return run([&](Commands& c) { return c.hash_get(key, field); });
  }
  std::optional<Hash> hash_get_all(const std::string& key) {
    return run([&](Commands& c) { return c.hash_get_all(key); });
  }
  bool hash_del(const std::string& key, const std::string& field) {
    return run([&](Commands& c) { return c.hash_del(key, field); });
  }
  std::int64_t hash_incr(const std::string& key, const std::string& field, std::int64_t delta) {
    return run([&](Commands& c) { return c.hash_incr(key, field, delta); });
  }
  std::optional<std::int64_t> hash_incr_if_at_least(const std::string& key,
                                                    const std::string& field, std::int64_t floor,
                                                    std::int64_t delta) {
    return run([&](Commands& c) { return c.hash_incr_if_at_least(key, field, floor, delta); });
  }

  // Removes every entry whose deadline is <= now. Returns the number evicted.
  std::size_t expire_sweep(std::int64_t now_ms);
  std::size_t expire_sweep() { return expire_sweep(clock_()); }

  std::size_t size();
  std::int64_t now_ms() const { return clock_(); }

 private:
  friend class Commands;

  MonotonicClock clock_;
  std::mutex mu_;
  std::unordered_map<std::string, CacheEntry> entries_;
};

}  // namespace ticketing::kv
