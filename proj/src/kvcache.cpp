#include "ticketing/kvcache.hpp"

namespace ticketing::kv {

std::int64_t steady_now_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(steady_clock::now().time_since_epoch()).count();
}

CacheEntry* Commands::live(const std::string& key) {
  auto it = store_.entries_.find(key);
  if (it == store_.entries_.end()) return nullptr;
  if (it->second.expires_at && store_.clock_() >= *it->second.expires_at) {
    store_.entries_.erase(it);
    return nullptr;
  }
  return &it->second;
}

Hash& Commands::hash_for_write(const std::string& key) {
  CacheEntry* entry = live(key);
  if (entry == nullptr) {
    entry = &store_.entries_[key];
    entry->value = Hash{};
    entry->expires_at.reset();
  }
  auto* hash = std::get_if<Hash>(&entry->value);
  if (hash == nullptr) throw WrongTypeError("key '" + key + "' does not hold a hash");
  return *hash;
}

void Commands::set(const std::string& key, std::string value,
                   std::optional<std::chrono::milliseconds> ttl) {
  CacheEntry& entry = store_.entries_[key];
  entry.value = std::move(value);
  entry.expires_at.reset();
  if (ttl) entry.expires_at = store_.clock_() + ttl->count();
}

std::optional<std::string> Commands::get(const std::string& key) {
  CacheEntry* entry = live(key);
  if (entry == nullptr) return std::nullopt;
  auto* text = std::get_if<std::string>(&entry->value);
  if (text == nullptr) throw WrongTypeError("key '" + key + "' does not hold a string");
  return *text;
}

bool Commands::del(const std::string& key) {
  if (live(key) == nullptr) return false;
  store_.entries_.erase(key);
  return true;
}

bool Commands::exists(const std::string& key) { return live(key) != nullptr; }

bool Commands::expire(const std::string& key, std::chrono::milliseconds ttl) {
  CacheEntry* entry = live(key);
  if (entry == nullptr) return false;
  entry->expires_at = store_.clock_() + ttl.count();
  return true;
}

void Commands::hash_set(const std::string& key, const std::string& field, HashValue value) {
  hash_for_write(key)[field] = std::move(value);
}

std::optional<HashValue> Commands::hash_get(const std::string& key, const std::string& field) {
  CacheEntry* entry = live(key);
  if (entry == nullptr) return std::nullopt;
  auto* hash = std::get_if<Hash>(&entry->value);
  if (hash == nullptr) throw WrongTypeError("key '" + key + "' does not hold a hash");
  auto it = hash->find(field);
  if (it == hash->end()) return std::nullopt;
  return it->second;
}

std::optional<Hash> Commands::hash_get_all(const std::string& key) {
  CacheEntry* entry = live(key);
  if (entry == nullptr) return std::nullopt;
  auto* hash = std::get_if<Hash>(&entry->value);
  if (hash == nullptr) throw WrongTypeError("key '" + key + "' does not hold a hash");
  return *hash;
}

const Hash* Commands::hash_view(const std::string& key) {
  CacheEntry* entry = live(key);
  if (entry == nullptr) return nullptr;
  auto* hash = std::get_if<Hash>(&entry->value);
  if (hash == nullptr) throw WrongTypeError("key '" + key + "' does not hold a hash");
  return hash;
}

bool Commands::hash_del(const std::string& key, const std::string& field) {
  CacheEntry* entry = live(key);
  if (entry == nullptr) return false;
  auto* hash = std::get_if<Hash>(&entry->value);
  if (hash == nullptr) throw WrongTypeError("key '" + key + "' does not hold a hash");
  return hash->erase(field) > 0;
}

namespace {

std::int64_t& integer_field(Hash& hash, const std::string& key, const std::string& field) {
  auto [it, inserted] = hash.try_emplace(field, std::int64_t{0});
  auto* number = std::get_if<std::int64_t>(&it->second);
  if (number == nullptr) {
    throw WrongTypeError("field '" + field + "' of '" + key + "' is not an integer");
  }
  return *number;
}

}  // namespace

std::int64_t Commands::hash_incr(const std::string& key, const std::string& field,
                                 std::int64_t delta) {
  std::int64_t& value = integer_field(hash_for_write(key), key, field);
  value += delta;
  return value;
}

std::optional<std::int64_t> Commands::hash_incr_if_at_least(const std::string& key,
                                                            const std::string& field,
                                                            std::int64_t floor,
                                                            std::int64_t delta) {
  // Check before creating anything so a rejected call leaves no trace.
  std::int64_t current = 0;
  if (auto existing = hash_get(key, field)) {
    auto* number = std::get_if<std::int64_t>(&*existing);
    if (number == nullptr) {
      throw WrongTypeError("field '" + field + "' of '" + key + "' is not an integer");
    }
    current = *number;
  }
  if (current + delta < floor) return std::nullopt;
  std::int64_t& value = integer_field(hash_for_write(key), key, field);
  value = current + delta;
  return value;
}

std::size_t KvCache::expire_sweep(std::int64_t now_ms) {
  std::lock_guard lock(mu_);
  return std::erase_if(entries_, [now_ms](const auto& kv) {
    return kv.second.expires_at && *kv.second.expires_at <= now_ms;
  });
}

std::size_t KvCache::size() {
  std::lock_guard lock(mu_);
  return entries_.size();
}

}  // namespace ticketing::kv
