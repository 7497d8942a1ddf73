#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ticketing::shard {

// Both counts must be powers of two.
struct ShardTopology {
  std::uint32_t db_count = 1;
  std::uint32_t tables_per_db = 1;

  void validate() const;
  std::uint32_t total_tables() const { return db_count * tables_per_db; }
};

struct ShardRoute {
  std::uint32_t db_index = 0;
  std::uint32_t table_index = 0;
  bool operator==(const ShardRoute&) const = default;
};

class RoutingError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// 64-bit FNV-1a over the key bytes. Offset basis 0xcbf29ce484222325,
// prime 0x100000001b3. fnv1a64("") = 0xcbf29ce484222325,
// fnv1a64("a") = 0xaf63dc4c8601ec8c, fnv1a64("foobar") = 0x85944171f73967e8.
constexpr std::uint64_t fnv1a64(std::string_view key) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : key) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// db = h mod db_count, table = (h / db_count) mod tables_per_db.
ShardRoute route_by_username(std::string_view username, const ShardTopology& topology);

// v = integer value of the last six decimal digits;
// db = v mod db_count, table = (v / db_count) mod tables_per_db.
ShardRoute route_by_trailing_digits(std::string_view key, const ShardTopology& topology);

// "<logical>_<db>_<table>"
std::string physical_table(std::string_view logical, const ShardRoute& route);

}  // namespace ticketing::shard
