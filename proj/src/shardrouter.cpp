#include "ticketing/shardrouter.hpp"

#include <bit>

namespace ticketing::shard {

void ShardTopology::validate() const {
  if (db_count == 0 || tables_per_db == 0) {
    throw std::invalid_argument("shard topology counts must be >= 1");
  }
  if (!std::has_single_bit(db_count) || !std::has_single_bit(tables_per_db)) {
    throw std::invalid_argument("shard topology counts must be powers of two");
  }
}

namespace {

ShardRoute route_value(std::uint64_t v, const ShardTopology& t) {
  return {static_cast<std::uint32_t>(v % t.db_count),
          static_cast<std::uint32_t>((v / t.db_count) % t.tables_per_db)};
}

}  // namespace

ShardRoute route_by_username(std::string_view username, const ShardTopology& topology) {
  if (username.empty()) throw RoutingError("cannot route an empty username");
  return route_value(fnv1a64(username), topology);
}

ShardRoute route_by_trailing_digits(std::string_view key, const ShardTopology& topology) {
  if (key.size() < 6) throw RoutingError("routing key '" + std::string(key) + "' is too short");
  std::uint64_t v = 0;
  for (char c : key.substr(key.size() - 6)) {
    if (c < '0' || c > '9') {
      throw RoutingError("routing key '" + std::string(key) + "' must end in six digits");
    }
    v = v * 10 + static_cast<std::uint64_t>(c - '0');
  }
  return route_value(v, topology);
}

std::string physical_table(std::string_view logical, const ShardRoute& route) {
  return std::string(logical) + "_" + std::to_string(route.db_index) + "_" +
         std::to_string(route.table_index);
}

}  // namespace ticketing::shard
