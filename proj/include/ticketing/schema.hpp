#pragma once

// Table names, cache key naming and seat-leg encoding shared by the
// inventory, the CDC applier and the convergence checker.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ticketing::schema {

inline constexpr std::string_view kUserTable = "t_user";
inline constexpr std::string_view kTrainTable = "t_train";
inline constexpr std::string_view kSeatTable = "t_seat";
inline constexpr std::string_view kOrderTable = "t_order";
inline constexpr std::string_view kOrderItemTable = "t_order_item";
inline constexpr std::string_view kPassengerRouteTable = "t_order_item_passenger";
inline constexpr std::string_view kPayTable = "t_pay";

inline constexpr std::string_view kDeadLetterTopic = "cdc.dead";

inline std::string cdc_topic(std::string_view logical_table) {
  return "cdc." + std::string(logical_table);
}

enum class SeatType { kBusiness, kFirst, kSecond };

std::string_view to_string(SeatType type);
std::optional<SeatType> parse_seat_type(std::string_view text);
inline constexpr SeatType kAllSeatTypes[] = {SeatType::kBusiness, SeatType::kFirst,
                                             SeatType::kSecond};

// "tokens:<train_id>:<date>", fields "<dep>_<arr>_<seat_type>".
std::string tokens_key(std::string_view train_id, std::string_view date);
// Remaining-ticket cache maintained by CDC; same field naming as tokens.
std::string remaining_key(std::string_view train_id, std::string_view date);
// Per-seat cached leg state, fields "<seat_type>|<carriage>|<seat>".
std::string seatmap_key(std::string_view train_id, std::string_view date);
std::string segment_field(std::string_view departure, std::string_view arrival, SeatType type);
std::string seatmap_field(SeatType type, std::int64_t carriage_no, std::int64_t seat_no);
std::string cached_row_key(std::string_view logical_table, std::string_view primary_key);

std::string seat_primary_key(std::string_view train_id, std::string_view date,
                             std::int64_t carriage_no, std::int64_t seat_no);

// Leg i covers travel between station i and i+1. Strings hold one '0'/'1'
// per leg, leg 0 first.
std::uint64_t parse_legs(std::string_view bits);
std::string format_legs(std::uint64_t mask, std::size_t leg_count);
// Legs d..a-1.
std::uint64_t segment_mask(std::size_t departure_index, std::size_t arrival_index);

std::vector<std::string> split_stations(std::string_view joined);
std::string join_stations(const std::vector<std::string>& stations);

// Remaining count for every ordered station pair of one seat type, keyed by
// segment_field(). A seat counts toward (d, a) when legs d..a-1 are all free.
std::map<std::string, std::int64_t> derive_remaining(const std::vector<std::string>& stations,
                                                     SeatType type,
                                                     const std::vector<std::uint64_t>& seat_legs);

}  // namespace ticketing::schema
