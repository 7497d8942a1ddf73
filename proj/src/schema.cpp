#include "ticketing/schema.hpp"

#include <stdexcept>

namespace ticketing::schema {

std::string_view to_string(SeatType type) {
  switch (type) {
    case SeatType::kBusiness: return "business";
    case SeatType::kFirst: return "first";
    case SeatType::kSecond: return "second";
  }
  return "unknown";
}

std::optional<SeatType> parse_seat_type(std::string_view text) {
  for (SeatType t : kAllSeatTypes) {
    if (to_string(t) == text) return t;
  }
  return std::nullopt;
}

namespace {

std::string join3(std::string_view prefix, std::string_view a, std::string_view b) {
  std::string out(prefix);
  out.append(a).push_back(':');
  out.append(b);
  return out;
}

}  // namespace

std::string tokens_key(std::string_view train_id, std::string_view date) {
  return join3("tokens:", train_id, date);
}

std::string remaining_key(std::string_view train_id, std::string_view date) {
  return join3("remaining:", train_id, date);
}

std::string seatmap_key(std::string_view train_id, std::string_view date) {
  return join3("seatmap:", train_id, date);
}

std::string segment_field(std::string_view departure, std::string_view arrival, SeatType type) {
  std::string out(departure);
  out.push_back('_');
  out.append(arrival).push_back('_');
  out.append(to_string(type));
  return out;
}

std::string seatmap_field(SeatType type, std::int64_t carriage_no, std::int64_t seat_no) {
  return std::string(to_string(type)) + "|" + std::to_string(carriage_no) + "|" +
         std::to_string(seat_no);
}

std::string cached_row_key(std::string_view logical_table, std::string_view primary_key) {
  return join3("row:", logical_table, primary_key);
}

std::string seat_primary_key(std::string_view train_id, std::string_view date,
                             std::int64_t carriage_no, std::int64_t seat_no) {
  std::string out(train_id);
  out.push_back('|');
  out.append(date);
  out += "|" + std::to_string(carriage_no) + "|" + std::to_string(seat_no);
  return out;
}

std::uint64_t parse_legs(std::string_view bits) {
  if (bits.size() > 63) throw std::invalid_argument("legs: at most 63 legs supported");
  std::uint64_t mask = 0;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i] == '1') {
      mask |= std::uint64_t{1} << i;
    } else if (bits[i] != '0') {
      throw std::invalid_argument("legs: expected only '0' and '1'");
    }
  }
  return mask;
}

std::string format_legs(std::uint64_t mask, std::size_t leg_count) {
  std::string out(leg_count, '0');
  for (std::size_t i = 0; i < leg_count; ++i) {
    if ((mask >> i) & 1U) out[i] = '1';
  }
  return out;
}

std::uint64_t segment_mask(std::size_t departure_index, std::size_t arrival_index) {
  if (arrival_index <= departure_index || arrival_index > 63) {
    throw std::invalid_argument("segment: departure must precede arrival");
  }
  const std::uint64_t upto_arrival = (std::uint64_t{1} << arrival_index) - 1;
  const std::uint64_t upto_departure = (std::uint64_t{1} << departure_index) - 1;
  return upto_arrival & ~upto_departure;
}

std::vector<std::string> split_stations(std::string_view joined) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= joined.size()) {
    const auto comma = joined.find(',', start);
    const auto end = comma == std::string_view::npos ? joined.size() : comma;
    out.emplace_back(joined.substr(start, end - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string join_stations(const std::vector<std::string>& stations) {
  std::string out;
  for (std::size_t i = 0; i < stations.size(); ++i) {
    if (i) out.push_back(',');
    out += stations[i];
  }
  return out;
}

std::map<std::string, std::int64_t> derive_remaining(const std::vector<std::string>& stations,
                                                     SeatType type,
                                                     const std::vector<std::uint64_t>& seat_legs) {
  std::map<std::string, std::int64_t> out;
  for (std::size_t d = 0; d + 1 < stations.size(); ++d) {
    for (std::size_t a = d + 1; a < stations.size(); ++a) {
      const std::uint64_t need = segment_mask(d, a);
      std::int64_t free_seats = 0;
      for (auto legs : seat_legs) {
        if ((legs & need) == 0) ++free_seats;
      }
      out[segment_field(stations[d], stations[a], type)] = free_seats;
    }
  }
  return out;
}

}  // namespace ticketing::schema
