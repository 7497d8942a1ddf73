#include "ticketing/idgen.hpp"

#include <chrono>
#include <thread>

namespace ticketing::idgen {

ClockRegressionError::ClockRegressionError(std::int64_t last_ms, std::int64_t now_ms)
    : std::runtime_error("clock moved backwards by " + std::to_string(last_ms - now_ms) +
                         " ms; refusing to generate ids"),
      regression_ms_(last_ms - now_ms) {}

std::optional<LayoutProblem> validate_layout(const SnowflakeLayout& layout, std::int64_t now_ms) {
  const int widths[] = {layout.timestamp_bits, layout.datacenter_bits, layout.worker_bits,
                        layout.sequence_bits};
  for (int w : widths) {
    if (w < 0) {
      return LayoutProblem{LayoutIssue::kNegativeWidth, "bit widths must be non-negative"};
    }
  }
  const int sum = layout.timestamp_bits + layout.datacenter_bits + layout.worker_bits +
                  layout.sequence_bits;
  if (sum != 63) {
    return LayoutProblem{LayoutIssue::kWidthSumMismatch,
                         "bit widths sum to " + std::to_string(sum + 1) +
                             " including the sign bit; expected 64"};
  }
  if (layout.timestamp_bits == 0) {
    return LayoutProblem{LayoutIssue::kZeroWidthField, "timestamp width must be at least 1"};
  }
  if (layout.datacenter_bits == 0 || layout.worker_bits == 0) {
    return LayoutProblem{LayoutIssue::kZeroWidthField,
                         "datacenter and worker widths must be at least 1"};
  }
  if (layout.epoch_ms > now_ms) {
    return LayoutProblem{LayoutIssue::kEpochInFuture, "epoch " + std::to_string(layout.epoch_ms) +
                                                          " ms is in the future"};
  }
  return std::nullopt;
}

IdParts decompose(std::uint64_t id, const SnowflakeLayout& layout) {
  IdParts parts;
  parts.sequence = id & layout.max_sequence();
  parts.worker_id = (id >> layout.worker_shift()) & layout.max_worker();
  parts.datacenter_id = (id >> layout.datacenter_shift()) & layout.max_datacenter();
  parts.timestamp_offset_ms = (id >> layout.timestamp_shift()) & layout.max_timestamp_offset();
  return parts;
}

std::uint64_t recompose(const IdParts& parts, const SnowflakeLayout& layout) {
  return (parts.timestamp_offset_ms << layout.timestamp_shift()) |
         (parts.datacenter_id << layout.datacenter_shift()) |
         (parts.worker_id << layout.worker_shift()) | parts.sequence;
}

std::int64_t system_now_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

SnowflakeGenerator::SnowflakeGenerator(SnowflakeLayout layout, std::uint64_t datacenter_id,
                                       std::uint64_t worker_id, WallClock clock)
    : layout_(layout),
      datacenter_id_(datacenter_id),
      worker_id_(worker_id),
      clock_(std::move(clock)) {
  if (auto problem = validate_layout(layout_, clock_())) {
    throw LayoutError(std::move(*problem));
  }
  if (datacenter_id_ > layout_.max_datacenter()) {
    throw std::invalid_argument("datacenter_id " + std::to_string(datacenter_id_) +
                                " does not fit in " + std::to_string(layout_.datacenter_bits) +
                                " bits");
  }
  if (worker_id_ > layout_.max_worker()) {
    throw std::invalid_argument("worker_id " + std::to_string(worker_id_) + " does not fit in " +
                                std::to_string(layout_.worker_bits) + " bits");
  }
}

std::int64_t SnowflakeGenerator::wait_until_after(std::int64_t ms) {
  std::int64_t now = clock_();
  while (now <= ms) {
    std::this_thread::yield();
    now = clock_();
  }
  return now;
}

std::uint64_t SnowflakeGenerator::next_id() {
  std::lock_guard lock(mu_);
  std::int64_t now = clock_();
  if (now < last_ms_) {
    if (last_ms_ - now > kClockRegressionToleranceMs) {
      throw ClockRegressionError(last_ms_, now);
    }
    now = wait_until_after(last_ms_ - 1);
  }
  if (now == last_ms_) {
    sequence_ = (sequence_ + 1) & layout_.max_sequence();
    if (sequence_ == 0) {
      now = wait_until_after(last_ms_);
    }
  } else {
    sequence_ = 0;
  }
  last_ms_ = now;

  const auto offset = static_cast<std::uint64_t>(now - layout_.epoch_ms);
  if (offset > layout_.max_timestamp_offset()) {
    throw std::overflow_error("timestamp offset exceeds the layout's timestamp width");
  }
  return recompose({offset, datacenter_id_, worker_id_, sequence_}, layout_);
}

}  // namespace ticketing::idgen
