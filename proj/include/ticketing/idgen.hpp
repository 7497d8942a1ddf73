#pragma once

#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>

namespace ticketing::idgen {

// 1 sign bit | timestamp | datacenter | worker | sequence, high to low.
struct SnowflakeLayout {
  std::int64_t epoch_ms = 1672531200000;  // 2023-01-01T00:00:00Z
  int timestamp_bits = 41;
  int datacenter_bits = 5;
  int worker_bits = 5;
  int sequence_bits = 12;

  int sequence_shift() const { return 0; }
  int worker_shift() const { return sequence_bits; }
  int datacenter_shift() const { return sequence_bits + worker_bits; }
  int timestamp_shift() const { return sequence_bits + worker_bits + datacenter_bits; }

  std::uint64_t max_sequence() const { return mask(sequence_bits); }
  std::uint64_t max_worker() const { return mask(worker_bits); }
  std::uint64_t max_datacenter() const { return mask(datacenter_bits); }
  std::uint64_t max_timestamp_offset() const { return mask(timestamp_bits); }

  static std::uint64_t mask(int bits) {
    return bits >= 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << bits) - 1;
  }
};

struct IdParts {
  std::uint64_t timestamp_offset_ms = 0;
  std::uint64_t datacenter_id = 0;
  std::uint64_t worker_id = 0;
  std::uint64_t sequence = 0;

  bool operator==(const IdParts&) const = default;
};

enum class LayoutIssue { kWidthSumMismatch, kZeroWidthField, kNegativeWidth, kEpochInFuture };

struct LayoutProblem {
  LayoutIssue issue;
  std::string message;
};

class LayoutError : public std::invalid_argument {
 public:
  explicit LayoutError(LayoutProblem problem)
      : std::invalid_argument(problem.message), issue_(problem.issue) {}
  LayoutIssue issue() const { return issue_; }

 private:
  LayoutIssue issue_;
};

class ClockRegressionError : public std::runtime_error {
 public:
  ClockRegressionError(std::int64_t last_ms, std::int64_t now_ms);
  std::int64_t regression_ms() const { return regression_ms_; }

 private:
  std::int64_t regression_ms_;
};

// Returns nothing when the layout is usable. `now_ms` is wall-clock time used
// for the epoch check.
std::optional<LayoutProblem> validate_layout(const SnowflakeLayout& layout, std::int64_t now_ms);

IdParts decompose(std::uint64_t id, const SnowflakeLayout& layout);
std::uint64_t recompose(const IdParts& parts, const SnowflakeLayout& layout);

using WallClock = std::function<std::int64_t()>;

std::int64_t system_now_ms();

// Thread-safe; next_id() serializes on an internal mutex.
class SnowflakeGenerator {
 public:
  // Regressions up to this many ms are waited out instead of raising.
  static constexpr std::int64_t kClockRegressionToleranceMs = 5;

  SnowflakeGenerator(SnowflakeLayout layout, std::uint64_t datacenter_id, std::uint64_t worker_id,
                     WallClock clock = system_now_ms);

  SnowflakeGenerator(const SnowflakeGenerator&) = delete;
  SnowflakeGenerator& operator=(const SnowflakeGenerator&) = delete;

  std::uint64_t next_id();

  const SnowflakeLayout& layout() const { return layout_; }
  std::uint64_t datacenter_id() const { return datacenter_id_; }
  std::uint64_t worker_id() const { return worker_id_; }

 private:
  std::int64_t wait_until_after(std::int64_t ms);

  SnowflakeLayout layout_;
  std::uint64_t datacenter_id_;
  std::uint64_t worker_id_;
  WallClock clock_;

  std::mutex mu_;
  std::int64_t last_ms_ = -1;
  std::uint64_t sequence_ = 0;
};

}  // namespace ticketing::idgen
