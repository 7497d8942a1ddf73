#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <string_view>
#include <utility>

namespace ticketing::bloom {

struct BloomParams {
  std::uint64_t n = 0;  // expected element count
  double p = 0.0;       // target false-positive probability
  std::uint64_t m = 0;  // bits
  std::uint32_t k = 0;  // hash functions
};

// m = ceil(-n ln p / (ln 2)^2), k = max(1, round((m/n) ln 2)).
// Throws std::invalid_argument unless n >= 1 and 0 < p < 1.
BloomParams size_for(std::uint64_t n, double p);

// (1 - e^(-k n / m))^k
double predicted_fpr(std::uint64_t m, std::uint32_t k, std::uint64_t n);

// MurmurHash3 x64_128 (Austin Appleby, public domain).
std::pair<std::uint64_t, std::uint64_t> murmur3_128(std::string_view key, std::uint32_t seed = 0);

// Insert-only bit-array filter. insert() and maybe_contains() may be called
// concurrently; bits are set with atomic OR and never cleared.
class BloomFilter {
 public:
  explicit BloomFilter(BloomParams params);

  BloomFilter(const BloomFilter&) = delete;
  BloomFilter& operator=(const BloomFilter&) = delete;

  void insert(std::string_view key);
  bool maybe_contains(std::string_view key) const;

  std::uint64_t popcount() const;
  const BloomParams& params() const { return params_; }

  // Bit positions probed for `key`, in probe order.
  template <typename Fn>
  void for_each_position(std::string_view key, Fn&& fn) const {
    const auto [h1, h2] = murmur3_128(key);
    for (std::uint32_t i = 0; i < params_.k; ++i) {
      fn((h1 + static_cast<std::uint64_t>(i) * h2) % params_.m);
    }
  }

 private:
  BloomParams params_;
  std::size_t word_count_;
  std::unique_ptr<std::atomic<std::uint64_t>[]> words_;
};

}  // namespace ticketing::bloom
