#include "ticketing/bloom.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace ticketing::bloom {

BloomParams size_for(std::uint64_t n, double p) {
  if (n < 1) {
    throw std::invalid_argument("bloom: expected element count must be >= 1");
  }
  if (!(p > 0.0 && p < 1.0)) {
    throw std::invalid_argument("bloom: false-positive probability must lie in (0, 1)");
  }
  const double ln2 = std::log(2.0);
  const double raw_m = -static_cast<double>(n) * std::log(p) / (ln2 * ln2);
  const auto m = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::ceil(raw_m)));
  const double raw_k = static_cast<double>(m) / static_cast<double>(n) * ln2;
  const auto k = std::max<std::uint32_t>(1, static_cast<std::uint32_t>(std::llround(raw_k)));
  return {n, p, m, k};
}

double predicted_fpr(std::uint64_t m, std::uint32_t k, std::uint64_t n) {
  if (n == 0) return 0.0;
  const double exponent = -static_cast<double>(k) * static_cast<double>(n) / static_cast<double>(m);
  return std::pow(1.0 - std::exp(exponent), static_cast<double>(k));
}

namespace {

std::uint64_t fmix64(std::uint64_t k) {
  k ^= k >> 33;
  k *= 0xff51afd7ed558ccdULL;
  k ^= k >> 33;
  k *= 0xc4ceb9fe1a85ec53ULL;
  k ^= k >> 33;
  return k;
}

std::uint64_t load64(const unsigned char* p) {
  std::uint64_t v;
  std::memcpy(&v, p, sizeof v);
  return v;  // little-endian hosts only, matching the reference vectors
}

}  // namespace

std::pair<std::uint64_t, std::uint64_t> murmur3_128(std::string_view key, std::uint32_t seed) {
  const auto* data = reinterpret_cast<const unsigned char*>(key.data());
  const std::size_t len = key.size();
  const std::size_t nblocks = len / 16;

  std::uint64_t h1 = seed;
  std::uint64_t h2 = seed;
  constexpr std::uint64_t c1 = 0x87c37b91114253d5ULL;
  constexpr std::uint64_t c2 = 0x4cf5ad432745937fULL;

  for (std::size_t i = 0; i < nblocks; ++i) {
    std::uint64_t k1 = load64(data + i * 16);
    std::uint64_t k2 = load64(data + i * 16 + 8);

    k1 *= c1;
    k1 = std::rotl(k1, 31);
    k1 *= c2;
    h1 ^= k1;
    h1 = std::rotl(h1, 27);
    h1 += h2;
    h1 = h1 * 5 + 0x52dce729;

    k2 *= c2;
    k2 = std::rotl(k2, 33);
    k2 *= c1;
    h2 ^= k2;
    h2 = std::rotl(h2, 31);
    h2 += h1;
    h2 = h2 * 5 + 0x38495ab5;
  }

  const unsigned char* tail = data + nblocks * 16;
  std::uint64_t k1 = 0;
  std::uint64_t k2 = 0;
  switch (len & 15) {
    case 15: k2 ^= std::uint64_t{tail[14]} << 48; [[fallthrough]];
    case 14: k2 ^= std::uint64_t{tail[13]} << 40; [[fallthrough]];
    case 13: k2 ^= std::uint64_t{tail[12]} << 32; [[fallthrough]];
    case 12: k2 ^= std::uint64_t{tail[11]} << 24; [[fallthrough]];
    case 11: k2 ^= std::uint64_t{tail[10]} << 16; [[fallthrough]];
    case 10: k2 ^= std::uint64_t{tail[9]} << 8; [[fallthrough]];
    case 9:
      k2 ^= std::uint64_t{tail[8]};
      k2 *= c2;
      k2 = std::rotl(k2, 33);
      k2 *= c1;
      h2 ^= k2;
      [[fallthrough]];
    case 8: k1 ^= std::uint64_t{tail[7]} << 56; [[fallthrough]];
    case 7: k1 ^= std::uint64_t{tail[6]} << 48; [[fallthrough]];
    case 6: k1 ^= std::uint64_t{tail[5]} << 40; [[fallthrough]];
    case 5: k1 ^= std::uint64_t{tail[4]} << 32; [[fallthrough]];
    case 4: k1 ^= std::uint64_t{tail[3]} << 24; [[fallthrough]];
    case 3: k1 ^= std::uint64_t{tail[2]} << 16; [[fallthrough]];
    case 2: k1 ^= std::uint64_t{tail[1]} << 8; [[fallthrough]];
    case 1:
      k1 ^= std::uint64_t{tail[0]};
      k1 *= c1;
      k1 = std::rotl(k1, 31);
      k1 *= c2;
      h1 ^= k1;
  }

  h1 ^= len;
  h2 ^= len;
  h1 += h2;
  h2 += h1;
  h1 = fmix64(h1);
  h2 = fmix64(h2);
  h1 += h2;
  h2 += h1;
  return {h1, h2};
}

BloomFilter::BloomFilter(BloomParams params)
    : params_(params),
      word_count_(static_cast<std::size_t>((params.m + 63) / 64)),
      words_(std::make_unique<std::atomic<std::uint64_t>[]>(word_count_)) {
  if (params_.m == 0 || params_.k == 0) {
    throw std::invalid_argument("bloom: m and k must be positive");
  }
  for (std::size_t i = 0; i < word_count_; ++i) {
    words_[i].store(0, std::memory_order_relaxed);
  }
}

void BloomFilter::insert(std::string_view key) {
  for_each_position(key, [this](std::uint64_t bit) {
    words_[bit / 64].fetch_or(std::uint64_t{1} << (bit % 64), std::memory_order_release);
  });
}

bool BloomFilter::maybe_contains(std::string_view key) const {
  bool all_set = true;
  for_each_position(key, [&](std::uint64_t bit) {
    if (all_set) {
      const auto word = words_[bit / 64].load(std::memory_order_acquire);
      all_set = (word >> (bit % 64)) & 1U;
    }
  });
  return all_set;
}

std::uint64_t BloomFilter::popcount() const {
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < word_count_; ++i) {
    total += static_cast<std::uint64_t>(std::popcount(words_[i].load(std::memory_order_relaxed)));
  }
  return total;
}

}  // namespace ticketing::bloom
