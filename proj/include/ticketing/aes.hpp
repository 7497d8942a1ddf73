#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ticketing::aes {

// 16 bytes, column-major: byte (row r, column c) lives at index r + 4c.
using State = std::array<std::uint8_t, 16>;
using Block = State;

namespace detail {

constexpr std::uint8_t xtime(std::uint8_t b) {
  return static_cast<std::uint8_t>((b << 1) ^ ((b & 0x80) ? 0x1b : 0x00));
}

constexpr std::uint8_t gf_mul(std::uint8_t a, std::uint8_t b) {
  std::uint8_t product = 0;
  while (b != 0) {
    if (b & 1) product ^= a;
    a = xtime(a);
    b >>= 1;
  }
  return product;
}

// a^254 = a^-1 in GF(2^8); 0 maps to 0.
constexpr std::uint8_t gf_inverse(std::uint8_t a) {
  std::uint8_t result = 1;
  std::uint8_t base = a;
  for (int e = 254; e > 0; e >>= 1) {
    if (e & 1) result = gf_mul(result, base);
    base = gf_mul(base, base);
  }
  return a == 0 ? 0 : result;
}

constexpr std::uint8_t rotl8(std::uint8_t x, int s) {
  return static_cast<std::uint8_t>((x << s) | (x >> (8 - s)));
}

constexpr std::array<std::uint8_t, 256> make_sbox() {
  std::array<std::uint8_t, 256> box{};
  for (int i = 0; i < 256; ++i) {
    const auto inv = gf_inverse(static_cast<std::uint8_t>(i));
    box[i] = static_cast<std::uint8_t>(inv ^ rotl8(inv, 1) ^ rotl8(inv, 2) ^ rotl8(inv, 3) ^
                                       rotl8(inv, 4) ^ 0x63);
  }
  return box;
}

constexpr std::array<std::uint8_t, 256> invert_table(const std::array<std::uint8_t, 256>& box) {
  std::array<std::uint8_t, 256> inv{};
  for (int i = 0; i < 256; ++i) inv[box[i]] = static_cast<std::uint8_t>(i);
  return inv;
}

}  // namespace detail

inline constexpr std::array<std::uint8_t, 256> kSBox = detail::make_sbox();
inline constexpr std::array<std::uint8_t, 256> kInvSBox = detail::invert_table(kSBox);

using detail::gf_mul;

void sub_bytes(State& s);
void inv_sub_bytes(State& s);
void shift_rows(State& s);
void inv_shift_rows(State& s);
void mix_columns(State& s);
void inv_mix_columns(State& s);
void add_round_key(State& s, const Block& round_key);

class KeySchedule {
 public:
  // Key must be 16, 24 or 32 bytes; rounds are 10, 12 or 14 respectively.
  explicit KeySchedule(std::span<const std::uint8_t> cipher_key);

  int rounds() const { return rounds_; }
  const Block& round_key(int i) const { return round_keys_.at(static_cast<std::size_t>(i)); }

 private:
  int rounds_;
  std::vector<Block> round_keys_;
};

class BlockSizeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

Block encrypt_block(std::span<const std::uint8_t> block, const KeySchedule& ks);
Block decrypt_block(std::span<const std::uint8_t> block, const KeySchedule& ks);

// Deterministic field encryption: PKCS#7 padding, then each 16-byte block is
// enciphered independently. Equal plaintexts give equal ciphertexts so
// encrypted columns remain usable for equality lookups; this is not
// semantically secure.
struct EncryptedField {
  std::vector<std::uint8_t> ciphertext;

  std::string hex() const;
  static EncryptedField from_hex(std::string_view hex);

  bool operator==(const EncryptedField&) const = default;
};

class DecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FieldCodec {
 public:
  explicit FieldCodec(std::span<const std::uint8_t> key) : schedule_(key) {}

  EncryptedField encode(std::string_view plaintext) const;
  std::string decode(const EncryptedField& field) const;

 private:
  KeySchedule schedule_;
};

EncryptedField encode_field(std::string_view plaintext, std::span<const std::uint8_t> key);
std::string decode_field(const EncryptedField& field, std::span<const std::uint8_t> key);

std::string to_hex(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> from_hex(std::string_view hex);

}  // namespace ticketing::aes
