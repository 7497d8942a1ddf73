#include "ticketing/aes.hpp"

#include <algorithm>

namespace ticketing::aes {

void sub_bytes(State& s) {
  for (auto& b : s) b = kSBox[b];
}

void inv_sub_bytes(State& s) {
  for (auto& b : s) b = kInvSBox[b];
}

// Row r rotates left by r positions.
void shift_rows(State& s) {
  const State in = s;
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) s[r + 4 * c] = in[r + 4 * ((c + r) % 4)];
  }
}

void inv_shift_rows(State& s) {
  const State in = s;
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) s[r + 4 * ((c + r) % 4)] = in[r + 4 * c];
  }
}

// Each column is multiplied by the circulant matrix [02 03 01 01] over GF(2^8).
void mix_columns(State& s) {
  for (int c = 0; c < 4; ++c) {
    std::uint8_t* col = &s[4 * c];
    const std::uint8_t a0 = col[0], a1 = col[1], a2 = col[2], a3 = col[3];
    col[0] = gf_mul(a0, 2) ^ gf_mul(a1, 3) ^ a2 ^ a3;
    col[1] = a0 ^ gf_mul(a1, 2) ^ gf_mul(a2, 3) ^ a3;
    col[2] = a0 ^ a1 ^ gf_mul(a2, 2) ^ gf_mul(a3, 3);
    col[3] = gf_mul(a0, 3) ^ a1 ^ a2 ^ gf_mul(a3, 2);
  }
}

void inv_mix_columns(State& s) {
  for (int c = 0; c < 4; ++c) {
    std::uint8_t* col = &s[4 * c];
    const std::uint8_t a0 = col[0], a1 = col[1], a2 = col[2], a3 = col[3];
    col[0] = gf_mul(a0, 14) ^ gf_mul(a1, 11) ^ gf_mul(a2, 13) ^ gf_mul(a3, 9);
    col[1] = gf_mul(a0, 9) ^ gf_mul(a1, 14) ^ gf_mul(a2, 11) ^ gf_mul(a3, 13);
    col[2] = gf_mul(a0, 13) ^ gf_mul(a1, 9) ^ gf_mul(a2, 14) ^ gf_mul(a3, 11);
    col[3] = gf_mul(a0, 11) ^ gf_mul(a1, 13) ^ gf_mul(a2, 9) ^ gf_mul(a3, 14);
  }
}

void add_round_key(State& s, const Block& round_key) {
  for (std::size_t i = 0; i < s.size(); ++i) s[i] ^= round_key[i];
}

KeySchedule::KeySchedule(std::span<const std::uint8_t> cipher_key) {
  const std::size_t nk = cipher_key.size() / 4;
  if (cipher_key.size() != 16 && cipher_key.size() != 24 && cipher_key.size() != 32) {
    throw std::invalid_argument("aes: key must be 16, 24 or 32 bytes, got " +
                                std::to_string(cipher_key.size()));
  }
  rounds_ = static_cast<int>(nk) + 6;
  const std::size_t total_words = 4 * static_cast<std::size_t>(rounds_ + 1);

  std::vector<std::array<std::uint8_t, 4>> w(total_words);
  for (std::size_t i = 0; i < nk; ++i) {
    std::copy_n(cipher_key.begin() + static_cast<std::ptrdiff_t>(4 * i), 4, w[i].begin());
  }
  std::uint8_t rcon = 0x01;
  for (std::size_t i = nk; i < total_words; ++i) {
    auto temp = w[i - 1];
    if (i % nk == 0) {
      std::rotate(temp.begin(), temp.begin() + 1, temp.end());
      for (auto& b : temp) b = kSBox[b];
      temp[0] ^= rcon;
      rcon = detail::xtime(rcon);
    } else if (nk > 6 && i % nk == 4) {
      for (auto& b : temp) b = kSBox[b];
    }
    for (int j = 0; j < 4; ++j) w[i][j] = w[i - nk][j] ^ temp[j];
  }

  round_keys_.resize(static_cast<std::size_t>(rounds_ + 1));
  for (std::size_t r = 0; r < round_keys_.size(); ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      std::copy(w[4 * r + c].begin(), w[4 * r + c].end(), round_keys_[r].begin() + 4 * c);
    }
  }
}

namespace {

State load_block(std::span<const std::uint8_t> block) {
  if (block.size() != 16) {
    throw BlockSizeError("aes: block must be 16 bytes, got " + std::to_string(block.size()));
  }
  State s;
  std::copy(block.begin(), block.end(), s.begin());
  return s;
}

}  // namespace

Block encrypt_block(std::span<const std::uint8_t> block, const KeySchedule& ks) {
  State s = load_block(block);
  add_round_key(s, ks.round_key(0));
  for (int round = 1; round < ks.rounds(); ++round) {
    sub_bytes(s);
    shift_rows(s);
    mix_columns(s);
    add_round_key(s, ks.round_key(round));
  }
  sub_bytes(s);
  shift_rows(s);
  add_round_key(s, ks.round_key(ks.rounds()));
  return s;
}

Block decrypt_block(std::span<const std::uint8_t> block, const KeySchedule& ks) {
  State s = load_block(block);
  add_round_key(s, ks.round_key(ks.rounds()));
  inv_shift_rows(s);
  inv_sub_bytes(s);
  for (int round = ks.rounds() - 1; round >= 1; --round) {
    add_round_key(s, ks.round_key(round));
    inv_mix_columns(s);
    inv_shift_rows(s);
    inv_sub_bytes(s);
  }
  add_round_key(s, ks.round_key(0));
  return s;
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0x0f]);
  }
  return out;
}

std::vector<std::uint8_t> from_hex(std::string_view hex) {
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  };
  if (hex.size() % 2 != 0) throw DecodeError("hex: odd number of digits");
  std::vector<std::uint8_t> out(hex.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const int hi = nibble(hex[2 * i]);
    const int lo = nibble(hex[2 * i + 1]);
    if (hi < 0 || lo < 0) throw DecodeError("hex: invalid digit");
    out[i] = static_cast<std::uint8_t>(hi << 4 | lo);
  }
  return out;
}

std::string EncryptedField::hex() const { return to_hex(ciphertext); }

EncryptedField EncryptedField::from_hex(std::string_view hex) {
  EncryptedField field{aes::from_hex(hex)};
  if (field.ciphertext.empty() || field.ciphertext.size() % 16 != 0) {
    throw DecodeError("encrypted field length must be a positive multiple of 16 bytes");
  }
  return field;
}

EncryptedField FieldCodec::encode(std::string_view plaintext) const {
  if (plaintext.empty()) {
    throw std::invalid_argument("aes: refusing to encode an empty field");
  }
  const std::size_t pad = 16 - plaintext.size() % 16;
  std::vector<std::uint8_t> padded(plaintext.begin(), plaintext.end());
  padded.insert(padded.end(), pad, static_cast<std::uint8_t>(pad));

  EncryptedField out;
  out.ciphertext.reserve(padded.size());
  for (std::size_t off = 0; off < padded.size(); off += 16) {
    const Block c = encrypt_block(std::span(padded).subspan(off, 16), schedule_);
    out.ciphertext.insert(out.ciphertext.end(), c.begin(), c.end());
  }
  return out;
}

std::string FieldCodec::decode(const EncryptedField& field) const {
  const auto& ct = field.ciphertext;
  if (ct.empty() || ct.size() % 16 != 0) {
    throw DecodeError("encrypted field length must be a positive multiple of 16 bytes");
  }
  std::string plain;
  plain.reserve(ct.size());
  for (std::size_t off = 0; off < ct.size(); off += 16) {
    const Block p = decrypt_block(std::span(ct).subspan(off, 16), schedule_);
    plain.append(p.begin(), p.end());
  }
  const auto pad = static_cast<std::uint8_t>(plain.back());
  if (pad == 0 || pad > 16) throw DecodeError("bad padding");
  for (std::size_t i = plain.size() - pad; i < plain.size(); ++i) {
    if (static_cast<std::uint8_t>(plain[i]) != pad) throw DecodeError("bad padding");
  }
  plain.erase(plain.end() - pad, plain.end());
  return plain;
}

EncryptedField encode_field(std::string_view plaintext, std::span<const std::uint8_t> key) {
  return FieldCodec(key).encode(plaintext);
}

std::string decode_field(const EncryptedField& field, std::span<const std::uint8_t> key) {
  return FieldCodec(key).decode(field);
}

}  // namespace ticketing::aes
