#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

#include "iterdpo/tokens.hpp"

namespace iterdpo {

// FNV-1a, 64 bit. Used for content hashes (checkpoints, contexts, files)
// and for deriving per-sample seeds from a master seed. Input bytes are
// always fed in a documented, platform-independent order (integers as
// little-endian), so hashes are stable across runs and machines.
class Hasher64 {
 public:
  Hasher64& update(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      state_ ^= static_cast<std::uint64_t>(p[i]);
      state_ *= 0x100000001b3ULL;
    }
    return *this;
  }

  Hasher64& update(std::string_view s) { return update(s.data(), s.size()); }

  Hasher64& update_u64(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    return update(b, 8);
  }

  Hasher64& update_i64(std::int64_t v) {
    return update_u64(static_cast<std::uint64_t>(v));
  }

  Hasher64& update_f64(double v) {
    std::uint64_t bits;
    static_assert(sizeof(bits) == sizeof(v));
    __builtin_memcpy(&bits, &v, sizeof(bits));
    return update_u64(bits);
  }

  Hasher64& update_tokens(const TokenSeq& seq) {
    update_u64(seq.size());
    for (Token t : seq) update_i64(t);
    return *this;
  }

  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t hash_bytes(const void* data, std::size_t len) {
  return Hasher64().update(data, len).digest();
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

inline std::uint64_t parse_hex64(std::string_view s) {
  if (s.size() != 16) throw std::invalid_argument("expected 16 hex chars");
  std::uint64_t v = 0;
  for (char c : s) {
    v <<= 4;
    if (c >= '0' && c <= '9') {
      v |= static_cast<std::uint64_t>(c - '0');
    } else if (c >= 'a' && c <= 'f') {
      v |= static_cast<std::uint64_t>(c - 'a' + 10);
    } else {
      throw std::invalid_argument("bad hex digit");
    }
  }
  return v;
}

// Seed splitting: per-sample / per-purpose seeds are hashes of the master
// seed plus string tags, so any subset of samples can be regenerated
// independently and in parallel with identical results.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view tag) {
  return Hasher64().update_u64(master).update(tag).digest();
}

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                                 std::uint64_t n) {
  return Hasher64().update_u64(master).update(tag).update_u64(n).digest();
}

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view tag_a,
                                 std::string_view tag_b) {
  return Hasher64().update_u64(master).update(tag_a).update(tag_b).digest();
}

}  // namespace iterdpo
