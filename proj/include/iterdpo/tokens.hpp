#pragma once

#include <cstdint>
#include <vector>

namespace iterdpo {

using Token = std::int32_t;
using TokenSeq = std::vector<Token>;

// Reserved token ids 0..7. Every corpus and every model vocabulary starts
// with these; domain tokens (objects, colors, ...) begin at kSpecialCount.
namespace tok {
inline constexpr Token kBos = 0;
inline constexpr Token kEos = 1;
inline constexpr Token kSep = 2;
inline constexpr Token kPad = 3;
inline constexpr Token kRoleQ = 4;
inline constexpr Token kRoleA = 5;
inline constexpr Token kRoleCtx = 6;
inline constexpr Token kRoleJudge = 7;
inline constexpr Token kSpecialCount = 8;
}  // namespace tok

inline bool is_special(Token t) { return t >= 0 && t < tok::kSpecialCount; }

// Response length as used by length diagnostics and the judge's
// normalization: the terminal EOS, when present, is not counted.
inline int payload_len(const TokenSeq& seq) {
  if (!seq.empty() && seq.back() == tok::kEos) {
    return static_cast<int>(seq.size()) - 1;
  }
  return static_cast<int>(seq.size());
}

inline bool lex_less(const TokenSeq& a, const TokenSeq& b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

}  // namespace iterdpo
