#pragma once

#include <optional>

#include "iterdpo/tokens.hpp"
#include "iterdpo/toy_world.hpp"

namespace iterdpo {

enum class PromptRole { question, context, judge };

// Fixed prompt layout:
//   BOS, frame triples joined by SEP,
//   [ROLE_CTX + context]            when a non-empty context is given,
//   [ROLE_Q + instruction]          when an instruction is given,
//   [ROLE_JUDGE, ROLE_A + first candidate, ROLE_A + last candidate]
//                                   for the judge role.
// Embedded payloads (context, candidates) are sanitized: special ids are
// replaced by PAD, so the role markers above cannot be forged and the
// layout parses back unambiguously. Over sanitized payloads assembly is
// injective.
TokenSeq assemble_prompt(PromptRole role, const std::vector<Frame>& frames,
                         const TokenSeq* instruction = nullptr,
                         const TokenSeq* context = nullptr,
                         const TokenSeq* candidate_first = nullptr,
                         const TokenSeq* candidate_last = nullptr);

TokenSeq make_question_prompt(const std::vector<Frame>& frames,
                              const TokenSeq& instruction);
TokenSeq make_context_prompt(const std::vector<Frame>& frames,
                             const TokenSeq* prev_context);
// The candidate being scored goes last; its tokens are what the judge
// re-reads as the continuation.
TokenSeq make_judge_prompt(const std::vector<Frame>& frames,
                           const TokenSeq& instruction, const TokenSeq& context,
                           const TokenSeq& candidate_other,
                           const TokenSeq& candidate_scored);

struct ParsedPrompt {
  std::vector<Frame> frames;
  std::optional<TokenSeq> context;
  std::optional<TokenSeq> instruction;
  std::optional<TokenSeq> candidate_first;
  std::optional<TokenSeq> candidate_last;

  bool operator==(const ParsedPrompt&) const = default;
};

ParsedPrompt parse_prompt(const TokenSeq& prompt);

// PAD out special ids so a payload can sit inside a prompt segment.
TokenSeq sanitize_payload(const TokenSeq& payload);

}  // namespace iterdpo
