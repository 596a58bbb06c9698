#include "iterdpo/prompt.hpp"

#include "iterdpo/errors.hpp"

namespace iterdpo {

TokenSeq sanitize_payload(const TokenSeq& payload) {
  TokenSeq out = payload;
  for (Token& t : out) {
    if (is_special(t)) t = tok::kPad;
  }
  return out;
}

TokenSeq assemble_prompt(PromptRole role, const std::vector<Frame>& frames,
                         const TokenSeq* instruction, const TokenSeq* context,
                         const TokenSeq* candidate_first,
                         const TokenSeq* candidate_last) {
  if (frames.empty()) throw ArgumentError("prompt needs at least one frame");
  if (role == PromptRole::question && instruction == nullptr) {
    throw ArgumentError("question prompt needs an instruction");
  }
  if (role == PromptRole::judge) {
    if (instruction == nullptr || context == nullptr) {
      throw ArgumentError("judge prompt needs instruction and context");
    }
    if (candidate_first == nullptr || candidate_last == nullptr) {
      throw ArgumentError("judge prompt needs both candidates");
    }
  }

  TokenSeq out;
  out.push_back(tok::kBos);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (i > 0) out.push_back(tok::kSep);
    out.push_back(frames[i].object);
    out.push_back(frames[i].color);
    out.push_back(frames[i].action);
  }
  if (context != nullptr && !context->empty()) {
    out.push_back(tok::kRoleCtx);
    TokenSeq c = sanitize_payload(*context);
    out.insert(out.end(), c.begin(), c.end());
  }
  if (instruction != nullptr) {
    out.push_back(tok::kRoleQ);
    out.insert(out.end(), instruction->begin(), instruction->end());
  }
  if (role == PromptRole::judge) {
    out.push_back(tok::kRoleJudge);
    for (const TokenSeq* cand : {candidate_first, candidate_last}) {
      out.push_back(tok::kRoleA);
      TokenSeq c = sanitize_payload(*cand);
      out.insert(out.end(), c.begin(), c.end());
    }
  }
  return out;
}

TokenSeq make_question_prompt(const std::vector<Frame>& frames,
                              const TokenSeq& instruction) {
  return assemble_prompt(PromptRole::question, frames, &instruction);
}

TokenSeq make_context_prompt(const std::vector<Frame>& frames,
                             const TokenSeq* prev_context) {
  return assemble_prompt(PromptRole::context, frames, nullptr, prev_context);
}

TokenSeq make_judge_prompt(const std::vector<Frame>& frames,
                           const TokenSeq& instruction, const TokenSeq& context,
                           const TokenSeq& candidate_other,
                           const TokenSeq& candidate_scored) {
  return assemble_prompt(PromptRole::judge, frames, &instruction, &context,
                         &candidate_other, &candidate_scored);
}

ParsedPrompt parse_prompt(const TokenSeq& prompt) {
  if (prompt.empty() || prompt.front() != tok::kBos) {
    throw ArgumentError("prompt must start with BOS");
  }
  auto is_marker = [](Token t) {
    return t == tok::kRoleCtx || t == tok::kRoleQ || t == tok::kRoleJudge ||
           t == tok::kRoleA;
  };

  ParsedPrompt parsed;
  std::size_t i = 1;

  // Frames: attribute triples joined by SEP, up to the first role marker.
  while (i < prompt.size() && !is_marker(prompt[i])) {
    if (!parsed.frames.empty()) {
      if (prompt[i] != tok::kSep) throw ArgumentError("expected SEP between frames");
      ++i;
    }
    if (i + 2 >= prompt.size() ||
        is_marker(prompt[i]) || is_marker(prompt[i + 1]) || is_marker(prompt[i + 2])) {
      throw ArgumentError("truncated frame triple");
    }
    parsed.frames.push_back(Frame{prompt[i], prompt[i + 1], prompt[i + 2]});
    i += 3;
  }
  if (parsed.frames.empty()) throw ArgumentError("prompt has no frames");

  auto read_segment = [&](std::size_t& pos) {
    TokenSeq seg;
    while (pos < prompt.size() && !is_marker(prompt[pos])) {
      seg.push_back(prompt[pos]);
      ++pos;
    }
    return seg;
  };

  if (i < prompt.size() && prompt[i] == tok::kRoleCtx) {
    ++i;
    parsed.context = read_segment(i);
  }
  if (i < prompt.size() && prompt[i] == tok::kRoleQ) {
    ++i;
    parsed.instruction = read_segment(i);
  }
  if (i < prompt.size() && prompt[i] == tok::kRoleJudge) {
    ++i;
    for (auto* slot : {&parsed.candidate_first, &parsed.candidate_last}) {
      if (i >= prompt.size() || prompt[i] != tok::kRoleA) {
        throw ArgumentError("judge prompt missing candidate block");
      }
      ++i;
      *slot = read_segment(i);
    }
  }
  if (i != prompt.size()) throw ArgumentError("trailing tokens in prompt");
  return parsed;
}

}  // namespace iterdpo
