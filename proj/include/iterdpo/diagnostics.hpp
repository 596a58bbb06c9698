#pragma once

#include <cstdint>
#include <vector>

#include "iterdpo/pipeline.hpp"
#include "iterdpo/policy.hpp"
#include "iterdpo/tokens.hpp"
#include "iterdpo/toy_world.hpp"

namespace iterdpo {

struct LengthRow {
  int iteration = 0;
  double avg_chosen_len = 0.0;  // mean |y_w|, EOS excluded
  double avg_ratio = 0.0;       // mean |y_w| / |y_l|
  int n_records = 0;
};

LengthRow length_stats(const PreferenceDataset& ds);

enum class Verdict { a, b, tie };

// Programmable stand-in for an external grader: +1 for containing the truth
// tokens contiguously, -0.01 per token beyond the truth length, plus an
// optional verbosity term for bias experiments. Deterministic.
Verdict oracle_judge(const TokenSeq& truth, const TokenSeq& y_a,
                     const TokenSeq& y_b, double lambda_verbosity = 0.0);

// The scalar score behind oracle_judge; seed-preference construction keeps
// it per response.
double oracle_response_score(const TokenSeq& truth, const TokenSeq& y,
                             double lambda_verbosity = 0.0);

struct DuelReport {
  int wins_a = 0;
  int wins_b = 0;
  int ties = 0;
  int n_eval = 0;
  double win_rate_a = 0.0;  // ties count 0.5
};

// Both policies greedy-decode an answer to every eval prompt (question
// prompt, no context); the oracle judge decides each duel. The seed is
// accepted for interface stability but greedy duels do not consume it.
DuelReport head_to_head(const PolicyCheckpoint& policy_a,
                        const PolicyCheckpoint& policy_b, const Corpus& corpus,
                        std::uint64_t seed = 0, int response_max_len = 12);

// 100 * agreements / total; a tie agrees only with a tie.
double alignment_accuracy(const std::vector<Verdict>& judge_decisions,
                          const std::vector<Verdict>& oracle_decisions);

// Fraction of eval samples whose greedy answer contains the truth tokens
// contiguously.
double eval_accuracy(const PolicyCheckpoint& policy, const Corpus& corpus,
                     int response_max_len = 12);

bool contains_contiguous(const TokenSeq& haystack_payload, const TokenSeq& needle);

}  // namespace iterdpo
