#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "iterdpo/dpo.hpp"
#include "iterdpo/policy.hpp"
#include "iterdpo/prompt.hpp"
#include "iterdpo/tokens.hpp"
#include "iterdpo/toy_world.hpp"

namespace iterdpo {

// How the judge's visual context is produced across iterations:
//   na            no context at all
//   fixed         context from iteration 1 reused verbatim afterwards
//   renew         fresh context every iteration, no parent
//   retrospective context refined from the previous iteration's context
enum class ContextMode { na, fixed, renew, retrospective };

std::string to_string(ContextMode m);
ContextMode context_mode_from_string(const std::string& s);

struct VisualContext {
  std::string sample_id;
  int iteration = 0;
  ContextMode mode = ContextMode::na;
  TokenSeq tokens;  // raw greedy output incl. terminal EOS; empty iff mode na
  std::optional<std::uint64_t> parent_hash;

  std::uint64_t hash() const;
};

struct PreferenceRecord {
  std::string sample_id;
  TokenSeq instruction;
  TokenSeq response_1, response_2;  // EOS-terminated, in sampling order
  std::uint64_t seed_1 = 0, seed_2 = 0;
  TokenSeq chosen, rejected;
  double judge_score_1 = 0.0, judge_score_2 = 0.0;
  std::uint64_t context_ref = 0;    // hash of the VisualContext used
  std::uint64_t producer_hash = 0;  // param_hash of the judging checkpoint
};

struct SkipRecord {
  std::string sample_id;
  std::string reason;
};

struct PreferenceDataset {
  int iteration = 0;
  ContextMode mode = ContextMode::na;
  std::uint64_t producer_hash = 0;
  std::uint64_t master_seed = 0;
  std::vector<PreferenceRecord> records;  // sorted by sample_id
  std::vector<SkipRecord> skipped;
};

struct JudgeConfig {
  bool length_normalize = true;  // divide by response length (excl. EOS)
  double lambda_len = 0.0;       // verbosity prior: + lambda * min(len, 32)
};

struct PipelineConfig {
  double temperature = 0.7;
  int response_max_len = 12;
  int context_max_len = 24;
  int resample_attempts = 8;  // total tries for a distinct response pair
  JudgeConfig judge;
  int threads = 1;

  void validate() const;
};

struct ResponsePair {
  TokenSeq y1, y2;
  std::uint64_t seed_1 = 0, seed_2 = 0;  // seeds of the accepted draw
  bool degenerate = false;  // no acceptable pair within the attempt budget
  std::string skip_reason;  // set iff degenerate
};

// Two independent draws on the question prompt. Identical pairs and pairs
// with an empty response payload (a bare EOS, which no downstream consumer
// can length-score) are redrawn with derived seeds up to resample_attempts
// before the sample is given up as degenerate.
ResponsePair sample_response_pair(const PolicyCheckpoint& policy,
                                  const std::vector<Frame>& frames,
                                  const TokenSeq& instruction, double temperature,
                                  std::uint64_t seed_1, std::uint64_t seed_2,
                                  int resample_attempts, int max_len);

// Context for iteration `iteration` under `mode`. fixed/retrospective with
// iteration > 1 require the stored parent (iteration-1 context for fixed,
// previous iteration's for retrospective).
VisualContext generate_context(const PolicyCheckpoint& policy,
                               const std::string& sample_id,
                               const std::vector<Frame>& frames,
                               const VisualContext* prev, ContextMode mode,
                               int iteration, int max_len);

struct JudgeOutcome {
  bool first_won = false;
  double score_1 = 0.0, score_2 = 0.0;

  const TokenSeq& chosen(const TokenSeq& y1, const TokenSeq& y2) const {
    return first_won ? y1 : y2;
  }
  const TokenSeq& rejected(const TokenSeq& y1, const TokenSeq& y2) const {
    return first_won ? y2 : y1;
  }
};

// Length-normalized log-likelihood of each candidate as the continuation of
// a judge prompt that shows the video, instruction, context and both
// candidates (scored one last). Ties within 1e-12 go to the
// lexicographically smaller sequence.
JudgeOutcome judge_preference(const PolicyCheckpoint& policy,
                              const std::vector<Frame>& frames,
                              const TokenSeq& instruction,
                              const TokenSeq& context_tokens, const TokenSeq& y1,
                              const TokenSeq& y2, const JudgeConfig& config);

// Contexts keyed by (sample_id, iteration); the persistent form is one
// JSONL file per iteration with parent_hash links.
class ContextStore {
 public:
  void put(VisualContext ctx);
  const VisualContext* find(const std::string& sample_id, int iteration) const;
  std::vector<const VisualContext*> iteration_view(int iteration) const;
  bool has_iteration(int iteration) const;

  void save_iteration(int iteration, const std::filesystem::path& path) const;
  void load_iteration(const std::filesystem::path& path);

 private:
  std::map<std::pair<std::string, int>, VisualContext> by_key_;
};

// One full preference-modeling pass: per train sample a context (persisted
// into the store), a response pair, and a judged preference. Per-sample
// seeds derive from (master_seed, sample_id, purpose), so the result is a
// pure function of its arguments no matter how many threads run.
PreferenceDataset build_preference_dataset(const PolicyCheckpoint& policy,
                                           const Corpus& corpus,
                                           ContextStore& store, ContextMode mode,
                                           const PipelineConfig& config,
                                           std::uint64_t master_seed);

std::string serialize_preference_dataset(const PreferenceDataset& ds);
void save_preference_dataset(const PreferenceDataset& ds,
                             const std::filesystem::path& path);
PreferenceDataset load_preference_dataset(const std::filesystem::path& path);

// DPO training items: question prompt as conditioning, judged pair as
// chosen/rejected.
std::vector<DpoBatchItem> to_dpo_items(const PreferenceDataset& ds,
                                       const Corpus& corpus);

// Mode-contract checks over everything stored for iterations 1..t_max.
// Returns problems found (empty means valid).
std::vector<std::string> validate_context_store(const ContextStore& store,
                                                ContextMode mode, int t_max);

}  // namespace iterdpo
