#include "iterdpo/diagnostics.hpp"

#include <algorithm>

#include "iterdpo/errors.hpp"
#include "iterdpo/prompt.hpp"

namespace iterdpo {

LengthRow length_stats(const PreferenceDataset& ds) {
  if (ds.records.empty()) throw ArgumentError("dataset has no records");

  LengthRow row;
  row.iteration = ds.iteration;
  row.n_records = static_cast<int>(ds.records.size());
  double len_sum = 0.0;
  double ratio_sum = 0.0;
  for (const PreferenceRecord& r : ds.records) {
    int wl = payload_len(r.chosen);
    int ll = payload_len(r.rejected);
    if (ll < 1) {
      throw ArgumentError("record " + r.sample_id + " has an empty rejected response");
    }
    len_sum += wl;
    ratio_sum += static_cast<double>(wl) / static_cast<double>(ll);
  }
  row.avg_chosen_len = len_sum / row.n_records;
  row.avg_ratio = ratio_sum / row.n_records;
  return row;
}

bool contains_contiguous(const TokenSeq& haystack_payload, const TokenSeq& needle) {
  if (needle.empty()) return true;
  if (haystack_payload.size() < needle.size()) return false;
  auto it = std::search(haystack_payload.begin(), haystack_payload.end(),
                        needle.begin(), needle.end());
  return it != haystack_payload.end();
}

namespace {
TokenSeq strip_eos(const TokenSeq& seq) {
  TokenSeq out = seq;
  if (!out.empty() && out.back() == tok::kEos) out.pop_back();
  return out;
}

}  // namespace

double oracle_response_score(const TokenSeq& truth, const TokenSeq& y,
                             double lambda_verbosity) {
  TokenSeq payload = strip_eos(y);
  double score = contains_contiguous(payload, truth) ? 1.0 : 0.0;
  int excess = static_cast<int>(payload.size()) - static_cast<int>(truth.size());
  if (excess > 0) score -= 0.01 * excess;
  score += lambda_verbosity * static_cast<double>(payload.size());
  return score;
}

Verdict oracle_judge(const TokenSeq& truth, const TokenSeq& y_a,
                     const TokenSeq& y_b, double lambda_verbosity) {
  double sa = oracle_response_score(truth, y_a, lambda_verbosity);
  double sb = oracle_response_score(truth, y_b, lambda_verbosity);
  if (sa == sb) return Verdict::tie;
  return sa > sb ? Verdict::a : Verdict::b;
}

DuelReport head_to_head(const PolicyCheckpoint& policy_a,
                        const PolicyCheckpoint& policy_b, const Corpus& corpus,
                        std::uint64_t /*seed*/, int response_max_len) {
  if (policy_a.arch.vocab_size != policy_b.arch.vocab_size) {
    throw CompatibilityError("duelling policies must share a vocabulary");
  }
  std::vector<const VideoSample*> eval = corpus.split_view(Split::eval);
  if (eval.empty()) throw ArgumentError("eval split is empty");

  DuelReport report;
  report.n_eval = static_cast<int>(eval.size());
  for (const VideoSample* sample : eval) {
    TokenSeq prompt = make_question_prompt(sample->frames, sample->instruction);
    TokenSeq ans_a = greedy_decode(policy_a, prompt, response_max_len).tokens;
    TokenSeq ans_b = greedy_decode(policy_b, prompt, response_max_len).tokens;
    switch (oracle_judge(sample->truth, ans_a, ans_b)) {
      case Verdict::a: ++report.wins_a; break;
      case Verdict::b: ++report.wins_b; break;
      case Verdict::tie: ++report.ties; break;
    }
  }
  report.win_rate_a = (report.wins_a + 0.5 * report.ties) / report.n_eval;
  return report;
}

double alignment_accuracy(const std::vector<Verdict>& judge_decisions,
                          const std::vector<Verdict>& oracle_decisions) {
  if (judge_decisions.size() != oracle_decisions.size()) {
    throw ArgumentError("decision lists differ in length");
  }
  if (judge_decisions.empty()) throw ArgumentError("decision lists are empty");
  int agree = 0;
  for (std::size_t i = 0; i < judge_decisions.size(); ++i) {
    if (judge_decisions[i] == oracle_decisions[i]) ++agree;
  }
  return 100.0 * agree / static_cast<double>(judge_decisions.size());
}

double eval_accuracy(const PolicyCheckpoint& policy, const Corpus& corpus,
                     int response_max_len) {
  std::vector<const VideoSample*> eval = corpus.split_view(Split::eval);
  if (eval.empty()) throw ArgumentError("eval split is empty");
  int correct = 0;
  for (const VideoSample* sample : eval) {
    TokenSeq prompt = make_question_prompt(sample->frames, sample->instruction);
    TokenSeq ans = greedy_decode(policy, prompt, response_max_len).tokens;
    if (!ans.empty() && ans.back() == tok::kEos) ans.pop_back();
    if (contains_contiguous(ans, sample->truth)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(eval.size());
}

}  // namespace iterdpo
