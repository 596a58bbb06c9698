#include "iterdpo/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "iterdpo/errors.hpp"
#include "iterdpo/hash.hpp"
#include "iterdpo/jsonl.hpp"
#include "iterdpo/parallel.hpp"

namespace iterdpo {

namespace {
constexpr int kDatasetFormatVersion = 1;
constexpr int kContextFormatVersion = 1;
constexpr double kJudgeTieEps = 1e-12;
constexpr int kVerbosityLenCap = 32;

Json tokens_to_json(const TokenSeq& seq) {
  Json arr = Json::array();
  for (Token t : seq) arr.push_back(t);
  return arr;
}

TokenSeq tokens_from_json(const Json& arr) {
  TokenSeq seq;
  seq.reserve(arr.size());
  for (const auto& v : arr) seq.push_back(v.get<Token>());
  return seq;
}
}  // namespace

std::string to_string(ContextMode m) {
  switch (m) {
    case ContextMode::na: return "na";
    case ContextMode::fixed: return "fixed";
    case ContextMode::renew: return "renew";
    case ContextMode::retrospective: return "retrospective";
  }
  throw ArgumentError("bad context mode");
}

ContextMode context_mode_from_string(const std::string& s) {
  if (s == "na") return ContextMode::na;
  if (s == "fixed") return ContextMode::fixed;
  if (s == "renew") return ContextMode::renew;
  if (s == "retrospective") return ContextMode::retrospective;
  throw ConfigError("unknown context mode: " + s);
}

std::uint64_t VisualContext::hash() const {
  Hasher64 h;
  h.update(sample_id);
  h.update_i64(iteration);
  h.update(to_string(mode));
  h.update_tokens(tokens);
  return h.digest();
}

void PipelineConfig::validate() const {
  if (!(temperature >= 0.0)) throw ConfigError("pipeline.temperature must be >= 0");
  if (response_max_len < 1) throw ConfigError("pipeline.response_max_len must be >= 1");
  if (context_max_len < 1) throw ConfigError("pipeline.context_max_len must be >= 1");
  if (resample_attempts < 1) {
    throw ConfigError("pipeline.resample_attempts must be >= 1");
  }
  if (threads < 1) throw ConfigError("pipeline.threads must be >= 1");
}

ResponsePair sample_response_pair(const PolicyCheckpoint& policy,
                                  const std::vector<Frame>& frames,
                                  const TokenSeq& instruction, double temperature,
                                  std::uint64_t seed_1, std::uint64_t seed_2,
                                  int resample_attempts, int max_len) {
  TokenSeq prompt = make_question_prompt(frames, instruction);
  ResponsePair pair;
  pair.seed_1 = seed_1;
  pair.seed_2 = seed_2;
  for (int attempt = 0; attempt < resample_attempts; ++attempt) {
    if (attempt > 0) {
      pair.seed_1 = derive_seed(seed_1, "retry", static_cast<std::uint64_t>(attempt));
      pair.seed_2 = derive_seed(seed_2, "retry", static_cast<std::uint64_t>(attempt));
    }
    pair.y1 = sample(policy, prompt, temperature, max_len, pair.seed_1).tokens;
    pair.y2 = sample(policy, prompt, temperature, max_len, pair.seed_2).tokens;
    if (pair.y1 != pair.y2 && payload_len(pair.y1) >= 1 && payload_len(pair.y2) >= 1) {
      return pair;
    }
  }
  pair.degenerate = true;
  if (pair.y1 == pair.y2) {
    pair.skip_reason = temperature == 0.0 ? "degenerate-greedy" : "degenerate-pair";
  } else {
    pair.skip_reason = "degenerate-empty";
  }
  return pair;
}

VisualContext generate_context(const PolicyCheckpoint& policy,
                               const std::string& sample_id,
                               const std::vector<Frame>& frames,
                               const VisualContext* prev, ContextMode mode,
                               int iteration, int max_len) {
  VisualContext ctx;
  ctx.sample_id = sample_id;
  ctx.iteration = iteration;
  ctx.mode = mode;

  switch (mode) {
    case ContextMode::na:
      return ctx;
    case ContextMode::fixed:
      if (iteration > 1) {
        if (prev == nullptr) {
          throw StateError("fixed mode needs the iteration-1 context for " +
                           sample_id);
        }
        ctx.tokens = prev->tokens;
        ctx.parent_hash = prev->hash();
        return ctx;
      }
      break;  // first iteration generates fresh, parent-free
    case ContextMode::renew:
      break;
    case ContextMode::retrospective:
      if (iteration > 1 && prev == nullptr) {
        throw StateError("retrospective mode needs the previous context for " +
                         sample_id);
      }
      break;
  }

  const TokenSeq* prev_tokens = nullptr;
  if (mode == ContextMode::retrospective && iteration > 1) {
    prev_tokens = &prev->tokens;
    ctx.parent_hash = prev->hash();
  }
  TokenSeq prompt = make_context_prompt(frames, prev_tokens);
  ctx.tokens = greedy_decode(policy, prompt, max_len).tokens;
  return ctx;
}

namespace {
double judge_score(const PolicyCheckpoint& policy, const TokenSeq& judge_prompt,
                   const TokenSeq& y, const JudgeConfig& config) {
  double lp = log_prob(policy, judge_prompt, y);
  double score = lp;
  int len = payload_len(y);
  if (config.length_normalize) {
    score = lp / static_cast<double>(std::max(1, len));
  }
  score += config.lambda_len * std::min(len, kVerbosityLenCap);
  return score;
}
}  // namespace

JudgeOutcome judge_preference(const PolicyCheckpoint& policy,
                              const std::vector<Frame>& frames,
                              const TokenSeq& instruction,
                              const TokenSeq& context_tokens, const TokenSeq& y1,
                              const TokenSeq& y2, const JudgeConfig& config) {
  if (y1 == y2) throw ArgumentError("judge needs two distinct candidates");

  TokenSeq prompt_1 = make_judge_prompt(frames, instruction, context_tokens, y2, y1);
  TokenSeq prompt_2 = make_judge_prompt(frames, instruction, context_tokens, y1, y2);

  JudgeOutcome out;
  out.score_1 = judge_score(policy, prompt_1, y1, config);
  out.score_2 = judge_score(policy, prompt_2, y2, config);
  if (std::abs(out.score_1 - out.score_2) <= kJudgeTieEps) {
    out.first_won = lex_less(y1, y2);
  } else {
    out.first_won = out.score_1 > out.score_2;
  }
  return out;
}

void ContextStore::put(VisualContext ctx) {
  by_key_[{ctx.sample_id, ctx.iteration}] = std::move(ctx);
}

const VisualContext* ContextStore::find(const std::string& sample_id,
                                        int iteration) const {
  auto it = by_key_.find({sample_id, iteration});
  return it == by_key_.end() ? nullptr : &it->second;
}

std::vector<const VisualContext*> ContextStore::iteration_view(int iteration) const {
  std::vector<const VisualContext*> out;
  for (const auto& [key, ctx] : by_key_) {
    if (key.second == iteration) out.push_back(&ctx);
  }
  return out;
}

bool ContextStore::has_iteration(int iteration) const {
  for (const auto& [key, ctx] : by_key_) {
    if (key.second == iteration) return true;
  }
  return false;
}

void ContextStore::save_iteration(int iteration,
                                  const std::filesystem::path& path) const {
  std::vector<Json> lines;
  Json header;
  header["format_version"] = kContextFormatVersion;
  header["iteration"] = iteration;
  lines.push_back(header);
  for (const VisualContext* ctx : iteration_view(iteration)) {
    Json j;
    j["sample_id"] = ctx->sample_id;
    j["iteration"] = ctx->iteration;
    j["mode"] = to_string(ctx->mode);
    j["tokens"] = tokens_to_json(ctx->tokens);
    j["hash"] = hex64(ctx->hash());
    if (ctx->parent_hash) {
      j["parent_hash"] = hex64(*ctx->parent_hash);
    } else {
      j["parent_hash"] = nullptr;
    }
    lines.push_back(j);
  }
  write_jsonl(path, lines);
}

void ContextStore::load_iteration(const std::filesystem::path& path) {
  std::vector<Json> lines = read_jsonl(path);
  if (lines.empty()) throw IntegrityError("context file is empty: " + path.string());
  if (lines.front().value("format_version", -1) != kContextFormatVersion) {
    throw IntegrityError("unsupported context format_version");
  }
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const Json& j = lines[i];
    VisualContext ctx;
    ctx.sample_id = j.at("sample_id").get<std::string>();
    ctx.iteration = j.at("iteration").get<int>();
    ctx.mode = context_mode_from_string(j.at("mode").get<std::string>());
    ctx.tokens = tokens_from_json(j.at("tokens"));
    if (!j.at("parent_hash").is_null()) {
      ctx.parent_hash = parse_hex64(j.at("parent_hash").get<std::string>());
    }
    if (parse_hex64(j.at("hash").get<std::string>()) != ctx.hash()) {
      throw IntegrityError("context hash mismatch for " + ctx.sample_id + " in " +
                           path.string());
    }
    put(std::move(ctx));
  }
}

PreferenceDataset build_preference_dataset(const PolicyCheckpoint& policy,
                                           const Corpus& corpus,
                                           ContextStore& store, ContextMode mode,
                                           const PipelineConfig& config,
                                           std::uint64_t master_seed) {
  config.validate();
  if (policy.iteration < 1) {
    throw ArgumentError("dataset construction needs a policy at iteration >= 1");
  }
  std::vector<const VideoSample*> train = corpus.split_view(Split::train);
  if (train.empty()) throw ArgumentError("train split is empty");

  const int t = policy.iteration;
  PreferenceDataset ds;
  ds.iteration = t;
  ds.mode = mode;
  ds.producer_hash = policy.param_hash();
  ds.master_seed = master_seed;

  struct SampleOutcome {
    VisualContext ctx;
    std::optional<PreferenceRecord> record;
    std::optional<SkipRecord> skip;
  };
  std::vector<SampleOutcome> outcomes(train.size());

  parallel_for(static_cast<int>(train.size()), config.threads, [&](int i) {
    const VideoSample& sample = *train[static_cast<std::size_t>(i)];
    SampleOutcome& out = outcomes[static_cast<std::size_t>(i)];

    const VisualContext* prev = nullptr;
    if (mode == ContextMode::fixed && t > 1) {
      prev = store.find(sample.sample_id, 1);
    } else if (mode == ContextMode::retrospective && t > 1) {
      prev = store.find(sample.sample_id, t - 1);
    }
    out.ctx = generate_context(policy, sample.sample_id, sample.frames, prev,
                               mode, t, config.context_max_len);

    std::uint64_t seed_1 = derive_seed(master_seed, sample.sample_id, "resp1");
    std::uint64_t seed_2 = derive_seed(master_seed, sample.sample_id, "resp2");
    ResponsePair pair = sample_response_pair(
        policy, sample.frames, sample.instruction, config.temperature, seed_1,
        seed_2, config.resample_attempts, config.response_max_len);
    if (pair.degenerate) {
      out.skip = SkipRecord{sample.sample_id, pair.skip_reason};
      return;
    }

    JudgeOutcome verdict =
        judge_preference(policy, sample.frames, sample.instruction,
                         out.ctx.tokens, pair.y1, pair.y2, config.judge);

    PreferenceRecord rec;
    rec.sample_id = sample.sample_id;
    rec.instruction = sample.instruction;
    rec.response_1 = pair.y1;
    rec.response_2 = pair.y2;
    rec.seed_1 = pair.seed_1;
    rec.seed_2 = pair.seed_2;
    rec.chosen = verdict.chosen(pair.y1, pair.y2);
    rec.rejected = verdict.rejected(pair.y1, pair.y2);
    rec.judge_score_1 = verdict.score_1;
    rec.judge_score_2 = verdict.score_2;
    rec.context_ref = out.ctx.hash();
    rec.producer_hash = ds.producer_hash;
    out.record = std::move(rec);
  });

  // train is sorted by sample_id, so emitting by index keeps records sorted
  // regardless of worker completion order.
  for (SampleOutcome& out : outcomes) {
    store.put(std::move(out.ctx));
    if (out.record) ds.records.push_back(std::move(*out.record));
    if (out.skip) ds.skipped.push_back(std::move(*out.skip));
  }
  return ds;
}

std::string serialize_preference_dataset(const PreferenceDataset& ds) {
  Json header;
  header["format_version"] = kDatasetFormatVersion;
  header["iteration"] = ds.iteration;
  header["mode"] = to_string(ds.mode);
  header["producer_hash"] = hex64(ds.producer_hash);
  header["master_seed"] = ds.master_seed;

  std::ostringstream out;
  out << header.dump() << '\n';
  for (const PreferenceRecord& r : ds.records) {
    Json j;
    j["kind"] = "record";
    j["sample_id"] = r.sample_id;
    j["instruction"] = tokens_to_json(r.instruction);
    j["response_1"] = tokens_to_json(r.response_1);
    j["response_2"] = tokens_to_json(r.response_2);
    j["seed_1"] = r.seed_1;
    j["seed_2"] = r.seed_2;
    j["chosen"] = tokens_to_json(r.chosen);
    j["rejected"] = tokens_to_json(r.rejected);
    j["judge_score_1"] = r.judge_score_1;
    j["judge_score_2"] = r.judge_score_2;
    j["context_ref"] = hex64(r.context_ref);
    j["producer_hash"] = hex64(r.producer_hash);
    out << j.dump() << '\n';
  }
  for (const SkipRecord& s : ds.skipped) {
    Json j;
    j["kind"] = "skip";
    j["sample_id"] = s.sample_id;
    j["reason"] = s.reason;
    out << j.dump() << '\n';
  }
  return out.str();
}

void save_preference_dataset(const PreferenceDataset& ds,
                             const std::filesystem::path& path) {
  if (!path.parent_path().empty()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw NotFoundError("cannot open for writing: " + path.string());
  out << serialize_preference_dataset(ds);
  if (!out) throw IntegrityError("write failed: " + path.string());
}

PreferenceDataset load_preference_dataset(const std::filesystem::path& path) {
  std::vector<Json> lines = read_jsonl(path);
  if (lines.empty()) throw IntegrityError("dataset file is empty: " + path.string());
  const Json& header = lines.front();
  if (header.value("format_version", -1) != kDatasetFormatVersion) {
    throw IntegrityError("unsupported dataset format_version");
  }
  PreferenceDataset ds;
  ds.iteration = header.at("iteration").get<int>();
  ds.mode = context_mode_from_string(header.at("mode").get<std::string>());
  ds.producer_hash = parse_hex64(header.at("producer_hash").get<std::string>());
  ds.master_seed = header.at("master_seed").get<std::uint64_t>();

  for (std::size_t i = 1; i < lines.size(); ++i) {
    const Json& j = lines[i];
    if (j.at("kind") == "skip") {
      ds.skipped.push_back(SkipRecord{j.at("sample_id").get<std::string>(),
                                      j.at("reason").get<std::string>()});
      continue;
    }
    PreferenceRecord r;
    r.sample_id = j.at("sample_id").get<std::string>();
    r.instruction = tokens_from_json(j.at("instruction"));
    r.response_1 = tokens_from_json(j.at("response_1"));
    r.response_2 = tokens_from_json(j.at("response_2"));
    r.seed_1 = j.at("seed_1").get<std::uint64_t>();
    r.seed_2 = j.at("seed_2").get<std::uint64_t>();
    r.chosen = tokens_from_json(j.at("chosen"));
    r.rejected = tokens_from_json(j.at("rejected"));
    r.judge_score_1 = j.at("judge_score_1").get<double>();
    r.judge_score_2 = j.at("judge_score_2").get<double>();
    r.context_ref = parse_hex64(j.at("context_ref").get<std::string>());
    r.producer_hash = parse_hex64(j.at("producer_hash").get<std::string>());
    ds.records.push_back(std::move(r));
  }
  return ds;
}

std::vector<DpoBatchItem> to_dpo_items(const PreferenceDataset& ds,
                                       const Corpus& corpus) {
  std::map<std::string, const VideoSample*> by_id;
  for (const VideoSample& s : corpus.samples) by_id[s.sample_id] = &s;

  std::vector<DpoBatchItem> items;
  items.reserve(ds.records.size());
  for (const PreferenceRecord& r : ds.records) {
    auto it = by_id.find(r.sample_id);
    if (it == by_id.end()) {
      throw NotFoundError("dataset references unknown sample " + r.sample_id);
    }
    items.push_back(DpoBatchItem{
        make_question_prompt(it->second->frames, r.instruction), r.chosen,
        r.rejected});
  }
  return items;
}

std::vector<std::string> validate_context_store(const ContextStore& store,
                                                ContextMode mode, int t_max) {
  std::vector<std::string> problems;
  auto complain = [&](const VisualContext& ctx, const std::string& what) {
    problems.push_back("sample " + ctx.sample_id + " iteration " +
                       std::to_string(ctx.iteration) + ": " + what);
  };

  for (int t = 1; t <= t_max; ++t) {
    for (const VisualContext* ctx : store.iteration_view(t)) {
      if (ctx->mode != mode) complain(*ctx, "mode does not match run mode");
      switch (mode) {
        case ContextMode::na:
          if (!ctx->tokens.empty()) complain(*ctx, "na context is not empty");
          if (ctx->parent_hash) complain(*ctx, "na context has a parent");
          break;
        case ContextMode::renew:
          if (ctx->parent_hash) complain(*ctx, "renew context has a parent");
          break;
        case ContextMode::fixed: {
          if (t == 1) {
            if (ctx->parent_hash) complain(*ctx, "first fixed context has a parent");
            break;
          }
          const VisualContext* first = store.find(ctx->sample_id, 1);
          if (first == nullptr) {
            complain(*ctx, "iteration-1 context missing");
          } else {
            if (ctx->tokens != first->tokens) {
              complain(*ctx, "fixed context differs from iteration 1");
            }
            if (!ctx->parent_hash || *ctx->parent_hash != first->hash()) {
              complain(*ctx, "fixed context does not reference iteration 1");
            }
          }
          break;
        }
        case ContextMode::retrospective: {
          if (t == 1) {
            if (ctx->parent_hash) {
              complain(*ctx, "first retrospective context has a parent");
            }
            break;
          }
          // Walk parent links back to iteration 1: exactly t-1 hops.
          const VisualContext* cur = ctx;
          int hops = 0;
          while (cur->parent_hash && hops <= t_max) {
            const VisualContext* parent =
                store.find(cur->sample_id, cur->iteration - 1);
            if (parent == nullptr || parent->hash() != *cur->parent_hash) {
              complain(*ctx, "broken parent link at iteration " +
                                 std::to_string(cur->iteration));
              break;
            }
            cur = parent;
            ++hops;
          }
          if (hops != t - 1) {
            complain(*ctx, "parent chain has " + std::to_string(hops) +
                               " hops, expected " + std::to_string(t - 1));
          } else if (cur->iteration != 1) {
            complain(*ctx, "parent chain does not end at iteration 1");
          }
          break;
        }
      }
    }
  }
  return problems;
}

}  // namespace iterdpo
