#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "iterdpo/errors.hpp"
#include "iterdpo/pipeline.hpp"
#include "iterdpo/rng.hpp"

using namespace iterdpo;

namespace {

ArchConfig judge_arch() {
  ArchConfig a;
  a.vocab_size = 16;
  a.embed_dim = 4;
  a.n_layers = 1;
  a.context_window = 48;
  return a;
}

PolicyCheckpoint zero_model(const ArchConfig& arch) {
  PolicyCheckpoint m;
  m.arch = arch;
  m.params = Eigen::VectorXd::Zero(param_count(arch));
  return m;
}

Corpus tiny_corpus(int n, std::uint64_t seed = 4) {
  CorpusConfig cfg;
  cfg.n_samples = n;
  cfg.f_max = 3;
  cfg.n_objects = 3;
  cfg.n_colors = 3;
  cfg.n_actions = 3;
  cfg.eval_fraction = 0.25;
  return generate_corpus(cfg, seed);
}

PolicyCheckpoint corpus_model(const Corpus& corpus, std::uint64_t seed,
                              int iteration) {
  ArchConfig arch;
  arch.vocab_size = corpus.vocab.vocab_size();
  arch.embed_dim = 8;
  arch.n_layers = 1;
  arch.context_window = 128;
  PolicyCheckpoint m = init_checkpoint(arch, seed, 0.25);
  m.iteration = iteration;
  return m;
}

PipelineConfig fast_pipeline() {
  PipelineConfig cfg;
  cfg.temperature = 0.8;
  cfg.response_max_len = 6;
  cfg.context_max_len = 8;
  return cfg;
}

}  // namespace

TEST_CASE("hand-set judge scores are the candidate log-likelihoods") {
  // Position-only model (zero attention, zero wte): the next-token
  // distribution depends only on the position, so both judge prompts induce
  // the same distributions at the scored positions. The table puts 0.9 on
  // token a and 0.05 on token b at the first scored position, and ~1 on EOS
  // at the next one.
  ArchConfig arch = judge_arch();
  PolicyCheckpoint m = zero_model(arch);
  std::vector<Frame> frames = {Frame{8, 9, 10}};
  TokenSeq instruction = {11, 12};
  TokenSeq context;  // empty
  const Token a = 13, b = 14;
  TokenSeq y1 = {a, tok::kEos};
  TokenSeq y2 = {b, tok::kEos};

  TokenSeq judge_prompt = make_judge_prompt(frames, instruction, context, y2, y1);
  const int score_pos = static_cast<int>(judge_prompt.size()) - 1;

  auto wpe = param_segment(m, "wpe");
  auto wout = param_segment(m, "wout");
  wpe(score_pos, 0) = 1.0;
  wpe(score_pos + 1, 1) = 1.0;
  // softmax over 16 logits: solve for p(a)=0.9, p(b)=0.05 with 14 zeros
  double total = 14.0 / 0.05;
  wout(a, 0) = std::log(0.9 * total);
  wout(b, 0) = std::log(0.05 * total);
  wout(tok::kEos, 1) = 60.0;  // p(EOS) = 1 - 15 e^-60

  JudgeConfig cfg;
  JudgeOutcome out = judge_preference(m, frames, instruction, context, y1, y2, cfg);
  CHECK(out.first_won);
  CHECK(out.score_1 == doctest::Approx(std::log(0.9)).epsilon(1e-9));
  CHECK(out.score_2 == doctest::Approx(std::log(0.05)).epsilon(1e-9));
  CHECK(&out.chosen(y1, y2) == &y1);
  CHECK(&out.rejected(y1, y2) == &y2);

  SUBCASE("argument order does not change the winner") {
    JudgeOutcome swapped =
        judge_preference(m, frames, instruction, context, y2, y1, cfg);
    CHECK(!swapped.first_won);  // y1 still wins, now in second position
    CHECK(swapped.score_1 == doctest::Approx(out.score_2).epsilon(1e-12));
    CHECK(swapped.score_2 == doctest::Approx(out.score_1).epsilon(1e-12));
    CHECK(swapped.chosen(y2, y1) == y1);
  }

  SUBCASE("identical candidates are rejected") {
    CHECK_THROWS_AS(judge_preference(m, frames, instruction, context, y1, y1, cfg),
                    ArgumentError);
  }
}

TEST_CASE("exact score ties break toward the lexicographically smaller sequence") {
  PolicyCheckpoint m = zero_model(judge_arch());  // uniform everywhere
  std::vector<Frame> frames = {Frame{8, 9, 10}};
  TokenSeq instruction = {11, 12};
  TokenSeq context;
  TokenSeq y_small = {13, tok::kEos};
  TokenSeq y_big = {14, tok::kEos};

  JudgeConfig cfg;
  JudgeOutcome out =
      judge_preference(m, frames, instruction, context, y_big, y_small, cfg);
  CHECK(out.chosen(y_big, y_small) == y_small);
  JudgeOutcome out2 =
      judge_preference(m, frames, instruction, context, y_small, y_big, cfg);
  CHECK(out2.chosen(y_small, y_big) == y_small);
}

TEST_CASE("a non-empty context changes the judge prompt and usually the scores") {
  SplitMix64 seeds(40);
  int differing = 0;
  const int cases = 200;
  for (int i = 0; i < cases; ++i) {
    PolicyCheckpoint m = init_checkpoint(judge_arch(), seeds.next_u64(), 0.4);
    std::vector<Frame> frames = {
        Frame{static_cast<Token>(8 + seeds.next_below(3)),
              static_cast<Token>(8 + seeds.next_below(3)),
              static_cast<Token>(8 + seeds.next_below(3))}};
    TokenSeq instruction = {static_cast<Token>(11 + seeds.next_below(2)), 12};
    TokenSeq y1 = {static_cast<Token>(13), tok::kEos};
    TokenSeq y2 = {static_cast<Token>(14), tok::kEos};
    TokenSeq ctx = {static_cast<Token>(8 + seeds.next_below(8)),
                    static_cast<Token>(8 + seeds.next_below(8)), tok::kEos};

    TokenSeq with = make_judge_prompt(frames, instruction, ctx, y2, y1);
    TokenSeq without = make_judge_prompt(frames, instruction, {}, y2, y1);
    REQUIRE(with != without);

    JudgeConfig cfg;
    JudgeOutcome o1 = judge_preference(m, frames, instruction, {}, y1, y2, cfg);
    JudgeOutcome o2 = judge_preference(m, frames, instruction, ctx, y1, y2, cfg);
    if (o1.score_1 != o2.score_1 || o1.score_2 != o2.score_2) ++differing;
  }
  CHECK(differing >= cases * 9 / 10);
}

TEST_CASE("response pairs are reproducible and degenerate pairs are detected") {
  Corpus corpus = tiny_corpus(8);
  PolicyCheckpoint m = corpus_model(corpus, 50, 1);
  const VideoSample& s = corpus.samples[0];

  ResponsePair p1 = sample_response_pair(m, s.frames, s.instruction, 0.9, 111,
                                         222, 8, 6);
  ResponsePair p2 = sample_response_pair(m, s.frames, s.instruction, 0.9, 111,
                                         222, 8, 6);
  CHECK(p1.y1 == p2.y1);
  CHECK(p1.y2 == p2.y2);
  CHECK(p1.seed_1 == p2.seed_1);
  CHECK(!p1.degenerate);
  CHECK(p1.y1 != p1.y2);

  ResponsePair greedy = sample_response_pair(m, s.frames, s.instruction, 0.0,
                                             111, 222, 8, 6);
  CHECK(greedy.degenerate);
}

TEST_CASE("context modes honor their contracts") {
  Corpus corpus = tiny_corpus(6);
  PolicyCheckpoint m = corpus_model(corpus, 51, 1);
  const VideoSample& s = corpus.samples[0];

  SUBCASE("na is empty regardless of the video") {
    VisualContext ctx = generate_context(m, s.sample_id, s.frames, nullptr,
                                         ContextMode::na, 3, 8);
    CHECK(ctx.tokens.empty());
    CHECK(!ctx.parent_hash.has_value());
  }

  SUBCASE("fixed reuses iteration 1 verbatim") {
    VisualContext c1 = generate_context(m, s.sample_id, s.frames, nullptr,
                                        ContextMode::fixed, 1, 8);
    CHECK(!c1.tokens.empty());
    VisualContext c4 = generate_context(m, s.sample_id, s.frames, &c1,
                                        ContextMode::fixed, 4, 8);
    CHECK(c4.tokens == c1.tokens);
    CHECK(c4.parent_hash == c1.hash());
    CHECK_THROWS_AS(generate_context(m, s.sample_id, s.frames, nullptr,
                                     ContextMode::fixed, 4, 8),
                    StateError);
  }

  SUBCASE("renew has no parent") {
    VisualContext c2 = generate_context(m, s.sample_id, s.frames, nullptr,
                                        ContextMode::renew, 2, 8);
    CHECK(!c2.parent_hash.has_value());
    CHECK(!c2.tokens.empty());
  }

  SUBCASE("retrospective decode replays as a manual argmax walk") {
    VisualContext c1 = generate_context(m, s.sample_id, s.frames, nullptr,
                                        ContextMode::retrospective, 1, 8);
    VisualContext c2 = generate_context(m, s.sample_id, s.frames, &c1,
                                        ContextMode::retrospective, 2, 8);
    CHECK(c2.parent_hash == c1.hash());

    // independent replay: greedy argmax over the (V, c1) context prompt
    TokenSeq prompt = make_context_prompt(s.frames, &c1.tokens);
    TokenSeq replay;
    for (std::size_t step = 0; step < c2.tokens.size(); ++step) {
      Eigen::VectorXd p = next_token_distribution(m, prompt);
      Token best = 0;
      for (Eigen::Index i = 1; i < p.size(); ++i) {
        if (p[i] > p[best]) best = static_cast<Token>(i);
      }
      replay.push_back(best);
      prompt.push_back(best);
      if (best == tok::kEos) break;
    }
    if (replay.empty() || replay.back() != tok::kEos) replay.push_back(tok::kEos);
    CHECK(c2.tokens == replay);

    CHECK_THROWS_AS(generate_context(m, s.sample_id, s.frames, nullptr,
                                     ContextMode::retrospective, 2, 8),
                    StateError);
  }
}

TEST_CASE("build_preference_dataset composes, persists and validates") {
  Corpus corpus = tiny_corpus(20, 9);
  PolicyCheckpoint m = corpus_model(corpus, 52, 1);
  PipelineConfig cfg = fast_pipeline();

  ContextStore store;
  PreferenceDataset ds =
      build_preference_dataset(m, corpus, store, ContextMode::retrospective, cfg, 777);

  int train_count = static_cast<int>(corpus.split_view(Split::train).size());
  CHECK(static_cast<int>(ds.records.size() + ds.skipped.size()) == train_count);
  CHECK(ds.producer_hash == m.param_hash());
  CHECK(ds.iteration == 1);

  for (const PreferenceRecord& r : ds.records) {
    bool straight = r.chosen == r.response_1 && r.rejected == r.response_2;
    bool swapped = r.chosen == r.response_2 && r.rejected == r.response_1;
    CHECK((straight || swapped));
    double chosen_score = straight ? r.judge_score_1 : r.judge_score_2;
    double rejected_score = straight ? r.judge_score_2 : r.judge_score_1;
    CHECK(chosen_score >= rejected_score - 1e-12);
    const VisualContext* ctx = store.find(r.sample_id, 1);
    REQUIRE(ctx != nullptr);
    CHECK(r.context_ref == ctx->hash());
  }

  SUBCASE("records are sorted by sample_id") {
    for (std::size_t i = 1; i < ds.records.size(); ++i) {
      CHECK(ds.records[i - 1].sample_id < ds.records[i].sample_id);
    }
  }

  SUBCASE("reruns are byte-identical, including with threads") {
    ContextStore store_b;
    PreferenceDataset ds_b = build_preference_dataset(
        m, corpus, store_b, ContextMode::retrospective, cfg, 777);
    CHECK(serialize_preference_dataset(ds) == serialize_preference_dataset(ds_b));

    PipelineConfig threaded = cfg;
    threaded.threads = 4;
    ContextStore store_c;
    PreferenceDataset ds_c = build_preference_dataset(
        m, corpus, store_c, ContextMode::retrospective, threaded, 777);
    CHECK(serialize_preference_dataset(ds) == serialize_preference_dataset(ds_c));
  }

  SUBCASE("dataset file round trip") {
    auto path = std::filesystem::temp_directory_path() / "iterdpo_prefs_rt.jsonl";
    save_preference_dataset(ds, path);
    PreferenceDataset loaded = load_preference_dataset(path);
    CHECK(serialize_preference_dataset(loaded) == serialize_preference_dataset(ds));
    std::filesystem::remove(path);
  }

  SUBCASE("na mode points records at the empty context") {
    ContextStore na_store;
    PreferenceDataset na_ds =
        build_preference_dataset(m, corpus, na_store, ContextMode::na, cfg, 777);
    REQUIRE(!na_ds.records.empty());
    const VisualContext* ctx = na_store.find(na_ds.records[0].sample_id, 1);
    REQUIRE(ctx != nullptr);
    CHECK(ctx->tokens.empty());
    CHECK(na_ds.records[0].context_ref == ctx->hash());
  }
}

TEST_CASE("retrospective chains link back to iteration 1") {
  Corpus corpus = tiny_corpus(10, 14);
  PipelineConfig cfg = fast_pipeline();
  ContextStore store;
  const int t_max = 4;
  for (int t = 1; t <= t_max; ++t) {
    PolicyCheckpoint m = corpus_model(corpus, 60 + static_cast<std::uint64_t>(t), t);
    build_preference_dataset(m, corpus, store, ContextMode::retrospective, cfg,
                             1000 + static_cast<std::uint64_t>(t));
  }
  CHECK(validate_context_store(store, ContextMode::retrospective, t_max).empty());

  // chain length: following parents from c_t reaches c_1 in t-1 hops
  for (const VisualContext* ctx : store.iteration_view(t_max)) {
    int hops = 0;
    const VisualContext* cur = ctx;
    while (cur->parent_hash) {
      cur = store.find(cur->sample_id, cur->iteration - 1);
      REQUIRE(cur != nullptr);
      ++hops;
    }
    CHECK(hops == t_max - 1);
    CHECK(cur->iteration == 1);
  }

  SUBCASE("the validator flags broken stores") {
    ContextStore broken = store;
    VisualContext bad = *store.find(corpus.split_view(Split::train)[0]->sample_id, 2);
    bad.tokens.push_back(tok::kPad);  // tampered tokens break the child's link
    broken.put(bad);
    CHECK(!validate_context_store(broken, ContextMode::retrospective, t_max).empty());
  }
}

TEST_CASE("context store persists per iteration") {
  Corpus corpus = tiny_corpus(8, 15);
  PipelineConfig cfg = fast_pipeline();
  ContextStore store;
  PolicyCheckpoint m = corpus_model(corpus, 70, 1);
  build_preference_dataset(m, corpus, store, ContextMode::renew, cfg, 5);

  auto path = std::filesystem::temp_directory_path() / "iterdpo_ctx_rt.jsonl";
  store.save_iteration(1, path);
  ContextStore loaded;
  loaded.load_iteration(path);
  for (const VisualContext* ctx : store.iteration_view(1)) {
    const VisualContext* other = loaded.find(ctx->sample_id, 1);
    REQUIRE(other != nullptr);
    CHECK(other->tokens == ctx->tokens);
    CHECK(other->hash() == ctx->hash());
  }
  std::filesystem::remove(path);
}

TEST_CASE("degenerate-greedy skips carry the documented reason") {
  Corpus corpus = tiny_corpus(6, 16);
  PolicyCheckpoint m = corpus_model(corpus, 71, 1);
  PipelineConfig cfg = fast_pipeline();
  cfg.temperature = 0.0;
  ContextStore store;
  PreferenceDataset ds =
      build_preference_dataset(m, corpus, store, ContextMode::na, cfg, 6);
  CHECK(ds.records.empty());
  CHECK(!ds.skipped.empty());
  for (const SkipRecord& s : ds.skipped) CHECK(s.reason == "degenerate-greedy");
}

TEST_CASE("empty train split is an argument error") {
  Corpus corpus = tiny_corpus(6, 17);
  for (VideoSample& s : corpus.samples) s.split = Split::eval;
  PolicyCheckpoint m = corpus_model(corpus, 72, 1);
  ContextStore store;
  CHECK_THROWS_AS(build_preference_dataset(m, corpus, store, ContextMode::na,
                                           fast_pipeline(), 7),
                  ArgumentError);

  PolicyCheckpoint base = corpus_model(corpus, 72, 0);
  CHECK_THROWS_AS(build_preference_dataset(base, corpus, store, ContextMode::na,
                                           fast_pipeline(), 7),
                  ArgumentError);
}
