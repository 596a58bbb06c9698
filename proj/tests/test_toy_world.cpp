#include <doctest.h>

#include <filesystem>
#include <set>
#include <sstream>

#include "iterdpo/errors.hpp"
#include "iterdpo/toy_world.hpp"

using namespace iterdpo;

namespace {

CorpusConfig small_config(int n) {
  CorpusConfig c;
  c.n_samples = n;
  c.f_max = 4;
  c.n_objects = 4;
  c.n_colors = 4;
  c.n_actions = 4;
  c.eval_fraction = 0.2;
  return c;
}

// Independent line counter over the serialized JSONL text; deliberately does
// not go through the corpus structs.
std::pair<int, int> count_split_lines(const std::string& jsonl) {
  std::istringstream in(jsonl);
  std::string line;
  int train = 0, eval = 0;
  while (std::getline(in, line)) {
    if (line.find("\"split\":\"train\"") != std::string::npos) ++train;
    if (line.find("\"split\":\"eval\"") != std::string::npos) ++eval;
  }
  return {train, eval};
}

}  // namespace

TEST_CASE("single-sample corpus is oracle-consistent") {
  Corpus corpus = generate_corpus(small_config(1), 7);
  REQUIRE(corpus.samples.size() == 1);
  const VideoSample& s = corpus.samples[0];
  CHECK(answer_oracle(corpus.vocab, s.frames, s.instruction) == s.truth);
  CHECK(s.truth.size() <= 8);
  CHECK(s.instruction.size() <= 16);
}

TEST_CASE("same (config, seed) gives byte-identical corpora") {
  CorpusConfig cfg = small_config(50);
  std::string a = serialize_corpus(generate_corpus(cfg, 42));
  std::string b = serialize_corpus(generate_corpus(cfg, 42));
  CHECK(a == b);
  std::string c = serialize_corpus(generate_corpus(cfg, 43));
  CHECK(a != c);
}

TEST_CASE("200 samples at eval_fraction 0.2 split 160/40") {
  Corpus corpus = generate_corpus(small_config(200), 13);
  std::string jsonl = serialize_corpus(corpus);
  auto [train, eval] = count_split_lines(jsonl);
  CHECK(train == 160);
  CHECK(eval == 40);
}

TEST_CASE("split ids are disjoint and unique") {
  Corpus corpus = generate_corpus(small_config(100), 3);
  std::set<std::string> train_ids, eval_ids;
  for (const VideoSample& s : corpus.samples) {
    bool inserted = (s.split == Split::train)
                        ? train_ids.insert(s.sample_id).second
                        : eval_ids.insert(s.sample_id).second;
    CHECK(inserted);
  }
  for (const std::string& id : train_ids) CHECK(eval_ids.count(id) == 0);
  CHECK(!train_ids.empty());
  CHECK(!eval_ids.empty());
}

TEST_CASE("answer oracle rule-table lookups") {
  CorpusConfig cfg = small_config(1);
  VocabLayout vocab = VocabLayout::from_config(cfg);
  std::vector<Frame> frames = {
      Frame{vocab.object_token(2), vocab.color_token(3), vocab.action_token(0)},
      Frame{vocab.object_token(1), vocab.color_token(0), vocab.action_token(0)},
  };

  SUBCASE("color of frame 1") {
    TokenSeq q = {static_cast<Token>(vocab.q_color()), vocab.number_token(1)};
    CHECK(answer_oracle(vocab, frames, q) == TokenSeq{vocab.color_token(3)});
    // purity
    CHECK(answer_oracle(vocab, frames, q) == answer_oracle(vocab, frames, q));
  }
  SUBCASE("object and action lookups") {
    TokenSeq qo = {static_cast<Token>(vocab.q_object()), vocab.number_token(2)};
    CHECK(answer_oracle(vocab, frames, qo) == TokenSeq{vocab.object_token(1)});
    TokenSeq qa = {static_cast<Token>(vocab.q_action()), vocab.number_token(1)};
    CHECK(answer_oracle(vocab, frames, qa) == TokenSeq{vocab.action_token(0)});
  }
  SUBCASE("count and presence") {
    TokenSeq qc = {static_cast<Token>(vocab.q_count()), vocab.action_token(0)};
    CHECK(answer_oracle(vocab, frames, qc) == TokenSeq{vocab.number_token(2)});
    TokenSeq qp = {static_cast<Token>(vocab.q_present()), vocab.object_token(2)};
    CHECK(answer_oracle(vocab, frames, qp) ==
          TokenSeq{static_cast<Token>(vocab.yes_token())});
    TokenSeq qn = {static_cast<Token>(vocab.q_present()), vocab.object_token(3)};
    CHECK(answer_oracle(vocab, frames, qn) ==
          TokenSeq{static_cast<Token>(vocab.no_token())});
  }
  SUBCASE("malformed instructions") {
    CHECK_THROWS_AS(answer_oracle(vocab, frames, TokenSeq{vocab.q_color()}),
                    QueryError);
    TokenSeq out_of_range = {static_cast<Token>(vocab.q_color()),
                             vocab.number_token(3)};
    CHECK_THROWS_AS(answer_oracle(vocab, frames, out_of_range), QueryError);
    TokenSeq bad_arg = {static_cast<Token>(vocab.q_count()), vocab.color_token(0)};
    CHECK_THROWS_AS(answer_oracle(vocab, frames, bad_arg), QueryError);
    TokenSeq bad_q = {tok::kPad, vocab.number_token(1)};
    CHECK_THROWS_AS(answer_oracle(vocab, frames, bad_q), QueryError);
  }
}

TEST_CASE("oracle matches stored truth on every sample of a 1000-sample corpus") {
  Corpus corpus = generate_corpus(small_config(1000), 99);
  for (const VideoSample& s : corpus.samples) {
    REQUIRE(answer_oracle(corpus.vocab, s.frames, s.instruction) == s.truth);
  }
}

TEST_CASE("corpus save/load round trip is identity") {
  Corpus corpus = generate_corpus(small_config(60), 5);
  auto path = std::filesystem::temp_directory_path() / "iterdpo_corpus_rt.jsonl";
  save_corpus(corpus, path);
  Corpus loaded = load_corpus(path);
  CHECK(serialize_corpus(loaded) == serialize_corpus(corpus));
  std::filesystem::remove(path);
}

TEST_CASE("invalid corpus config names the offending field") {
  CorpusConfig cfg = small_config(10);
  cfg.n_samples = 0;
  CHECK_THROWS_WITH_AS(generate_corpus(cfg, 1),
                       doctest::Contains("n_samples"), ConfigError);
  cfg = small_config(10);
  cfg.eval_fraction = 1.0;
  CHECK_THROWS_WITH_AS(generate_corpus(cfg, 1),
                       doctest::Contains("eval_fraction"), ConfigError);
  cfg = small_config(10);
  cfg.n_colors = 1;
  CHECK_THROWS_WITH_AS(generate_corpus(cfg, 1), doctest::Contains("n_colors"),
                       ConfigError);
}
