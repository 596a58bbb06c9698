#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "iterdpo/tokens.hpp"

namespace iterdpo {

struct CorpusConfig {
  int n_samples = 2000;
  int f_max = 6;  // max frames per video
  int n_objects = 6;
  int n_colors = 6;
  int n_actions = 6;
  double eval_fraction = 0.2;

  void validate() const;  // throws ConfigError naming the offending field
  bool operator==(const CorpusConfig&) const = default;
};

// Token-id layout of one corpus vocabulary. Specials occupy 0..7, then
// object / color / action attributes, then number tokens 0..f_max, then
// yes/no, then the five question tokens.
struct VocabLayout {
  int n_objects = 0;
  int n_colors = 0;
  int n_actions = 0;
  int f_max = 0;

  static VocabLayout from_config(const CorpusConfig& c) {
    return VocabLayout{c.n_objects, c.n_colors, c.n_actions, c.f_max};
  }

  int object_base() const { return tok::kSpecialCount; }
  int color_base() const { return object_base() + n_objects; }
  int action_base() const { return color_base() + n_colors; }
  int number_base() const { return action_base() + n_actions; }
  int yes_token() const { return number_base() + f_max + 1; }
  int no_token() const { return yes_token() + 1; }
  int q_object() const { return no_token() + 1; }
  int q_color() const { return q_object() + 1; }
  int q_action() const { return q_color() + 1; }
  int q_count() const { return q_action() + 1; }
  int q_present() const { return q_count() + 1; }
  int vocab_size() const { return q_present() + 1; }

  Token object_token(int i) const { return object_base() + i; }
  Token color_token(int i) const { return color_base() + i; }
  Token action_token(int i) const { return action_base() + i; }
  Token number_token(int n) const { return number_base() + n; }

  bool operator==(const VocabLayout&) const = default;
};

// One frame of the symbolic video: (object, color, action) attribute tokens.
struct Frame {
  Token object = 0;
  Token color = 0;
  Token action = 0;

  bool operator==(const Frame&) const = default;
};

enum class Split { train, eval };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct VideoSample {
  std::string sample_id;
  std::vector<Frame> frames;
  TokenSeq instruction;
  TokenSeq truth;  // correct answer payload, no EOS
  Split split = Split::train;
};

struct Corpus {
  CorpusConfig config;
  std::uint64_t seed = 0;
  VocabLayout vocab;
  std::vector<VideoSample> samples;  // sorted by sample_id

  std::vector<const VideoSample*> split_view(Split s) const;
};

// Deterministic generator: the same (config, seed) yields a byte-identical
// corpus. Each sample is drawn from its own derived seed, so shards can be
// generated independently.
Corpus generate_corpus(const CorpusConfig& config, std::uint64_t seed);

// Recomputes the unique correct answer for an instruction against the
// frames. Pure; throws QueryError on instructions outside the rule table.
TokenSeq answer_oracle(const VocabLayout& vocab, const std::vector<Frame>& frames,
                       const TokenSeq& instruction);

// JSONL with a header line {config, format_version, seed, special_tokens,
// vocab_size}, then one sample per line.
std::string serialize_corpus(const Corpus& corpus);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path);

}  // namespace iterdpo
