#include "iterdpo/toy_world.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "iterdpo/errors.hpp"
#include "iterdpo/hash.hpp"
#include "iterdpo/jsonl.hpp"
#include "iterdpo/rng.hpp"

namespace iterdpo {

namespace {
constexpr int kFormatVersion = 1;

std::string make_sample_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "vid%06d", index);
  return buf;
}

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

void CorpusConfig::validate() const {
  if (n_samples < 1) throw ConfigError("corpus.n_samples must be >= 1");
  if (f_max < 1) throw ConfigError("corpus.f_max must be >= 1");
  if (n_objects < 2) throw ConfigError("corpus.n_objects must be >= 2");
  if (n_colors < 2) throw ConfigError("corpus.n_colors must be >= 2");
  if (n_actions < 2) throw ConfigError("corpus.n_actions must be >= 2");
  if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) {
    throw ConfigError("corpus.eval_fraction must be in (0, 1)");
  }
}

std::string to_string(Split s) { return s == Split::train ? "train" : "eval"; }

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "eval") return Split::eval;
  throw ArgumentError("unknown split: " + s);
}

std::vector<const VideoSample*> Corpus::split_view(Split s) const {
  std::vector<const VideoSample*> view;
  for (const auto& sample : samples) {
    if (sample.split == s) view.push_back(&sample);
  }
  return view;
}

TokenSeq answer_oracle(const VocabLayout& vocab, const std::vector<Frame>& frames,
                       const TokenSeq& instruction) {
  if (instruction.size() != 2) {
    throw QueryError("instruction must be [question, argument]");
  }
  const Token q = instruction[0];
  const Token arg = instruction[1];
  const int n_frames = static_cast<int>(frames.size());

  auto frame_for = [&](Token num_tok) -> const Frame& {
    int k = num_tok - vocab.number_base();
    if (num_tok < vocab.number_base() || k < 1 || k > n_frames) {
      throw QueryError("frame index out of range");
    }
    return frames[static_cast<std::size_t>(k - 1)];
  };

  if (q == vocab.q_object()) return {frame_for(arg).object};
  if (q == vocab.q_color()) return {frame_for(arg).color};
  if (q == vocab.q_action()) return {frame_for(arg).action};

  if (q == vocab.q_count()) {
    if (arg < vocab.action_base() || arg >= vocab.action_base() + vocab.n_actions) {
      throw QueryError("count question needs an action token");
    }
    int count = 0;
    for (const Frame& f : frames) {
      if (f.action == arg) ++count;
    }
    return {vocab.number_token(count)};
  }

  if (q == vocab.q_present()) {
    if (arg < vocab.object_base() || arg >= vocab.object_base() + vocab.n_objects) {
      throw QueryError("presence question needs an object token");
    }
    for (const Frame& f : frames) {
      if (f.object == arg) return {static_cast<Token>(vocab.yes_token())};
    }
    return {static_cast<Token>(vocab.no_token())};
  }

  throw QueryError("unknown question token");
}

Corpus generate_corpus(const CorpusConfig& config, std::uint64_t seed) {
  config.validate();

  Corpus corpus;
  corpus.config = config;
  corpus.seed = seed;
  corpus.vocab = VocabLayout::from_config(config);
  const VocabLayout& vocab = corpus.vocab;

  corpus.samples.resize(static_cast<std::size_t>(config.n_samples));
  for (int i = 0; i < config.n_samples; ++i) {
    SplitMix64 rng(derive_seed(seed, "sample", static_cast<std::uint64_t>(i)));
    VideoSample& s = corpus.samples[static_cast<std::size_t>(i)];
    s.sample_id = make_sample_id(i);

    int n_frames = 1 + static_cast<int>(rng.next_below(
                           static_cast<std::uint64_t>(config.f_max)));
    s.frames.resize(static_cast<std::size_t>(n_frames));
    for (Frame& f : s.frames) {
      f.object = vocab.object_token(static_cast<int>(
          rng.next_below(static_cast<std::uint64_t>(config.n_objects))));
      f.color = vocab.color_token(static_cast<int>(
          rng.next_below(static_cast<std::uint64_t>(config.n_colors))));
      f.action = vocab.action_token(static_cast<int>(
          rng.next_below(static_cast<std::uint64_t>(config.n_actions))));
    }

    // Uniform over the three question families; lookups uniform over the
    // three attributes.
    switch (rng.next_below(3)) {
      case 0: {
        int attr = static_cast<int>(rng.next_below(3));
        int k = 1 + static_cast<int>(
                        rng.next_below(static_cast<std::uint64_t>(n_frames)));
        Token q = attr == 0   ? vocab.q_object()
                  : attr == 1 ? vocab.q_color()
                              : vocab.q_action();
        s.instruction = {q, vocab.number_token(k)};
        break;
      }
      case 1: {
        Token a = vocab.action_token(static_cast<int>(
            rng.next_below(static_cast<std::uint64_t>(config.n_actions))));
        s.instruction = {static_cast<Token>(vocab.q_count()), a};
        break;
      }
      default: {
        Token o = vocab.object_token(static_cast<int>(
            rng.next_below(static_cast<std::uint64_t>(config.n_objects))));
        s.instruction = {static_cast<Token>(vocab.q_present()), o};
        break;
      }
    }
    s.truth = answer_oracle(vocab, s.frames, s.instruction);
  }

  // Eval membership: rank samples by a split hash, take the first n_eval.
  // Independent of generation order and stable under reruns.
  int n_eval = static_cast<int>(
      std::llround(static_cast<double>(config.n_samples) * config.eval_fraction));
  n_eval = std::clamp(n_eval, 1, config.n_samples - 1);
  std::vector<int> order(static_cast<std::size_t>(config.n_samples));
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::uint64_t> rank(order.size());
  for (int i = 0; i < config.n_samples; ++i) {
    rank[static_cast<std::size_t>(i)] =
        derive_seed(seed, "split", static_cast<std::uint64_t>(i));
  }
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return rank[static_cast<std::size_t>(a)] < rank[static_cast<std::size_t>(b)];
  });
  for (int j = 0; j < n_eval; ++j) {
    corpus.samples[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])]
        .split = Split::eval;
  }

  return corpus;
}

std::string serialize_corpus(const Corpus& corpus) {
  Json header;
  header["format_version"] = kFormatVersion;
  header["vocab_size"] = corpus.vocab.vocab_size();
  header["special_tokens"] = {
      {"BOS", tok::kBos},         {"EOS", tok::kEos},
      {"SEP", tok::kSep},         {"PAD", tok::kPad},
      {"ROLE_Q", tok::kRoleQ},    {"ROLE_A", tok::kRoleA},
      {"ROLE_CTX", tok::kRoleCtx}, {"ROLE_JUDGE", tok::kRoleJudge}};
  header["config"] = {{"n_samples", corpus.config.n_samples},
                      {"f_max", corpus.config.f_max},
                      {"n_objects", corpus.config.n_objects},
                      {"n_colors", corpus.config.n_colors},
                      {"n_actions", corpus.config.n_actions},
                      {"eval_fraction", corpus.config.eval_fraction}};
  header["seed"] = corpus.seed;

  std::ostringstream out;
  out << header.dump() << '\n';
  for (const VideoSample& s : corpus.samples) {
    Json frames = Json::array();
    for (const Frame& f : s.frames) {
      frames.push_back(Json::array({f.object, f.color, f.action}));
    }
    Json line;
    line["sample_id"] = s.sample_id;
    line["frames"] = frames;
    line["instruction"] = tokens_to_json(s.instruction);
    line["truth"] = tokens_to_json(s.truth);
    line["split"] = to_string(s.split);
    out << line.dump() << '\n';
  }
  return out.str();
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  if (!path.parent_path().empty()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw NotFoundError("cannot open for writing: " + path.string());
  out << serialize_corpus(corpus);
  if (!out) throw IntegrityError("write failed: " + path.string());
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::vector<Json> lines = read_jsonl(path);
  if (lines.empty()) throw IntegrityError("corpus file is empty: " + path.string());

  const Json& header = lines.front();
  if (header.value("format_version", -1) != kFormatVersion) {
    throw IntegrityError("unsupported corpus format_version");
  }
  Corpus corpus;
  const Json& cfg = header.at("config");
  corpus.config.n_samples = cfg.at("n_samples").get<int>();
  corpus.config.f_max = cfg.at("f_max").get<int>();
  corpus.config.n_objects = cfg.at("n_objects").get<int>();
  corpus.config.n_colors = cfg.at("n_colors").get<int>();
  corpus.config.n_actions = cfg.at("n_actions").get<int>();
  corpus.config.eval_fraction = cfg.at("eval_fraction").get<double>();
  corpus.seed = header.at("seed").get<std::uint64_t>();
  corpus.vocab = VocabLayout::from_config(corpus.config);
  if (header.at("vocab_size").get<int>() != corpus.vocab.vocab_size()) {
    throw IntegrityError("corpus header vocab_size does not match config");
  }

  corpus.samples.reserve(lines.size() - 1);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const Json& line = lines[i];
    VideoSample s;
    s.sample_id = line.at("sample_id").get<std::string>();
    for (const auto& fj : line.at("frames")) {
      s.frames.push_back(Frame{fj.at(0).get<Token>(), fj.at(1).get<Token>(),
                               fj.at(2).get<Token>()});
    }
    s.instruction = tokens_from_json(line.at("instruction"));
    s.truth = tokens_from_json(line.at("truth"));
    s.split = split_from_string(line.at("split").get<std::string>());
    corpus.samples.push_back(std::move(s));
  }
  if (static_cast<int>(corpus.samples.size()) != corpus.config.n_samples) {
    throw IntegrityError("corpus sample count does not match header");
  }
  return corpus;
}

}  // namespace iterdpo
