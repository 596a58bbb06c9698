#include "iterdpo/orchestrator.hpp"

#include <algorithm>
#include <numeric>

#include "iterdpo/errors.hpp"
#include "iterdpo/hash.hpp"
#include "iterdpo/parallel.hpp"
#include "iterdpo/prompt.hpp"
#include "iterdpo/rng.hpp"

namespace iterdpo {

namespace {
constexpr int kStateFormatVersion = 1;

Json artifact_to_json(const ArtifactRef& a) {
  return Json{{"file", a.file}, {"file_hash", hex64(a.file_hash)}};
}

ArtifactRef artifact_from_json(const Json& j) {
  return ArtifactRef{j.at("file").get<std::string>(),
                     parse_hex64(j.at("file_hash").get<std::string>())};
}

ArtifactRef make_artifact(const RunPaths& paths, const std::filesystem::path& p) {
  return ArtifactRef{std::filesystem::relative(p, paths.root).string(),
                     file_hash(p)};
}

void write_train_log(const std::filesystem::path& path,
                     const std::vector<TrainStepLog>& log,
                     const std::string& phase) {
  std::vector<Json> lines;
  lines.reserve(log.size());
  for (const TrainStepLog& s : log) {
    lines.push_back(Json{{"phase", phase},
                         {"iteration", s.iteration},
                         {"epoch", s.epoch},
                         {"step", s.step},
                         {"mean_loss", s.mean_loss},
                         {"grad_norm", s.grad_norm}});
  }
  write_jsonl(path, lines);
}

// Longest token sequence any stage can assemble: the judge prompt plus the
// scored continuation.
int worst_case_sequence_len(const RunConfig& c) {
  int frames = 4 * c.corpus.f_max;  // BOS + 3 per frame + SEP between
  int resp = c.pipeline.response_max_len + 1;
  int ctx = c.pipeline.context_max_len + 1;
  int judge = frames + (1 + ctx) + 3 + (1 + 2 * (1 + resp)) + resp;
  int ctx_gen = frames + (1 + ctx) + ctx;
  return std::max(judge, ctx_gen);
}

}  // namespace

void PretrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("pretrain.epochs must be >= 0");
  if (!(learning_rate >= 0.0)) throw ConfigError("pretrain.learning_rate must be >= 0");
  if (batch_size < 1) throw ConfigError("pretrain.batch_size must be >= 1");
}

void RunConfig::validate() const {
  corpus.validate();
  arch.validate();
  dpo.validate();
  pretrain.validate();
  pipeline.validate();
  if (iterations < 1) throw ConfigError("iterations must be >= 1");
  int needed_vocab = VocabLayout::from_config(corpus).vocab_size();
  if (arch.vocab_size < needed_vocab) {
    throw ConfigError("arch.vocab_size must cover the corpus vocabulary (" +
                      std::to_string(needed_vocab) + " tokens)");
  }
  int needed_window = worst_case_sequence_len(*this);
  if (arch.context_window < needed_window) {
    throw ConfigError("arch.context_window must be >= " +
                      std::to_string(needed_window) +
                      " for these prompt and response lengths");
  }
}

Json RunConfig::to_json() const {
  Json j;
  j["corpus"] = {{"n_samples", corpus.n_samples},
                 {"f_max", corpus.f_max},
                 {"n_objects", corpus.n_objects},
                 {"n_colors", corpus.n_colors},
                 {"n_actions", corpus.n_actions},
                 {"eval_fraction", corpus.eval_fraction}};
  j["arch"] = {{"vocab_size", arch.vocab_size},
               {"embed_dim", arch.embed_dim},
               {"n_layers", arch.n_layers},
               {"context_window", arch.context_window}};
  j["dpo"] = {{"beta", dpo.beta},
              {"learning_rate", dpo.learning_rate},
              {"epochs", dpo.epochs},
              {"batch_size", dpo.batch_size}};
  if (dpo.grad_clip) {
    j["dpo"]["grad_clip"] = *dpo.grad_clip;
  } else {
    j["dpo"]["grad_clip"] = nullptr;
  }
  j["pretrain"] = {{"epochs", pretrain.epochs},
                   {"learning_rate", pretrain.learning_rate},
                   {"batch_size", pretrain.batch_size}};
  j["pipeline"] = {{"temperature", pipeline.temperature},
                   {"response_max_len", pipeline.response_max_len},
                   {"context_max_len", pipeline.context_max_len},
                   {"resample_attempts", pipeline.resample_attempts},
                   {"judge",
                    {{"length_normalize", pipeline.judge.length_normalize},
                     {"lambda_len", pipeline.judge.lambda_len}}}};
  j["iterations"] = iterations;
  j["context_mode"] = to_string(mode);
  j["master_seed"] = master_seed;
  j["init_std"] = init_std;
  return j;
}

RunConfig RunConfig::from_json(const Json& j) {
  RunConfig c;
  if (j.contains("corpus")) {
    const Json& cj = j.at("corpus");
    c.corpus.n_samples = cj.value("n_samples", c.corpus.n_samples);
    c.corpus.f_max = cj.value("f_max", c.corpus.f_max);
    c.corpus.n_objects = cj.value("n_objects", c.corpus.n_objects);
    c.corpus.n_colors = cj.value("n_colors", c.corpus.n_colors);
    c.corpus.n_actions = cj.value("n_actions", c.corpus.n_actions);
    c.corpus.eval_fraction = cj.value("eval_fraction", c.corpus.eval_fraction);
  }
  if (j.contains("arch")) {
    const Json& aj = j.at("arch");
    c.arch.vocab_size = aj.value("vocab_size", c.arch.vocab_size);
    c.arch.embed_dim = aj.value("embed_dim", c.arch.embed_dim);
    c.arch.n_layers = aj.value("n_layers", c.arch.n_layers);
    c.arch.context_window = aj.value("context_window", c.arch.context_window);
  }
  if (j.contains("dpo")) {
    const Json& dj = j.at("dpo");
    c.dpo.beta = dj.value("beta", c.dpo.beta);
    c.dpo.learning_rate = dj.value("learning_rate", c.dpo.learning_rate);
    c.dpo.epochs = dj.value("epochs", c.dpo.epochs);
    c.dpo.batch_size = dj.value("batch_size", c.dpo.batch_size);
    if (dj.contains("grad_clip") && !dj.at("grad_clip").is_null()) {
      c.dpo.grad_clip = dj.at("grad_clip").get<double>();
    }
  }
  if (j.contains("pretrain")) {
    const Json& pj = j.at("pretrain");
    c.pretrain.epochs = pj.value("epochs", c.pretrain.epochs);
    c.pretrain.learning_rate = pj.value("learning_rate", c.pretrain.learning_rate);
    c.pretrain.batch_size = pj.value("batch_size", c.pretrain.batch_size);
  }
  if (j.contains("pipeline")) {
    const Json& pj = j.at("pipeline");
    c.pipeline.temperature = pj.value("temperature", c.pipeline.temperature);
    c.pipeline.response_max_len =
        pj.value("response_max_len", c.pipeline.response_max_len);
    c.pipeline.context_max_len =
        pj.value("context_max_len", c.pipeline.context_max_len);
    c.pipeline.resample_attempts =
        pj.value("resample_attempts", c.pipeline.resample_attempts);
    if (pj.contains("judge")) {
      const Json& jj = pj.at("judge");
      c.pipeline.judge.length_normalize =
          jj.value("length_normalize", c.pipeline.judge.length_normalize);
      c.pipeline.judge.lambda_len = jj.value("lambda_len", c.pipeline.judge.lambda_len);
    }
  }
  c.iterations = j.value("iterations", c.iterations);
  if (j.contains("context_mode")) {
    c.mode = context_mode_from_string(j.at("context_mode").get<std::string>());
  }
  c.master_seed = j.value("master_seed", c.master_seed);
  c.init_std = j.value("init_std", c.init_std);
  return c;
}

const StateEntry* RunState::find(int t) const {
  for (const StateEntry& e : entries) {
    if (e.t == t) return &e;
  }
  return nullptr;
}

void save_state(const RunState& state, const std::filesystem::path& path) {
  Json j;
  j["format_version"] = kStateFormatVersion;
  j["config"] = state.config_snapshot;
  j["context_mode"] = to_string(state.mode);
  j["master_seed"] = state.master_seed;
  j["corpus"] = artifact_to_json(state.corpus);
  Json entries = Json::array();
  for (const StateEntry& e : state.entries) {
    Json ej;
    ej["t"] = e.t;
    ej["policy_ref"] = hex64(e.policy_ref);
    ej["reference_ref"] = hex64(e.reference_ref);
    ej["dataset_ref"] = e.dataset_ref ? Json(hex64(*e.dataset_ref)) : Json(nullptr);
    ej["ckpt"] = artifact_to_json(e.ckpt);
    ej["prefs"] = e.prefs ? artifact_to_json(*e.prefs) : Json(nullptr);
    ej["ctx"] = e.ctx ? artifact_to_json(*e.ctx) : Json(nullptr);
    entries.push_back(ej);
  }
  j["entries"] = entries;

  // Write-then-rename so an interrupt never leaves a torn state file.
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw NotFoundError("cannot open for writing: " + tmp.string());
    out << j.dump(2) << '\n';
  }
  std::filesystem::rename(tmp, path);
}

RunState load_state(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw NotFoundError("state file not found: " + path.string());
  }
  Json j = Json::parse(read_file_bytes(path));
  if (j.value("format_version", -1) != kStateFormatVersion) {
    throw IntegrityError("unsupported state format_version");
  }
  RunState state;
  state.config_snapshot = j.at("config");
  state.mode = context_mode_from_string(j.at("context_mode").get<std::string>());
  state.master_seed = j.at("master_seed").get<std::uint64_t>();
  state.corpus = artifact_from_json(j.at("corpus"));
  for (const Json& ej : j.at("entries")) {
    StateEntry e;
    e.t = ej.at("t").get<int>();
    e.policy_ref = parse_hex64(ej.at("policy_ref").get<std::string>());
    e.reference_ref = parse_hex64(ej.at("reference_ref").get<std::string>());
    if (!ej.at("dataset_ref").is_null()) {
      e.dataset_ref = parse_hex64(ej.at("dataset_ref").get<std::string>());
    }
    e.ckpt = artifact_from_json(ej.at("ckpt"));
    if (!ej.at("prefs").is_null()) e.prefs = artifact_from_json(ej.at("prefs"));
    if (!ej.at("ctx").is_null()) e.ctx = artifact_from_json(ej.at("ctx"));
    state.entries.push_back(std::move(e));
  }
  return state;
}

namespace {
void verify_artifact(const RunPaths& paths, const ArtifactRef& a,
                     const std::string& what) {
  std::filesystem::path p = paths.root / a.file;
  if (!std::filesystem::exists(p)) {
    throw NotFoundError("missing artifact (" + what + "): " + a.file);
  }
  if (file_hash(p) != a.file_hash) {
    throw IntegrityError("artifact hash mismatch (" + what + "): " + a.file);
  }
}
}  // namespace

void verify_state_artifacts(const RunPaths& paths, const RunState& state) {
  verify_artifact(paths, state.corpus, "corpus");
  for (const StateEntry& e : state.entries) {
    std::string t = std::to_string(e.t);
    verify_artifact(paths, e.ckpt, "checkpoint t=" + t);
    if (e.prefs) {
      verify_artifact(paths, *e.prefs,
                      "preference dataset t=" + t + " dataset_ref=" +
                          (e.dataset_ref ? hex64(*e.dataset_ref) : "none"));
    }
    if (e.ctx) verify_artifact(paths, *e.ctx, "context store t=" + t);
  }
}

PolicyCheckpoint pretrain_base(const Corpus& corpus, const RunConfig& config,
                               std::vector<TrainStepLog>* log) {
  PolicyCheckpoint ckpt = init_checkpoint(
      config.arch, derive_seed(config.master_seed, "param-init"), config.init_std);

  std::vector<const VideoSample*> train = corpus.split_view(Split::train);
  if (train.empty()) throw ArgumentError("train split is empty");

  struct Item {
    TokenSeq prompt, target;
  };
  std::vector<Item> items;
  items.reserve(train.size());
  for (const VideoSample* s : train) {
    TokenSeq target = s->truth;
    target.push_back(tok::kEos);
    items.push_back(Item{make_question_prompt(s->frames, s->instruction), target});
  }

  const int n = static_cast<int>(items.size());
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < config.pretrain.epochs; ++epoch) {
    SplitMix64 rng(derive_seed(config.master_seed, "pretrain-shuffle",
                               static_cast<std::uint64_t>(epoch)));
    shuffle(order, rng);
    int step = 0;
    for (int start = 0; start < n; start += config.pretrain.batch_size, ++step) {
      int end = std::min(n, start + config.pretrain.batch_size);
      Eigen::VectorXd grad = Eigen::VectorXd::Zero(ckpt.params.size());
      double nll = 0.0;
      for (int i = start; i < end; ++i) {
        const Item& item =
            items[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
        nll -= log_prob(ckpt, item.prompt, item.target);
        grad += grad_log_prob(ckpt, item.prompt, item.target);
      }
      double inv = 1.0 / static_cast<double>(end - start);
      nll *= inv;
      grad *= inv;
      ckpt.params += config.pretrain.learning_rate * grad;  // likelihood ascent
      if (log) {
        log->push_back(TrainStepLog{0, epoch, step, nll, grad.norm()});
      }
    }
  }
  return ckpt;
}

PreferenceDataset build_seed_preferences(const PolicyCheckpoint& base,
                                         const Corpus& corpus,
                                         const RunConfig& config) {
  std::vector<const VideoSample*> train = corpus.split_view(Split::train);
  if (train.empty()) throw ArgumentError("train split is empty");

  std::uint64_t seed_master = derive_seed(config.master_seed, "prefs", 0);
  PreferenceDataset ds;
  ds.iteration = 0;
  ds.mode = ContextMode::na;
  ds.producer_hash = base.param_hash();
  ds.master_seed = seed_master;

  struct Outcome {
    std::optional<PreferenceRecord> record;
    std::optional<SkipRecord> skip;
  };
  std::vector<Outcome> outcomes(train.size());

  parallel_for(
      static_cast<int>(train.size()), config.pipeline.threads, [&](int i) {
        const VideoSample& sample = *train[static_cast<std::size_t>(i)];
        Outcome& out = outcomes[static_cast<std::size_t>(i)];

        ResponsePair pair = sample_response_pair(
            base, sample.frames, sample.instruction, config.pipeline.temperature,
            derive_seed(seed_master, sample.sample_id, "resp1"),
            derive_seed(seed_master, sample.sample_id, "resp2"),
            config.pipeline.resample_attempts, config.pipeline.response_max_len);
        if (pair.degenerate) {
          out.skip = SkipRecord{sample.sample_id, pair.skip_reason};
          return;
        }

        double s1 = oracle_response_score(sample.truth, pair.y1);
        double s2 = oracle_response_score(sample.truth, pair.y2);
        if (s1 == s2) {
          out.skip = SkipRecord{sample.sample_id, "oracle-tie"};
          return;
        }

        VisualContext empty_ctx;
        empty_ctx.sample_id = sample.sample_id;
        empty_ctx.iteration = 0;
        empty_ctx.mode = ContextMode::na;

        PreferenceRecord rec;
        rec.sample_id = sample.sample_id;
        rec.instruction = sample.instruction;
        rec.response_1 = pair.y1;
        rec.response_2 = pair.y2;
        rec.seed_1 = pair.seed_1;
        rec.seed_2 = pair.seed_2;
        rec.chosen = s1 > s2 ? pair.y1 : pair.y2;
        rec.rejected = s1 > s2 ? pair.y2 : pair.y1;
        rec.judge_score_1 = s1;
        rec.judge_score_2 = s2;
        rec.context_ref = empty_ctx.hash();
        rec.producer_hash = ds.producer_hash;
        out.record = std::move(rec);
      });

  for (Outcome& out : outcomes) {
    if (out.record) ds.records.push_back(std::move(*out.record));
    if (out.skip) ds.skipped.push_back(std::move(*out.skip));
  }
  if (ds.records.empty()) {
    throw ArgumentError("seed preference construction produced no records");
  }
  return ds;
}

PolicyCheckpoint init_model(const PolicyCheckpoint& base,
                            const PreferenceDataset& seed_prefs,
                            const Corpus& corpus, const RunConfig& config,
                            std::vector<TrainStepLog>* log) {
  if (seed_prefs.records.empty()) {
    throw ArgumentError("seed preferences are empty");
  }
  DpoConfig dpo_cfg = config.dpo;
  dpo_cfg.shuffle_seed = derive_seed(config.master_seed, "dpo-shuffle", 0);
  return train_iteration(base, base, to_dpo_items(seed_prefs, corpus), dpo_cfg, log);
}

namespace {

// Corpus bytes are regenerated from (config, seed) and, when the file
// already exists, verified instead of rewritten.
ArtifactRef ensure_corpus(const RunPaths& paths, const RunConfig& config) {
  std::string bytes = serialize_corpus(
      generate_corpus(config.corpus, derive_seed(config.master_seed, "corpus")));
  std::uint64_t expected = hash_bytes(bytes.data(), bytes.size());
  std::filesystem::path p = paths.corpus_file();
  if (std::filesystem::exists(p)) {
    if (file_hash(p) != expected) {
      throw IntegrityError("existing corpus.jsonl does not match this config");
    }
  } else {
    std::filesystem::create_directories(paths.root);
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << bytes;
  }
  return ArtifactRef{"corpus.jsonl", expected};
}

StateEntry make_ckpt_entry(const RunPaths& paths, const PolicyCheckpoint& ckpt,
                           int t) {
  StateEntry e;
  e.t = t;
  e.policy_ref = ckpt.param_hash();
  e.reference_ref = e.policy_ref;
  e.ckpt = make_artifact(paths, paths.ckpt_file(t));
  return e;
}

}  // namespace

void init_run(const RunPaths& paths, const RunConfig& config) {
  config.validate();
  std::filesystem::create_directories(paths.root);

  if (std::filesystem::exists(paths.state_file())) {
    RunState state = load_state(paths.state_file());
    verify_state_artifacts(paths, state);
    if (state.config_snapshot != config.to_json()) {
      throw ConfigError("run directory was initialized with a different config");
    }
    return;  // already initialized and intact
  }

  Json resolved = config.to_json();
  {
    std::ofstream out(paths.config_file(), std::ios::binary | std::ios::trunc);
    out << resolved.dump(2) << '\n';
  }

  RunState state;
  state.config_snapshot = resolved;
  state.mode = config.mode;
  state.master_seed = config.master_seed;
  state.corpus = ensure_corpus(paths, config);

  Corpus corpus = load_corpus(paths.corpus_file());

  std::vector<TrainStepLog> pretrain_log;
  PolicyCheckpoint base = pretrain_base(corpus, config, &pretrain_log);
  write_train_log(paths.log_file("pretrain"), pretrain_log, "pretrain");
  save_checkpoint(base, paths.ckpt_file(0));

  PreferenceDataset seed_prefs = build_seed_preferences(base, corpus, config);
  save_preference_dataset(seed_prefs, paths.prefs_file(0));

  std::vector<TrainStepLog> init_log;
  PolicyCheckpoint first = init_model(base, seed_prefs, corpus, config, &init_log);
  write_train_log(paths.log_file("train_iter_0"), init_log, "dpo");
  save_checkpoint(first, paths.ckpt_file(1));

  StateEntry base_entry = make_ckpt_entry(paths, base, 0);
  base_entry.prefs = make_artifact(paths, paths.prefs_file(0));
  base_entry.dataset_ref = base_entry.prefs->file_hash;
  state.entries.push_back(base_entry);
  state.entries.push_back(make_ckpt_entry(paths, first, 1));

  save_state(state, paths.state_file());
}

namespace {

PolicyCheckpoint load_chain_checkpoint(const RunPaths& paths,
                                       const RunState& state, int t) {
  const StateEntry* entry = state.find(t);
  if (entry == nullptr) {
    throw NotFoundError("state has no entry for iteration " + std::to_string(t));
  }
  PolicyCheckpoint ckpt = load_checkpoint(paths.root / entry->ckpt.file);
  if (ckpt.param_hash() != entry->policy_ref) {
    throw IntegrityError("checkpoint t=" + std::to_string(t) +
                         " does not match its recorded policy_ref");
  }
  if (ckpt.iteration != t) {
    throw IntegrityError("checkpoint t=" + std::to_string(t) +
                         " carries iteration " + std::to_string(ckpt.iteration));
  }
  if (t >= 1) {
    const StateEntry* parent = state.find(t - 1);
    if (parent != nullptr && ckpt.lineage != parent->policy_ref) {
      throw IntegrityError("lineage mismatch on resume at t=" + std::to_string(t));
    }
  }
  return ckpt;
}

}  // namespace

std::vector<IterationState> run_iterations(const RunPaths& paths, int to_T,
                                           int threads) {
  if (to_T < 1) throw ConfigError("--to must be >= 1");
  RunState state = load_state(paths.state_file());
  verify_state_artifacts(paths, state);
  RunConfig config = RunConfig::from_json(state.config_snapshot);
  config.pipeline.threads = std::max(1, threads);

  Corpus corpus = load_corpus(paths.corpus_file());

  int have_t = 0;
  for (const StateEntry& e : state.entries) have_t = std::max(have_t, e.t);

  if (to_T > have_t) {
    // Contexts from completed iterations feed fixed / retrospective modes.
    ContextStore store;
    for (const StateEntry& e : state.entries) {
      if (e.ctx) store.load_iteration(paths.root / e.ctx.value().file);
    }

    PolicyCheckpoint policy = load_chain_checkpoint(paths, state, have_t);
    for (int t = have_t; t < to_T; ++t) {
      std::uint64_t prefs_seed =
          derive_seed(state.master_seed, "prefs", static_cast<std::uint64_t>(t));
      PreferenceDataset ds = build_preference_dataset(
          policy, corpus, store, state.mode, config.pipeline, prefs_seed);
      store.save_iteration(t, paths.ctx_file(t));
      save_preference_dataset(ds, paths.prefs_file(t));

      DpoConfig dpo_cfg = config.dpo;
      dpo_cfg.shuffle_seed =
          derive_seed(state.master_seed, "dpo-shuffle", static_cast<std::uint64_t>(t));
      std::vector<TrainStepLog> log;
      PolicyCheckpoint next =
          train_iteration(policy, policy, to_dpo_items(ds, corpus), dpo_cfg, &log);
      write_train_log(paths.log_file("train_iter_" + std::to_string(t)), log, "dpo");
      save_checkpoint(next, paths.ckpt_file(t + 1));

      // Fill in the artifacts this iteration produced, then append t+1.
      for (StateEntry& e : state.entries) {
        if (e.t == t) {
          e.ctx = make_artifact(paths, paths.ctx_file(t));
          e.prefs = make_artifact(paths, paths.prefs_file(t));
          e.dataset_ref = e.prefs->file_hash;
        }
      }
      state.entries.push_back(make_ckpt_entry(paths, next, t + 1));
      save_state(state, paths.state_file());

      policy = std::move(next);
    }
  }

  std::vector<IterationState> chain;
  for (const StateEntry& e : state.entries) {
    if (e.t < 1 || e.t > to_T) continue;
    chain.push_back(
        IterationState{e.t, e.policy_ref, e.reference_ref, e.dataset_ref, state.mode});
  }
  return chain;
}

std::vector<IterationState> read_iteration_chain(const RunPaths& paths) {
  RunState state = load_state(paths.state_file());
  std::vector<IterationState> chain;
  for (const StateEntry& e : state.entries) {
    if (e.t < 1) continue;
    chain.push_back(
        IterationState{e.t, e.policy_ref, e.reference_ref, e.dataset_ref, state.mode});
  }
  return chain;
}

Json collect_reports(const RunPaths& paths, bool write_files) {
  RunState state = load_state(paths.state_file());
  Corpus corpus = load_corpus(paths.corpus_file());

  Json length_rows = Json::array();
  Json accuracy_rows = Json::array();
  for (const StateEntry& e : state.entries) {
    if (e.t >= 1 && e.prefs) {
      PreferenceDataset ds = load_preference_dataset(paths.root / e.prefs->file);
      LengthRow row = length_stats(ds);
      length_rows.push_back(Json{{"iteration", row.iteration},
                                 {"avg_chosen_len", row.avg_chosen_len},
                                 {"avg_ratio", row.avg_ratio},
                                 {"n_records", row.n_records}});
    }
    if (e.t >= 1) {
      PolicyCheckpoint ckpt = load_checkpoint(paths.root / e.ckpt.file);
      RunConfig config = RunConfig::from_json(state.config_snapshot);
      accuracy_rows.push_back(
          Json{{"iteration", e.t},
               {"eval_accuracy",
                eval_accuracy(ckpt, corpus, config.pipeline.response_max_len)}});
    }
  }

  Json report;
  report["length"] = length_rows;
  report["accuracy"] = accuracy_rows;

  if (write_files) {
    std::filesystem::create_directories(paths.reports_dir());
    {
      std::ofstream out(paths.reports_dir() / "length_report.json",
                        std::ios::binary | std::ios::trunc);
      out << length_rows.dump(2) << '\n';
    }
    {
      std::ofstream out(paths.reports_dir() / "length_report.csv",
                        std::ios::binary | std::ios::trunc);
      out << "iteration,avg_chosen_len,avg_ratio,n_records\n";
      for (const Json& row : length_rows) {
        out << row.at("iteration").dump() << ','
            << row.at("avg_chosen_len").dump() << ',' << row.at("avg_ratio").dump()
            << ',' << row.at("n_records").dump() << '\n';
      }
    }
    {
      std::ofstream out(paths.reports_dir() / "accuracy.json",
                        std::ios::binary | std::ios::trunc);
      out << accuracy_rows.dump(2) << '\n';
    }
    {
      std::ofstream out(paths.reports_dir() / "accuracy.csv",
                        std::ios::binary | std::ios::trunc);
      out << "iteration,eval_accuracy\n";
      for (const Json& row : accuracy_rows) {
        out << row.at("iteration").dump() << ',' << row.at("eval_accuracy").dump()
            << '\n';
      }
    }
  }
  return report;
}

}  // namespace iterdpo
