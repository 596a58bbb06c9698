#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "iterdpo/diagnostics.hpp"
#include "iterdpo/dpo.hpp"
#include "iterdpo/jsonl.hpp"
#include "iterdpo/pipeline.hpp"
#include "iterdpo/policy.hpp"
#include "iterdpo/toy_world.hpp"

namespace iterdpo {

// Maximum-likelihood warm-up of the base model on (prompt -> truth) pairs
// from the train split; stands in for starting from an instruction-tuned
// model.
struct PretrainConfig {
  int epochs = 4;
  double learning_rate = 0.5;
  int batch_size = 16;

  void validate() const;
};

struct RunConfig {
  CorpusConfig corpus;
  ArchConfig arch;
  DpoConfig dpo;
  PretrainConfig pretrain;
  PipelineConfig pipeline;
  int iterations = 9;  // T
  ContextMode mode = ContextMode::retrospective;
  std::uint64_t master_seed = 1;
  double init_std = 0.08;

  void validate() const;
  Json to_json() const;
  static RunConfig from_json(const Json& j);
};

// run/
//   config.json  corpus.jsonl  state.json
//   ckpt/iter_<t>.bin  prefs/iter_<t>.jsonl  ctx/iter_<t>.jsonl
//   logs/*.jsonl  reports/*
struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path config_file() const { return root / "config.json"; }
  std::filesystem::path corpus_file() const { return root / "corpus.jsonl"; }
  std::filesystem::path state_file() const { return root / "state.json"; }
  std::filesystem::path ckpt_file(int t) const {
    return root / "ckpt" / ("iter_" + std::to_string(t) + ".bin");
  }
  std::filesystem::path prefs_file(int t) const {
    return root / "prefs" / ("iter_" + std::to_string(t) + ".jsonl");
  }
  std::filesystem::path ctx_file(int t) const {
    return root / "ctx" / ("iter_" + std::to_string(t) + ".jsonl");
  }
  std::filesystem::path log_file(const std::string& name) const {
    return root / "logs" / (name + ".jsonl");
  }
  std::filesystem::path reports_dir() const { return root / "reports"; }
};

struct ArtifactRef {
  std::string file;  // relative to the run root
  std::uint64_t file_hash = 0;
};

// One row of the persisted run state. t = 0 is the pretrained base plus the
// oracle-judged seed preferences; t >= 1 are the DPO-trained models with the
// artifacts their iteration produced.
struct StateEntry {
  int t = 0;
  std::uint64_t policy_ref = 0;     // param_hash of the checkpoint at t
  std::uint64_t reference_ref = 0;  // frozen reference for iteration t
  std::optional<std::uint64_t> dataset_ref;  // file hash of prefs at t
  ArtifactRef ckpt;
  std::optional<ArtifactRef> prefs;
  std::optional<ArtifactRef> ctx;
};

struct RunState {
  Json config_snapshot;
  ContextMode mode = ContextMode::retrospective;
  std::uint64_t master_seed = 0;
  ArtifactRef corpus;
  std::vector<StateEntry> entries;  // t = 0, 1, ...

  const StateEntry* find(int t) const;
};

void save_state(const RunState& state, const std::filesystem::path& path);
RunState load_state(const std::filesystem::path& path);

// Recomputes the hash of every referenced artifact file; throws
// NotFoundError / IntegrityError naming the artifact.
void verify_state_artifacts(const RunPaths& paths, const RunState& state);

// External view of one loop iteration.
struct IterationState {
  int t = 0;
  std::uint64_t policy_ref = 0;
  std::uint64_t reference_ref = 0;
  std::optional<std::uint64_t> dataset_ref;
  ContextMode mode = ContextMode::retrospective;
};

PolicyCheckpoint pretrain_base(const Corpus& corpus, const RunConfig& config,
                               std::vector<TrainStepLog>* log = nullptr);

// Oracle-judged preferences over base-policy response pairs; the
// correctness-first grader stands in for annotated seed data. Oracle ties
// are skipped.
PreferenceDataset build_seed_preferences(const PolicyCheckpoint& base,
                                         const Corpus& corpus,
                                         const RunConfig& config);

// Trains the initial model: one DPO pass of base against itself on the seed
// preferences. Returns iteration 1.
PolicyCheckpoint init_model(const PolicyCheckpoint& base,
                            const PreferenceDataset& seed_prefs,
                            const Corpus& corpus, const RunConfig& config,
                            std::vector<TrainStepLog>* log = nullptr);

// Creates the run directory: resolved config, corpus, base checkpoint, seed
// preferences, the iteration-1 model and the initial state. Idempotent:
// existing artifacts are verified by hash instead of rewritten.
void init_run(const RunPaths& paths, const RunConfig& config);

// Extends the run to `to_T` iterations (resume-safe; picks up after the
// last complete iteration in state.json). Returns the full chain. threads
// caps the per-sample fan-out and never changes the produced bytes.
std::vector<IterationState> run_iterations(const RunPaths& paths, int to_T,
                                           int threads = 1);

std::vector<IterationState> read_iteration_chain(const RunPaths& paths);

// Length-bias and accuracy curves for every persisted iteration; writes
// reports/length_report.{json,csv} and reports/accuracy.{json,csv}.
Json collect_reports(const RunPaths& paths, bool write_files);

}  // namespace iterdpo
