// Command-line front end: reproducible end-to-end runs of the iterative
// self-judged DPO loop on the synthetic video-QA world.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "iterdpo/diagnostics.hpp"
#include "iterdpo/errors.hpp"
#include "iterdpo/hash.hpp"
#include "iterdpo/jsonl.hpp"
#include "iterdpo/orchestrator.hpp"

namespace {

using namespace iterdpo;

RunConfig load_run_config(const std::string& config_path, int threads) {
  RunConfig config;
  if (!config_path.empty()) {
    if (!std::filesystem::exists(config_path)) {
      throw NotFoundError("config file not found: " + config_path);
    }
    config = RunConfig::from_json(Json::parse(read_file_bytes(config_path)));
  }
  config.pipeline.threads = std::max(1, threads);
  config.validate();
  return config;
}

int cmd_gen_data(const std::string& config_path, std::uint64_t seed,
                 bool seed_given, const std::string& out, int threads) {
  RunConfig config = load_run_config(config_path, threads);
  std::uint64_t corpus_seed =
      seed_given ? seed : derive_seed(config.master_seed, "corpus");
  Corpus corpus = generate_corpus(config.corpus, corpus_seed);
  std::string bytes = serialize_corpus(corpus);

  std::filesystem::path path(out);
  if (std::filesystem::exists(path)) {
    std::string existing = read_file_bytes(path);
    if (existing == bytes) {
      std::cout << "corpus exists and verifies: " << out << "\n";
      return 0;
    }
    throw IntegrityError("existing file differs from this (config, seed): " + out);
  }
  if (!path.parent_path().empty()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f << bytes;
  std::cout << "wrote " << corpus.samples.size() << " samples to " << out << "\n";
  return 0;
}

int cmd_init(const std::string& config_path, const std::string& run_dir,
             int threads) {
  RunConfig config = load_run_config(config_path, threads);
  RunPaths paths{run_dir};
  init_run(paths, config);
  RunState state = load_state(paths.state_file());
  std::cout << "initialized run at " << run_dir << "\n"
            << "  base policy_ref  " << hex64(state.find(0)->policy_ref) << "\n"
            << "  pi_1 policy_ref  " << hex64(state.find(1)->policy_ref) << "\n";
  return 0;
}

int cmd_iterate(const std::string& run_dir, const std::string& mode_str, int to_T,
                int threads) {
  RunPaths paths{run_dir};
  RunState state = load_state(paths.state_file());
  if (!mode_str.empty()) {
    ContextMode requested = context_mode_from_string(mode_str);
    if (requested != state.mode) {
      int have_t = 0;
      for (const StateEntry& e : state.entries) have_t = std::max(have_t, e.t);
      if (have_t > 1) {
        throw ConfigError("run already iterated with mode " + to_string(state.mode));
      }
      state.mode = requested;
      Json cfg = state.config_snapshot;
      cfg["context_mode"] = mode_str;
      state.config_snapshot = cfg;
      save_state(state, paths.state_file());
      std::ofstream out(paths.config_file(), std::ios::binary | std::ios::trunc);
      out << cfg.dump(2) << '\n';
    }
  }
  std::vector<IterationState> chain = run_iterations(paths, to_T, threads);
  std::cout << "run has " << chain.size() << " iterations:\n";
  for (const IterationState& s : chain) {
    std::cout << "  t=" << s.t << " policy_ref=" << hex64(s.policy_ref)
              << (s.dataset_ref ? " dataset_ref=" + hex64(*s.dataset_ref) : "")
              << "\n";
  }
  return 0;
}

int cmd_diagnose(const std::string& run_dir) {
  RunPaths paths{run_dir};
  Json report = collect_reports(paths, true);
  std::cout << report.dump(2) << "\n";
  std::cout << "reports written under " << (paths.reports_dir()).string() << "\n";
  return 0;
}

int cmd_duel(const std::string& run_a, const std::string& run_b, int iter,
             const std::string& out) {
  RunPaths pa{run_a}, pb{run_b};
  RunState sa = load_state(pa.state_file());
  RunState sb = load_state(pb.state_file());
  if (sa.corpus.file_hash != sb.corpus.file_hash) {
    throw ConfigError("duelling runs use different corpora");
  }
  const StateEntry* ea = sa.find(iter);
  const StateEntry* eb = sb.find(iter);
  if (ea == nullptr) throw NotFoundError("run A has no iteration " + std::to_string(iter));
  if (eb == nullptr) throw NotFoundError("run B has no iteration " + std::to_string(iter));

  PolicyCheckpoint a = load_checkpoint(pa.root / ea->ckpt.file);
  PolicyCheckpoint b = load_checkpoint(pb.root / eb->ckpt.file);
  Corpus corpus = load_corpus(pa.corpus_file());
  RunConfig config = RunConfig::from_json(sa.config_snapshot);

  DuelReport report =
      head_to_head(a, b, corpus, 0, config.pipeline.response_max_len);
  Json j{{"iter", iter},
         {"run_a", run_a},
         {"run_b", run_b},
         {"wins_a", report.wins_a},
         {"wins_b", report.wins_b},
         {"ties", report.ties},
         {"n_eval", report.n_eval},
         {"win_rate_a", report.win_rate_a}};
  std::cout << j.dump(2) << "\n";
  if (!out.empty()) {
    std::filesystem::path p(out);
    if (!p.parent_path().empty()) std::filesystem::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    f << j.dump(2) << '\n';
  }
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& run_dir,
               int to_T, int threads) {
  RunConfig base_config = load_run_config(config_path, threads);
  int target = to_T > 0 ? to_T : base_config.iterations;

  Json table = Json::array();
  for (ContextMode mode : {ContextMode::na, ContextMode::fixed, ContextMode::renew,
                           ContextMode::retrospective}) {
    RunConfig config = base_config;
    config.mode = mode;
    RunPaths paths{std::filesystem::path(run_dir) / ("mode_" + to_string(mode))};
    init_run(paths, config);
    run_iterations(paths, target, threads);

    RunState state = load_state(paths.state_file());
    Json report = collect_reports(paths, true);
    Json row;
    row["mode"] = to_string(mode);
    row["corpus_hash"] = hex64(state.corpus.file_hash);
    row["iterations"] = target;
    const Json& acc = report.at("accuracy");
    row["final_eval_accuracy"] = acc.empty() ? Json(nullptr)
                                             : acc.back().at("eval_accuracy");
    const Json& len = report.at("length");
    row["final_avg_ratio"] = len.empty() ? Json(nullptr) : len.back().at("avg_ratio");
    row["final_avg_chosen_len"] =
        len.empty() ? Json(nullptr) : len.back().at("avg_chosen_len");
    table.push_back(row);
    std::cout << "mode " << to_string(mode) << " done\n";
  }

  std::filesystem::path out_json = std::filesystem::path(run_dir) / "ablation.json";
  std::ofstream jf(out_json, std::ios::binary | std::ios::trunc);
  jf << table.dump(2) << '\n';
  std::filesystem::path out_csv = std::filesystem::path(run_dir) / "ablation.csv";
  std::ofstream cf(out_csv, std::ios::binary | std::ios::trunc);
  cf << "mode,corpus_hash,iterations,final_eval_accuracy,final_avg_ratio,"
        "final_avg_chosen_len\n";
  for (const Json& row : table) {
    cf << row.at("mode").get<std::string>() << ','
       << row.at("corpus_hash").get<std::string>() << ','
       << row.at("iterations").dump() << ','
       << row.at("final_eval_accuracy").dump() << ','
       << row.at("final_avg_ratio").dump() << ','
       << row.at("final_avg_chosen_len").dump() << '\n';
  }
  std::cout << table.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"iterative self-judged DPO on a synthetic video-QA world"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  int threads = 1;
  app.add_option("--threads", threads, "worker fan-out cap")->capture_default_str();

  std::string config_path, out, run_dir, mode_str, run_a, run_b;
  std::uint64_t seed = 0;
  int to_T = 0, iter = 0;

  auto* gen = app.add_subcommand("gen-data", "emit a corpus JSONL");
  gen->add_option("--config", config_path, "run config JSON");
  auto* seed_opt = gen->add_option("--seed", seed, "corpus seed");
  gen->add_option("--out", out, "output path")->required();

  auto* init = app.add_subcommand("init", "pretrain base and train the initial model");
  init->add_option("--config", config_path, "run config JSON");
  init->add_option("--run", run_dir, "run directory")->required();

  auto* iterate = app.add_subcommand("iterate", "run the loop up to --to iterations");
  iterate->add_option("--run", run_dir, "run directory")->required();
  iterate->add_option("--mode", mode_str, "na|fixed|renew|retrospective");
  iterate->add_option("--to", to_T, "target iteration count T")->required();

  auto* diagnose = app.add_subcommand("diagnose", "length and accuracy reports");
  diagnose->add_option("--run", run_dir, "run directory")->required();

  auto* duel = app.add_subcommand("duel", "head-to-head of two runs at one iteration");
  duel->add_option("--run-a", run_a, "run directory A")->required();
  duel->add_option("--run-b", run_b, "run directory B")->required();
  duel->add_option("--iter", iter, "iteration to compare")->required();
  duel->add_option("--out", out, "write the report JSON here");

  auto* ablate = app.add_subcommand("ablate", "all four context modes, shared seeds");
  ablate->add_option("--config", config_path, "run config JSON");
  ablate->add_option("--run", run_dir, "output directory")->required();
  ablate->add_option("--to", to_T, "iterations per mode (default: config)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      return cmd_gen_data(config_path, seed, seed_opt->count() > 0, out, threads);
    }
    if (init->parsed()) return cmd_init(config_path, run_dir, threads);
    if (iterate->parsed()) return cmd_iterate(run_dir, mode_str, to_T, threads);
    if (diagnose->parsed()) return cmd_diagnose(run_dir);
    if (duel->parsed()) return cmd_duel(run_a, run_b, iter, out);
    if (ablate->parsed()) return cmd_ablate(config_path, run_dir, to_T, threads);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const IntegrityError& e) {
    std::cerr << "integrity error: " << e.what() << "\n";
    return 3;
  } catch (const NotFoundError& e) {
    std::cerr << "not found: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
