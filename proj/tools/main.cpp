// Command-line driver: gen / run / compare / report.

#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "kvclust/error.hpp"
#include "kvclust/harness.hpp"

namespace {

using kvclust::ConfigError;

// --config is applied before flag parsing so explicit flags win over file
// values.
nlohmann::json preload_config(int argc, char** argv) {
  std::string path;
  for (int i = 1; i < argc; ++i) {
    std::string arg = argv[i];
    if (arg == "--config" && i + 1 < argc) {
      path = argv[i + 1];
      break;
    }
    if (arg.rfind("--config=", 0) == 0) {
      path = arg.substr(9);
      break;
    }
  }
  if (path.empty()) return nlohmann::json::object();
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config file: ") + e.what());
  }
}

void add_engine_flags(CLI::App* cmd, kvclust::EngineConfig& cfg, bool with_mode_flags) {
  auto& r = cfg.retrieval;
  if (with_mode_flags) {
    cmd->add_option_function<std::string>(
           "--mode",
           [&](const std::string& m) {
             if (m == "cluster")
               r.mode = kvclust::RetrievalMode::Cluster;
             else if (m == "token_baseline" || m == "token")
               r.mode = kvclust::RetrievalMode::TokenBaseline;
             else
               throw CLI::ValidationError("--mode", "must be cluster or token_baseline");
           },
           "cluster or token_baseline");
    cmd->add_flag("--prefetch,!--no-prefetch", r.prefetch_enabled, "overlap-aware prefetch");
    cmd->add_flag_function(
        "--eager",
        [&](std::int64_t count) {
          if (count > 0) cfg.maintainer.defer_host_splits = false;
        },
        "split host-resident clusters immediately instead of deferring");
  }
  cmd->add_option("--k-v", r.k_v, "visual partitions per query");
  cmd->add_option("--k-s", r.k_s, "semantic clusters per layer");
  cmd->add_option("--window", r.window_frames, "local window length in frames");
  cmd->add_option("--prefetch-k", r.prefetch_k, "clusters prefetched per layer");
  cmd->add_option("--token-budget", r.token_budget, "baseline tokens per layer");
  cmd->add_option("--lookup-cost", r.lookup_cost_per_candidate_us,
                  "lookup cost per candidate, us");
  cmd->add_option("--compute-cost", r.compute_cost_per_token_us, "compute cost per token, us");
  cmd->add_option("--tau-min", cfg.maintainer.threshold.tau_min, "variance threshold floor");
  cmd->add_option("--tau-max", cfg.maintainer.threshold.tau_max, "variance threshold ceiling");
  cmd->add_option("--n0", cfg.maintainer.threshold.n0, "threshold decay horizon");
  cmd->add_option("--max-split-depth", cfg.maintainer.max_split_depth,
                  "recursion cap when settling splits");
  cmd->add_option("--visual-floor", cfg.maintainer.visual_floor,
                  "minimum cosine to join an existing partition");
  cmd->add_option("--target-visual", cfg.build.target_visual_cluster_size,
                  "frames per visual partition at build");
  cmd->add_option("--target-semantic", cfg.build.target_semantic_cluster_size,
                  "keys per semantic cluster at build");
  cmd->add_option("--alpha", cfg.cost.alpha_us, "fixed cost per transfer op, us");
  cmd->add_option("--beta", cfg.cost.beta_us_per_byte, "cost per byte moved, us");
  cmd->add_option("--bytes-per-entry", cfg.cost.bytes_per_entry,
                  "payload bytes per entry (0 = derive from width)");
  cmd->add_option("--capacity", cfg.cost.device_capacity_entries, "device capacity in entries");
  cmd->add_option("--batch", cfg.build_batch_frames, "frames buffered before the first build");
  cmd->add_flag("--batched-ingest,!--per-frame-ingest", cfg.batched_ingest,
                "amortize ingestion overhead per batch");
  cmd->add_option("--ingest-overhead", cfg.ingest_overhead_us, "ingestion overhead, us");
  cmd->add_option("--horizon", cfg.offload_horizon_frames, "offload idle horizon in frames");
  cmd->add_option("--seed", cfg.seed, "run seed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cluster-driven kv-cache management simulator"};
  app.require_subcommand(1);

  kvclust::GenOptions gen;
  kvclust::RunOptions run;
  kvclust::CompareOptions compare;
  kvclust::ReportOptions report;
  std::string config_path_dummy;
  std::string compare_modes;

  try {
    nlohmann::json file_cfg = preload_config(argc, argv);
    if (!file_cfg.empty()) {
      // Stream keys and engine keys live in one object; each section takes
      // what it knows. Validation of unknown keys happens per subcommand.
      const char* sub = argc > 1 ? argv[1] : "";
      if (std::string(sub) == "gen")
        kvclust::apply_stream_config(file_cfg, gen.stream);
      else if (std::string(sub) == "run")
        kvclust::apply_engine_config(file_cfg, run.engine);
      else if (std::string(sub) == "compare")
        kvclust::apply_engine_config(file_cfg, compare.engine);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }

  CLI::App* cgen = app.add_subcommand("gen", "generate a synthetic stream trace");
  cgen->add_option("--config", config_path_dummy, "JSON config file (flags override)");
  cgen->add_option("--preset", gen.preset, "default or drift");
  cgen->add_option("--scenes", gen.stream.n_scenes, "number of scenes");
  cgen->add_option("--frames", gen.stream.frames_per_scene, "frames per scene");
  cgen->add_option("--tokens-per-frame", gen.stream.tokens_per_frame, "tokens per frame per layer");
  cgen->add_option("-d,--dim", gen.stream.d, "embedding width");
  cgen->add_option("-L,--layers", gen.stream.L, "model layers");
  cgen->add_option("--visual-noise", gen.stream.visual_noise, "visual noise scale");
  cgen->add_option("--semantic-noise", gen.stream.semantic_noise, "semantic noise scale");
  cgen->add_option("--drift", gen.stream.drift_rate, "semantic drift per frame");
  cgen->add_option("--eps", gen.stream.cross_layer_eps, "query cross-layer perturbation");
  cgen->add_option("--queries", gen.stream.n_queries, "number of queries");
  cgen->add_option("--mix", gen.stream.cross_modal_mix, "visual weight in semantic centers");
  cgen->add_option("--gt-top-m", gen.stream.gt_top_m, "ground-truth frames per query");
  cgen->add_option("--cycle", gen.stream.scene_cycle, "scene center repeat period (0 = off)");
  cgen->add_flag("--queries-at-end", gen.stream.queries_at_end,
                 "emit all queries after the full stream");
  cgen->add_option("--seed", gen.stream.seed, "generator seed");
  cgen->add_option("-o,--output", gen.output, "trace output path")->required();

  CLI::App* crun = app.add_subcommand("run", "replay a trace and emit a run report");
  crun->add_option("--config", config_path_dummy, "JSON config file (flags override)");
  crun->add_option("trace", run.trace_path, "trace file")->required();
  add_engine_flags(crun, run.engine, true);
  crun->add_option("-o,--output", run.output, "report output path (default stdout)");

  CLI::App* ccmp = app.add_subcommand("compare", "run several modes and tabulate");
  ccmp->add_option("--config", config_path_dummy, "JSON config file (flags override)");
  ccmp->add_option("trace", compare.trace_path, "trace file")->required();
  ccmp->add_option("--modes", compare_modes,
                   "comma-separated: cluster, cluster-eager, cluster+prefetch, token");
  add_engine_flags(ccmp, compare.engine, false);
  ccmp->add_flag("--match-budget,!--no-match-budget", compare.match_token_budget,
                 "size the token budget from cluster-run frames");
  ccmp->add_option("-o,--output", compare.output_prefix, "output prefix for .json and .csv");

  CLI::App* crep = app.add_subcommand("report", "render a run report as text");
  crep->add_option("report", report.report_path, "run report JSON")->required();
  crep->add_option("-o,--output", report.output, "text output path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (cgen->parsed()) return kvclust::cmd_gen(gen, std::cout, std::cerr);
  if (crun->parsed()) return kvclust::cmd_run(run, std::cout, std::cerr);
  if (ccmp->parsed()) {
    if (compare_modes.empty()) compare_modes = "cluster,token";
    std::size_t start = 0;
    while (start <= compare_modes.size()) {
      std::size_t comma = compare_modes.find(',', start);
      std::string label = compare_modes.substr(
          start, comma == std::string::npos ? std::string::npos : comma - start);
      if (!label.empty()) compare.modes.push_back(label);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    return kvclust::cmd_compare(compare, std::cout, std::cerr);
  }
  if (crep->parsed()) return kvclust::cmd_report(report, std::cout, std::cerr);
  return 2;
}
