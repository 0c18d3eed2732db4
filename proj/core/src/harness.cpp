#include "kvclust/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <ostream>

#include "kvclust/error.hpp"
#include "kvclust/report.hpp"

namespace kvclust {

using json = nlohmann::json;

namespace {

template <class F>
int guarded(F&& body, std::ostream& err) {
  try {
    body();
    return 0;
  } catch (const InvariantViolation& e) {
    err << "invariant violation: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

void write_text(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty()) {
    out << text;
    return;
  }
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot open output file: " + path);
  f << text;
  if (!f) throw ConfigError("write failed: " + path);
}

json run_one(const EngineConfig& cfg, const LoadedTrace& trace, const std::string& trace_path) {
  auto t0 = std::chrono::steady_clock::now();
  RunOutput out = run_stream(cfg, trace.d, trace.L, trace.events);
  auto t1 = std::chrono::steady_clock::now();
  double wall = std::chrono::duration<double>(t1 - t0).count();
  TraceInfo info{trace_path, trace.d, trace.L, trace.tokens_per_frame};
  return make_report(cfg, info, out, wall);
}

}  // namespace

int cmd_gen(const GenOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(
      [&] {
        StreamConfig cfg = opt.stream;
        if (opt.preset == "drift") {
          cfg = drift_stream_config();
        } else if (opt.preset == "default") {
          cfg = default_stream_config();
        } else if (!opt.preset.empty()) {
          throw ConfigError("unknown preset: " + opt.preset);
        }
        if (opt.output.empty()) throw ConfigError("gen needs an output path (-o)");
        std::vector<StreamEvent> events = gen_stream(cfg);
        save_trace(events, cfg, opt.output);
        std::int64_t frames = 0;
        std::int64_t queries = 0;
        for (const StreamEvent& ev : events)
          (ev.kind == StreamEvent::Kind::Frame ? frames : queries) += 1;
        out << "wrote " << opt.output << ": " << frames << " frames, " << queries
            << " queries, d=" << cfg.d << ", L=" << cfg.L << "\n";
      },
      err);
}

int cmd_run(const RunOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(
      [&] {
        if (opt.trace_path.empty()) throw ConfigError("run needs a trace path");
        LoadedTrace trace = load_trace(opt.trace_path);
        json report = run_one(opt.engine, trace, opt.trace_path);
        write_text(opt.output, report.dump(2) + "\n", out);
      },
      err);
}

int cmd_compare(const CompareOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(
      [&] {
        if (opt.trace_path.empty()) throw ConfigError("compare needs a trace path");
        if (opt.modes.empty()) throw ConfigError("compare needs at least one mode");
        LoadedTrace trace = load_trace(opt.trace_path);

        std::vector<EngineConfig> configs;
        for (const std::string& label : opt.modes) {
          EngineConfig cfg = opt.engine;
          apply_mode_label(label, cfg);
          configs.push_back(cfg);
        }

        // Cluster runs go first so the baseline budget can be sized to the
        // frames they actually fetched.
        std::vector<json> reports(configs.size());
        double realized_frames = -1.0;
        for (std::size_t i = 0; i < configs.size(); ++i) {
          if (configs[i].retrieval.mode != RetrievalMode::Cluster) continue;
          reports[i] = run_one(configs[i], trace, opt.trace_path);
          if (realized_frames < 0.0)
            realized_frames =
                reports[i].at("aggregates").at("mean_realized_frames").get<double>();
        }
        for (std::size_t i = 0; i < configs.size(); ++i) {
          if (configs[i].retrieval.mode != RetrievalMode::TokenBaseline) continue;
          if (opt.match_token_budget && realized_frames > 0.0) {
            auto budget = static_cast<std::int64_t>(std::llround(realized_frames)) *
                          trace.tokens_per_frame;
            configs[i].retrieval.token_budget = std::max<std::int64_t>(budget, 1);
          }
          reports[i] = run_one(configs[i], trace, opt.trace_path);
        }

        json table = compare_table(reports);
        std::string csv = compare_csv(table);
        if (opt.output_prefix.empty()) {
          out << table.dump(2) << "\n" << csv;
        } else {
          write_text(opt.output_prefix + ".json", table.dump(2) + "\n", out);
          write_text(opt.output_prefix + ".csv", csv, out);
          out << "wrote " << opt.output_prefix << ".json and " << opt.output_prefix << ".csv\n";
        }
      },
      err);
}

int cmd_report(const ReportOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(
      [&] {
        if (opt.report_path.empty()) throw ConfigError("report needs a run report path");
        std::ifstream in(opt.report_path);
        if (!in) throw ConfigError("cannot open report: " + opt.report_path);
        json report;
        try {
          report = json::parse(in);
        } catch (const json::exception& e) {
          throw ParseError(0, std::string("bad report json: ") + e.what());
        }
        write_text(opt.output, render_report_text(report), out);
      },
      err);
}

namespace {

template <class T>
void take(const json& j, const char* key, T& into, std::vector<std::string>& seen) {
  if (j.contains(key)) {
    into = j.at(key).get<T>();
    seen.push_back(key);
  }
}

void reject_unknown(const json& j, const std::vector<std::string>& seen) {
  for (const auto& [key, value] : j.items()) {
    if (std::find(seen.begin(), seen.end(), key) == seen.end())
      throw ConfigError("unknown config key: " + key);
  }
}

}  // namespace

void apply_stream_config(const json& j, StreamConfig& cfg) {
  if (!j.is_object()) throw ConfigError("stream config must be a JSON object");
  std::vector<std::string> seen;
  take(j, "n_scenes", cfg.n_scenes, seen);
  take(j, "frames_per_scene", cfg.frames_per_scene, seen);
  take(j, "tokens_per_frame", cfg.tokens_per_frame, seen);
  take(j, "d", cfg.d, seen);
  take(j, "L", cfg.L, seen);
  take(j, "visual_noise", cfg.visual_noise, seen);
  take(j, "semantic_noise", cfg.semantic_noise, seen);
  take(j, "drift_rate", cfg.drift_rate, seen);
  take(j, "cross_layer_eps", cfg.cross_layer_eps, seen);
  take(j, "n_queries", cfg.n_queries, seen);
  take(j, "cross_modal_mix", cfg.cross_modal_mix, seen);
  take(j, "gt_top_m", cfg.gt_top_m, seen);
  take(j, "scene_cycle", cfg.scene_cycle, seen);
  take(j, "queries_at_end", cfg.queries_at_end, seen);
  take(j, "seed", cfg.seed, seen);
  reject_unknown(j, seen);
}

void apply_engine_config(const json& j, EngineConfig& cfg) {
  if (!j.is_object()) throw ConfigError("engine config must be a JSON object");
  std::vector<std::string> seen;
  std::string mode;
  take(j, "mode", mode, seen);
  if (mode == "cluster")
    cfg.retrieval.mode = RetrievalMode::Cluster;
  else if (mode == "token_baseline")
    cfg.retrieval.mode = RetrievalMode::TokenBaseline;
  else if (!mode.empty())
    throw ConfigError("unknown mode: " + mode);
  take(j, "k_v", cfg.retrieval.k_v, seen);
  take(j, "k_s", cfg.retrieval.k_s, seen);
  take(j, "window_frames", cfg.retrieval.window_frames, seen);
  take(j, "prefetch_k", cfg.retrieval.prefetch_k, seen);
  take(j, "prefetch_enabled", cfg.retrieval.prefetch_enabled, seen);
  take(j, "token_budget", cfg.retrieval.token_budget, seen);
  take(j, "lookup_cost_per_candidate_us", cfg.retrieval.lookup_cost_per_candidate_us, seen);
  take(j, "compute_cost_per_token_us", cfg.retrieval.compute_cost_per_token_us, seen);
  take(j, "tau_min", cfg.maintainer.threshold.tau_min, seen);
  take(j, "tau_max", cfg.maintainer.threshold.tau_max, seen);
  take(j, "n0", cfg.maintainer.threshold.n0, seen);
  take(j, "defer_host_splits", cfg.maintainer.defer_host_splits, seen);
  take(j, "max_split_depth", cfg.maintainer.max_split_depth, seen);
  take(j, "visual_floor", cfg.maintainer.visual_floor, seen);
  take(j, "target_visual_cluster_size", cfg.build.target_visual_cluster_size, seen);
  take(j, "target_semantic_cluster_size", cfg.build.target_semantic_cluster_size, seen);
  take(j, "alpha_us", cfg.cost.alpha_us, seen);
  take(j, "beta_us_per_byte", cfg.cost.beta_us_per_byte, seen);
  take(j, "bytes_per_entry", cfg.cost.bytes_per_entry, seen);
  take(j, "device_capacity_entries", cfg.cost.device_capacity_entries, seen);
  take(j, "build_batch_frames", cfg.build_batch_frames, seen);
  take(j, "batched_ingest", cfg.batched_ingest, seen);
  take(j, "ingest_overhead_us", cfg.ingest_overhead_us, seen);
  take(j, "offload_horizon_frames", cfg.offload_horizon_frames, seen);
  take(j, "seed", cfg.seed, seen);
  reject_unknown(j, seen);
}

void apply_mode_label(const std::string& label, EngineConfig& cfg) {
  if (label == "token" || label == "token_baseline") {
    cfg.retrieval.mode = RetrievalMode::TokenBaseline;
    cfg.retrieval.prefetch_enabled = false;
    return;
  }
  std::string rest = label;
  if (rest.rfind("cluster", 0) != 0) throw ConfigError("unknown compare mode: " + label);
  rest = rest.substr(7);
  cfg.retrieval.mode = RetrievalMode::Cluster;
  cfg.maintainer.defer_host_splits = true;
  cfg.retrieval.prefetch_enabled = false;
  while (!rest.empty()) {
    if (rest.rfind("-eager", 0) == 0) {
      cfg.maintainer.defer_host_splits = false;
      rest = rest.substr(6);
    } else if (rest.rfind("-deferred", 0) == 0) {
      cfg.maintainer.defer_host_splits = true;
      rest = rest.substr(9);
    } else if (rest.rfind("+prefetch", 0) == 0) {
      cfg.retrieval.prefetch_enabled = true;
      rest = rest.substr(9);
    } else {
      throw ConfigError("unknown compare mode: " + label);
    }
  }
}

}  // namespace kvclust
