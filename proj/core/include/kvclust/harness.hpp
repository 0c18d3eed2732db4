#pragma once

// Subcommand implementations behind the CLI: trace generation, trace replay
// with a report, mode comparison, and report rendering. Exit codes: 0 ok,
// 2 configuration problem, 3 invariant violation, 1 anything else.

#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kvclust/engine.hpp"
#include "kvclust/workload.hpp"

namespace kvclust {

struct GenOptions {
  StreamConfig stream;
  std::string preset;  // "", "default", or "drift"
  std::string output;
};

struct RunOptions {
  std::string trace_path;
  EngineConfig engine;
  std::string output;  // empty writes to stdout
};

struct CompareOptions {
  std::string trace_path;
  std::vector<std::string> modes;  // e.g. cluster, cluster-eager,
                                   // cluster+prefetch, token
  EngineConfig engine;             // shared knobs for every run
  std::string output_prefix;       // writes <prefix>.json and <prefix>.csv
  bool match_token_budget = true;  // size the baseline from cluster-run frames
};

struct ReportOptions {
  std::string report_path;
  std::string output;  // empty writes to stdout
};

int cmd_gen(const GenOptions& opt, std::ostream& out, std::ostream& err);
int cmd_run(const RunOptions& opt, std::ostream& out, std::ostream& err);
int cmd_compare(const CompareOptions& opt, std::ostream& out, std::ostream& err);
int cmd_report(const ReportOptions& opt, std::ostream& out, std::ostream& err);

// Applies a JSON config object onto option defaults; CLI flags given
// explicitly are expected to override afterwards. Unknown keys are an error.
void apply_stream_config(const nlohmann::json& j, StreamConfig& cfg);
void apply_engine_config(const nlohmann::json& j, EngineConfig& cfg);

// Parses a compare-mode label into engine settings. Throws ConfigError on an
// unknown label.
void apply_mode_label(const std::string& label, EngineConfig& cfg);

}  // namespace kvclust
