#pragma once

// Run report assembly: config echo, maintenance and transfer accounting,
// per-query rows, and aggregates that stay recomputable from the rows.

#include <string>

#include <nlohmann/json.hpp>

#include "kvclust/engine.hpp"

namespace kvclust {

struct TraceInfo {
  std::string path;
  int d = 0;
  int L = 0;
  int tokens_per_frame = 0;
};

nlohmann::json make_report(const EngineConfig& cfg, const TraceInfo& trace, const RunOutput& out,
                           double wall_clock_seconds);

// Recomputes the aggregate block from the report's own rows and ledger log.
// Used by the integrity check; must reproduce report["aggregates"] exactly
// (wall clock aside).
nlohmann::json recompute_aggregates(const nlohmann::json& report);

std::string render_report_text(const nlohmann::json& report);

// Mode-by-mode comparison over per-run reports, with cluster-vs-baseline
// ratio columns.
nlohmann::json compare_table(const std::vector<nlohmann::json>& reports);
std::string compare_csv(const nlohmann::json& table);

}  // namespace kvclust
