#include "kvclust/report.hpp"

#include <cmath>
#include <sstream>

#include "kvclust/error.hpp"

namespace kvclust {

using json = nlohmann::json;

namespace {

json config_echo(const EngineConfig& cfg) {
  json j;
  j["mode"] = cfg.retrieval.mode == RetrievalMode::Cluster ? "cluster" : "token_baseline";
  j["k_v"] = cfg.retrieval.k_v;
  j["k_s"] = cfg.retrieval.k_s;
  j["window_frames"] = cfg.retrieval.window_frames;
  j["prefetch_k"] = cfg.retrieval.prefetch_k;
  j["prefetch_enabled"] = cfg.retrieval.prefetch_enabled;
  j["token_budget"] = cfg.retrieval.token_budget;
  j["lookup_cost_per_candidate_us"] = cfg.retrieval.lookup_cost_per_candidate_us;
  j["compute_cost_per_token_us"] = cfg.retrieval.compute_cost_per_token_us;
  j["tau_min"] = cfg.maintainer.threshold.tau_min;
  j["tau_max"] = cfg.maintainer.threshold.tau_max;
  j["n0"] = cfg.maintainer.threshold.n0;
  j["defer_host_splits"] = cfg.maintainer.defer_host_splits;
  j["max_split_depth"] = cfg.maintainer.max_split_depth;
  j["visual_floor"] = cfg.maintainer.visual_floor;
  j["target_visual_cluster_size"] = cfg.build.target_visual_cluster_size;
  j["target_semantic_cluster_size"] = cfg.build.target_semantic_cluster_size;
  j["alpha_us"] = cfg.cost.alpha_us;
  j["beta_us_per_byte"] = cfg.cost.beta_us_per_byte;
  j["bytes_per_entry"] = cfg.cost.bytes_per_entry;
  j["device_capacity_entries"] = cfg.cost.device_capacity_entries;
  j["build_batch_frames"] = cfg.build_batch_frames;
  j["batched_ingest"] = cfg.batched_ingest;
  j["ingest_overhead_us"] = cfg.ingest_overhead_us;
  j["offload_horizon_frames"] = cfg.offload_horizon_frames;
  j["seed"] = cfg.seed;
  return j;
}

json row_to_json(const QueryRow& row) {
  json j;
  j["query_id"] = row.query_id;
  j["recall"] = row.recall;
  j["ttft_us"] = row.ttft_us;
  j["lookup_us"] = row.lookup_us;
  j["transfer_us"] = row.transfer_us;
  j["stall_us"] = row.stall_us;
  j["completion_us"] = row.completion_us;
  j["compute_us"] = row.compute_us;
  j["ops"] = row.ops;
  j["bytes"] = row.bytes;
  j["realized_frames"] = row.realized_frames;
  j["context_frames"] = row.context_frames;
  j["prefetch_hits"] = row.prefetch_hits;
  j["verified_clusters"] = row.verified_clusters;
  j["attended_digest"] = row.attended_digest;
  return j;
}

}  // namespace

nlohmann::json make_report(const EngineConfig& cfg, const TraceInfo& trace, const RunOutput& out,
                           double wall_clock_seconds) {
  json report;
  report["format"] = "kvclust.report.v1";
  report["config"] = config_echo(cfg);
  report["trace"] = {{"path", trace.path},
                     {"d", trace.d},
                     {"L", trace.L},
                     {"tokens_per_frame", trace.tokens_per_frame},
                     {"frames", out.frames_processed},
                     {"queries", out.queries_processed}};

  json stats;
  stats["inserts"] = out.maintainer.inserts;
  stats["absorbed"] = out.maintainer.absorbed;
  stats["immediate_splits"] = out.maintainer.immediate_splits;
  stats["deferred_marks"] = out.maintainer.deferred_marks;
  stats["settled_splits"] = out.maintainer.settled_splits;
  stats["split_ops_total"] = out.maintainer.split_ops_total;
  stats["host_over_threshold"] = out.maintainer.host_over_threshold;
  stats["partitions_opened"] = out.maintainer.partitions_opened;
  report["maintainer"] = std::move(stats);

  json ledger;
  json causes = json::object();
  for (const auto& [name, totals] : out.ledger.by_cause())
    causes[name] = {{"n_ops", totals.n_ops}, {"bytes", totals.bytes}, {"cost_us", totals.cost_us}};
  ledger["by_cause"] = std::move(causes);
  json ops_log = json::array();
  for (const TransferOp& op : out.ledger.log())
    ops_log.push_back(json{{"cause", to_string(op.cause)},
                           {"to_device", op.to_device},
                           {"cluster_id", op.cluster_id},
                           {"n_ops", op.n_ops},
                           {"bytes", op.bytes},
                           {"cost_us", op.cost_us}});
  ledger["log"] = std::move(ops_log);
  report["ledger"] = std::move(ledger);

  json rows = json::array();
  for (const QueryRow& row : out.rows) rows.push_back(row_to_json(row));
  report["rows"] = std::move(rows);

  report["ingest_cost_us"] = out.ingest_cost_us;
  report["final_partitions"] = out.final_partitions;
  report["final_clusters"] = out.final_clusters;
  report["aggregates"] = recompute_aggregates(report);
  report["wall_clock_seconds"] = wall_clock_seconds;
  return report;
}

nlohmann::json recompute_aggregates(const nlohmann::json& report) {
  json agg;
  const json& rows = report.at("rows");

  double recall_sum = 0.0;
  std::int64_t recall_n = 0;
  double ttft_sum = 0.0;
  double frames_sum = 0.0;
  std::int64_t hits = 0;
  std::int64_t verified = 0;
  for (const json& row : rows) {
    double recall = row.at("recall").get<double>();
    if (recall >= 0.0) {
      recall_sum += recall;
      recall_n += 1;
    }
    ttft_sum += row.at("ttft_us").get<double>();
    frames_sum += static_cast<double>(row.at("realized_frames").get<std::int64_t>());
    hits += row.at("prefetch_hits").get<std::int64_t>();
    verified += row.at("verified_clusters").get<std::int64_t>();
  }
  std::int64_t n_rows = static_cast<std::int64_t>(rows.size());
  agg["mean_recall"] = recall_n > 0 ? recall_sum / static_cast<double>(recall_n) : -1.0;
  agg["mean_ttft_us"] = n_rows > 0 ? ttft_sum / static_cast<double>(n_rows) : 0.0;
  agg["mean_realized_frames"] = n_rows > 0 ? frames_sum / static_cast<double>(n_rows) : 0.0;
  agg["prefetch_hit_rate"] =
      verified > 0 ? static_cast<double>(hits) / static_cast<double>(verified) : -1.0;

  std::int64_t total_ops = 0;
  std::int64_t total_bytes = 0;
  double total_cost = 0.0;
  double query_io = 0.0;
  for (const json& op : report.at("ledger").at("log")) {
    total_ops += op.at("n_ops").get<std::int64_t>();
    total_bytes += op.at("bytes").get<std::int64_t>();
    double cost = op.at("cost_us").get<double>();
    total_cost += cost;
    std::string cause = op.at("cause").get<std::string>();
    if (cause == "retrieval" || cause == "completion" || cause == "prefetch") query_io += cost;
  }
  agg["total_ops"] = total_ops;
  agg["total_bytes"] = total_bytes;
  agg["total_transfer_cost_us"] = total_cost;
  agg["query_io_cost_us"] = query_io;

  const json& m = report.at("maintainer");
  agg["splits"] = {{"immediate", m.at("immediate_splits").get<std::int64_t>()},
                   {"settled", m.at("settled_splits").get<std::int64_t>()},
                   {"split_ops_total", m.at("split_ops_total").get<std::int64_t>()},
                   {"deferred_marks", m.at("deferred_marks").get<std::int64_t>()},
                   {"host_over_threshold", m.at("host_over_threshold").get<std::int64_t>()}};
  agg["ingest_cost_us"] = report.at("ingest_cost_us").get<double>();
  return agg;
}

std::string render_report_text(const nlohmann::json& report) {
  std::ostringstream out;
  const json& cfg = report.at("config");
  const json& agg = report.at("aggregates");
  const json& trace = report.at("trace");

  out << "run: mode=" << cfg.at("mode").get<std::string>()
      << " deferred=" << (cfg.at("defer_host_splits").get<bool>() ? "yes" : "no")
      << " prefetch=" << (cfg.at("prefetch_enabled").get<bool>() ? "on" : "off")
      << " seed=" << cfg.at("seed").get<std::uint64_t>() << "\n";
  out << "trace: " << trace.at("path").get<std::string>() << " (" << trace.at("frames")
      << " frames, " << trace.at("queries") << " queries, d=" << trace.at("d")
      << ", L=" << trace.at("L") << ")\n";
  out << "recall: mean=" << agg.at("mean_recall").get<double>() << "\n";
  out << "ttft_us: mean=" << agg.at("mean_ttft_us").get<double>() << "\n";
  out << "transfers: ops=" << agg.at("total_ops").get<std::int64_t>()
      << " bytes=" << agg.at("total_bytes").get<std::int64_t>()
      << " cost_us=" << agg.at("total_transfer_cost_us").get<double>()
      << " (query path " << agg.at("query_io_cost_us").get<double>() << ")\n";
  for (const auto& [name, totals] : report.at("ledger").at("by_cause").items())
    out << "  " << name << ": ops=" << totals.at("n_ops") << " bytes=" << totals.at("bytes")
        << " cost_us=" << totals.at("cost_us").get<double>() << "\n";
  const json& splits = agg.at("splits");
  out << "splits: immediate=" << splits.at("immediate") << " settled=" << splits.at("settled")
      << " two-way ops=" << splits.at("split_ops_total")
      << " deferred_marks=" << splits.at("deferred_marks")
      << " host_over_threshold=" << splits.at("host_over_threshold") << "\n";
  double hit_rate = agg.at("prefetch_hit_rate").get<double>();
  if (hit_rate >= 0.0) out << "prefetch hit rate: " << hit_rate << "\n";
  out << "ingest_cost_us: " << agg.at("ingest_cost_us").get<double>() << "\n";
  out << "clusters: " << report.at("final_clusters") << " in " << report.at("final_partitions")
      << " partitions\n";
  out << "wall_clock_seconds: " << report.at("wall_clock_seconds").get<double>() << "\n";
  return out.str();
}

namespace {

std::string mode_label(const json& report) {
  const json& cfg = report.at("config");
  std::string label = cfg.at("mode").get<std::string>();
  if (label == "cluster") {
    label += cfg.at("defer_host_splits").get<bool>() ? "/deferred" : "/eager";
    if (cfg.at("prefetch_enabled").get<bool>()) label += "+prefetch";
  }
  return label;
}

}  // namespace

nlohmann::json compare_table(const std::vector<nlohmann::json>& reports) {
  json table;
  table["format"] = "kvclust.compare.v1";
  json rows = json::array();

  const json* baseline = nullptr;
  for (const json& r : reports)
    if (r.at("config").at("mode").get<std::string>() == "token_baseline" && !baseline)
      baseline = &r;

  for (const json& r : reports) {
    const json& agg = r.at("aggregates");
    json row;
    row["label"] = mode_label(r);
    row["mean_ttft_us"] = agg.at("mean_ttft_us");
    row["mean_recall"] = agg.at("mean_recall");
    row["mean_realized_frames"] = agg.at("mean_realized_frames");
    row["total_ops"] = agg.at("total_ops");
    row["total_bytes"] = agg.at("total_bytes");
    row["query_io_cost_us"] = agg.at("query_io_cost_us");
    row["split_ops_total"] = agg.at("splits").at("split_ops_total");
    row["prefetch_hit_rate"] = agg.at("prefetch_hit_rate");
    if (baseline) {
      double base_ttft = (*baseline).at("aggregates").at("mean_ttft_us").get<double>();
      double own_ttft = agg.at("mean_ttft_us").get<double>();
      row["ttft_speedup_vs_token"] = own_ttft > 0.0 ? base_ttft / own_ttft : -1.0;
      double base_io = (*baseline).at("aggregates").at("query_io_cost_us").get<double>();
      double own_io = agg.at("query_io_cost_us").get<double>();
      row["io_reduction_vs_token"] = base_io > 0.0 ? 1.0 - own_io / base_io : 0.0;
    }
    rows.push_back(std::move(row));
  }
  table["rows"] = std::move(rows);
  return table;
}

std::string compare_csv(const nlohmann::json& table) {
  std::ostringstream out;
  out << "label,mean_ttft_us,mean_recall,mean_realized_frames,total_ops,total_bytes,"
         "query_io_cost_us,split_ops_total,prefetch_hit_rate,ttft_speedup_vs_token,"
         "io_reduction_vs_token\n";
  for (const json& row : table.at("rows")) {
    out << row.at("label").get<std::string>() << "," << row.at("mean_ttft_us").get<double>() << ","
        << row.at("mean_recall").get<double>() << ","
        << row.at("mean_realized_frames").get<double>() << ","
        << row.at("total_ops").get<std::int64_t>() << ","
        << row.at("total_bytes").get<std::int64_t>() << ","
        << row.at("query_io_cost_us").get<double>() << ","
        << row.at("split_ops_total").get<std::int64_t>() << ","
        << row.at("prefetch_hit_rate").get<double>() << ",";
    if (row.contains("ttft_speedup_vs_token"))
      out << row.at("ttft_speedup_vs_token").get<double>() << ","
          << row.at("io_reduction_vs_token").get<double>();
    else
      out << ",";
    out << "\n";
  }
  return out.str();
}

}  // namespace kvclust
