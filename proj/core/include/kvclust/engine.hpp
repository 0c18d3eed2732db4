#pragma once

// Stream orchestration: buffers the opening frames into a batch build, runs
// online maintenance afterwards, keeps the local window pinned, applies the
// offload cadence, and answers queries in either cluster or token-baseline
// mode. Produces the raw material of a run report.

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "kvclust/maintainer.hpp"
#include "kvclust/retrieval.hpp"
#include "kvclust/store.hpp"
#include "kvclust/workload.hpp"

namespace kvclust {

struct EngineConfig {
  RetrievalConfig retrieval;
  MaintainerConfig maintainer;
  BuildConfig build;
  CostModel cost;
  int build_batch_frames = 32;
  bool batched_ingest = false;
  double ingest_overhead_us = 10.0;  // per frame, or per batch when batched
  int offload_horizon_frames = 16;
  std::uint64_t seed = 0;

  void validate() const;
};

struct QueryRow {
  std::int64_t query_id = 0;
  double recall = -1.0;
  double ttft_us = 0.0;
  double lookup_us = 0.0;
  double transfer_us = 0.0;
  double stall_us = 0.0;
  double completion_us = 0.0;
  double compute_us = 0.0;
  std::int64_t ops = 0;    // ledger ops during this query
  std::int64_t bytes = 0;  // ledger bytes during this query
  std::int64_t realized_frames = 0;  // distinct frames fetched by selection
  std::int64_t context_frames = 0;
  std::int64_t prefetch_hits = 0;
  std::int64_t verified_clusters = 0;  // on prefetch-carrying layers
  std::uint64_t attended_digest = 0;
};

struct RunOutput {
  std::vector<QueryRow> rows;
  MaintainerStats maintainer;
  TransferLedger ledger;
  double ingest_cost_us = 0.0;
  std::int64_t frames_processed = 0;
  std::int64_t queries_processed = 0;
  std::int64_t final_partitions = 0;
  std::int64_t final_clusters = 0;
};

class StreamEngine {
 public:
  StreamEngine(const EngineConfig& cfg, int d, int L);

  void process(const StreamEvent& event);
  RunOutput finish();

  const HierIndex* index() const { return index_ ? &*index_ : nullptr; }

 private:
  EngineConfig cfg_;
  int d_;
  int L_;
  bool built_ = false;
  std::vector<FrameInput> pending_;
  std::optional<HierIndex> index_;
  std::optional<TieredStore> store_;
  std::optional<Maintainer> maintainer_;
  std::vector<std::vector<KVEntry>> pools_;  // baseline storage
  TransferLedger baseline_ledger_;
  std::deque<FrameInput> window_;
  std::vector<QueryRow> rows_;
  double ingest_cost_us_ = 0.0;
  int frames_in_batch_ = 0;
  std::int64_t frames_processed_ = 0;
  std::int64_t last_partition_ = -1;
  std::int64_t last_frame_id_ = -1;

  void build_now();
  void ingest_frame(const StreamEvent& event);
  void answer_query(const QueryBundle& bundle);
  void push_window(const FrameInput& frame);
  void repin();
  void apply_cadence(std::int64_t frame_id, std::int64_t partition_id);
  std::vector<KVEntry> window_entries() const;
};

// Convenience wrapper: run a whole event sequence through a fresh engine.
RunOutput run_stream(const EngineConfig& cfg, int d, int L,
                     const std::vector<StreamEvent>& events);

}  // namespace kvclust
