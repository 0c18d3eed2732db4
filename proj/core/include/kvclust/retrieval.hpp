#pragma once

// Query-time path: two-stage cluster selection, context assembly with the
// representative timeline and the local window, cross-layer prefetch with
// verify-and-complete, the flat-cluster oracle, and the token-granular
// baseline retrieval.

#include <cstdint>
#include <set>
#include <vector>

#include "kvclust/index.hpp"
#include "kvclust/maintainer.hpp"
#include "kvclust/store.hpp"

namespace kvclust {

enum class RetrievalMode { Cluster, TokenBaseline };

struct RetrievalConfig {
  int k_v = 4;
  int k_s = 4;
  int window_frames = 4;
  int prefetch_k = 4;
  bool prefetch_enabled = false;
  RetrievalMode mode = RetrievalMode::Cluster;
  std::int64_t token_budget = 256;  // baseline only
  double lookup_cost_per_candidate_us = 0.02;
  double compute_cost_per_token_us = 0.6;

  void validate() const;
};

struct QueryBundle {
  std::int64_t query_id = 0;
  std::vector<Embedding> q;  // one query vector per layer
  std::vector<std::int64_t> ground_truth_frames;  // sorted; empty when unknown
};

struct LayerLatency {
  double lookup_us = 0.0;
  double transfer_us = 0.0;    // serial fetches (cause: retrieval)
  double stall_us = 0.0;       // prefetch time not hidden by previous compute
  double completion_us = 0.0;  // misses fetched after verification
  double compute_us = 0.0;

  double total() const { return lookup_us + transfer_us + stall_us + completion_us + compute_us; }
};

struct LayerResult {
  std::vector<CandidateRef> ranked;        // verified top-k_s, before any splits settle
  std::vector<std::int64_t> selected;      // cluster ids actually attended, post-settle
  std::vector<std::int64_t> predicted;     // clusters moved by prefetch for this layer
  std::int64_t prefetch_hits = 0;          // |verified clusters ∩ predicted|
  std::int64_t verified_clusters = 0;
  std::vector<std::pair<std::int64_t, std::int32_t>> attended_tokens;  // (frame, token), sorted
  std::int64_t rep_count = 0;              // timeline representatives in context
  LayerLatency latency;
};

struct RetrievalResult {
  std::int64_t query_id = 0;
  std::vector<LayerResult> layers;
  double ttft_us = 0.0;
  double recall = -1.0;                    // -1 when no ground truth
  std::vector<std::int64_t> context_frames;  // frames with attended entries, sorted
  std::vector<std::int64_t> fetched_frames;  // frames of selected clusters / tokens, sorted
};

// Two-stage retrieval over the hierarchy. Settles pending splits of selected
// clusters, moves payloads through the store, and accounts simulated latency.
// The window holds the recent raw entries always attended (all layers mixed).
RetrievalResult retrieve(const QueryBundle& bundle, const RetrievalConfig& cfg, HierIndex& index,
                         TieredStore& store, Maintainer& maintainer,
                         const std::vector<KVEntry>& window);

// Exhaustive single-stage ranking over every layer candidate, visual level
// ignored. The recall yardstick for the hierarchy.
std::vector<CandidateRef> oracle_flat_topk(const HierIndex& index, const Embedding& query,
                                           std::int32_t layer, int k);

// Token-granular baseline: ranks every stored key at each layer, fetches the
// top budget tokens host-side with adjacent same-frame tokens coalesced into
// one transfer op. Fetches are transient; pools stay host-resident apart from
// the window frames. Ops land in the given ledger (cause: retrieval).
RetrievalResult retrieve_token_baseline(const QueryBundle& bundle, const RetrievalConfig& cfg,
                                        const std::vector<std::vector<KVEntry>>& pools,
                                        const std::set<std::int64_t>& window_frames,
                                        const CostModel& cost, TransferLedger& ledger);

}  // namespace kvclust
