#include "kvclust/retrieval.hpp"

#include <algorithm>
#include <cmath>

#include "kvclust/error.hpp"

namespace kvclust {

void RetrievalConfig::validate() const {
  if (k_v <= 0 || k_s <= 0 || window_frames <= 0 || prefetch_k <= 0)
    throw ConfigError("retrieval budgets must be positive");
  if (token_budget < 1) throw ConfigError("token budget must be at least 1");
  if (lookup_cost_per_candidate_us < 0.0 || compute_cost_per_token_us < 0.0)
    throw ConfigError("cost constants must be non-negative");
}

namespace {

std::vector<std::int64_t> dedup_cluster_ids(const std::vector<CandidateRef>& refs) {
  std::vector<std::int64_t> out;
  for (const CandidateRef& r : refs)
    if (std::find(out.begin(), out.end(), r.cluster_id) == out.end())
      out.push_back(r.cluster_id);
  return out;
}

std::int64_t count_candidates(const HierIndex& index, std::int32_t layer,
                              const std::vector<std::int64_t>& partition_ids) {
  std::int64_t n = 0;
  for (std::int64_t pid : partition_ids) {
    const VisualPartition& p = index.partition(pid);
    auto it = p.per_layer_clusters.find(layer);
    if (it == p.per_layer_clusters.end()) continue;
    for (std::int64_t cid : it->second) {
      n += 1;
      if (index.buffer_registered(cid)) n += 1;
    }
  }
  return n;
}

}  // namespace

RetrievalResult retrieve(const QueryBundle& bundle, const RetrievalConfig& cfg, HierIndex& index,
                         TieredStore& store, Maintainer& maintainer,
                         const std::vector<KVEntry>& window) {
  cfg.validate();
  auto L = static_cast<std::size_t>(index.num_layers());
  if (bundle.q.size() != L)
    throw ConfigError("query bundle layer count does not match the index");
  if (index.empty()) throw EmptyIndex("retrieve before any index was built");

  RetrievalResult result;
  result.query_id = bundle.query_id;
  result.layers.resize(L);

  std::vector<std::int64_t> predicted_next;
  double stall_next = 0.0;

  std::set<std::int64_t> context_frames;
  std::set<std::int64_t> fetched_frames;

  for (std::size_t l = 0; l < L; ++l) {
    auto layer = static_cast<std::int32_t>(l);
    LayerResult& lr = result.layers[l];
    const Embedding& q = bundle.q[l];

    std::vector<std::int64_t> parts = index.visual_topk(q, cfg.k_v);
    std::int64_t compared = static_cast<std::int64_t>(index.partitions().size()) +
                            count_candidates(index, layer, parts);
    lr.latency.lookup_us = cfg.lookup_cost_per_candidate_us * static_cast<double>(compared);

    lr.ranked = index.semantic_topk(q, layer, parts, cfg.k_s);
    std::vector<std::int64_t> verified = dedup_cluster_ids(lr.ranked);
    lr.verified_clusters = static_cast<std::int64_t>(verified.size());

    if (cfg.prefetch_enabled && l > 0) {
      lr.predicted = predicted_next;
      lr.latency.stall_us = stall_next;
      for (std::int64_t cid : verified) {
        if (std::find(lr.predicted.begin(), lr.predicted.end(), cid) != lr.predicted.end())
          lr.prefetch_hits += 1;
        lr.latency.completion_us += store.fetch(cid, TransferCause::Completion);
      }
    } else {
      for (std::int64_t cid : verified)
        lr.latency.transfer_us += store.fetch(cid, TransferCause::Retrieval);
    }
    predicted_next.clear();
    stall_next = 0.0;

    for (std::int64_t cid : verified) {
      std::vector<std::int64_t> settled = maintainer.materialize(cid);
      lr.selected.insert(lr.selected.end(), settled.begin(), settled.end());
    }
    std::sort(lr.selected.begin(), lr.selected.end());

    std::set<std::pair<std::int64_t, std::int32_t>> attended;
    for (std::int64_t cid : lr.selected) {
      store.touch(cid);
      for (const KVEntry& e : index.cluster(cid).members) {
        attended.insert({e.frame_id, e.token_id});
        fetched_frames.insert(e.frame_id);
      }
    }
    for (const KVEntry& e : window)
      if (e.layer_id == layer) attended.insert({e.frame_id, e.token_id});
    lr.attended_tokens.assign(attended.begin(), attended.end());
    for (const auto& [frame, token] : attended) context_frames.insert(frame);

    lr.rep_count = static_cast<std::int64_t>(index.rep_timeline(layer).size());
    lr.latency.compute_us =
        cfg.compute_cost_per_token_us *
        static_cast<double>(attended.size() + static_cast<std::size_t>(lr.rep_count));

    if (cfg.prefetch_enabled && l + 1 < L) {
      // Prediction runs with this layer's query against the next layer's
      // candidates; the moved bytes hide behind this layer's compute.
      std::vector<std::int64_t> pf_parts = index.visual_topk(q, cfg.k_v);
      std::vector<CandidateRef> pf_refs =
          index.semantic_topk(q, layer + 1, pf_parts, cfg.prefetch_k);
      predicted_next = dedup_cluster_ids(pf_refs);
      double pf_cost = 0.0;
      for (std::int64_t cid : predicted_next)
        pf_cost += store.fetch(cid, TransferCause::Prefetch);
      stall_next = std::max(0.0, pf_cost - lr.latency.compute_us);
    }
  }

  for (const LayerResult& lr : result.layers) result.ttft_us += lr.latency.total();
  result.context_frames.assign(context_frames.begin(), context_frames.end());
  result.fetched_frames.assign(fetched_frames.begin(), fetched_frames.end());

  if (!bundle.ground_truth_frames.empty()) {
    std::int64_t hit = 0;
    for (std::int64_t f : bundle.ground_truth_frames)
      if (context_frames.count(f)) hit += 1;
    result.recall = static_cast<double>(hit) /
                    static_cast<double>(bundle.ground_truth_frames.size());
  }
  return result;
}

std::vector<CandidateRef> oracle_flat_topk(const HierIndex& index, const Embedding& query,
                                           std::int32_t layer, int k) {
  if (k <= 0) throw ConfigError("oracle top-k must be positive");
  struct Scored {
    double sim;
    CandidateRef ref;
  };
  std::vector<Scored> ranked;
  for (const CandidateRef& ref : index.rep_set(layer))
    ranked.push_back({cosine_sim(query, index.candidate_rep(ref)), ref});
  std::sort(ranked.begin(), ranked.end(), [](const Scored& a, const Scored& b) {
    if (a.sim != b.sim) return a.sim > b.sim;
    return a.ref < b.ref;
  });
  std::size_t take = std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(k));
  std::vector<CandidateRef> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back(ranked[i].ref);
  return out;
}

RetrievalResult retrieve_token_baseline(const QueryBundle& bundle, const RetrievalConfig& cfg,
                                        const std::vector<std::vector<KVEntry>>& pools,
                                        const std::set<std::int64_t>& window_frames,
                                        const CostModel& cost, TransferLedger& ledger) {
  cfg.validate();
  auto L = pools.size();
  if (bundle.q.size() != L)
    throw ConfigError("query bundle layer count does not match the stored layers");

  RetrievalResult result;
  result.query_id = bundle.query_id;
  result.layers.resize(L);

  std::set<std::int64_t> context_frames;
  std::set<std::int64_t> fetched_frames;

  for (std::size_t l = 0; l < L; ++l) {
    LayerResult& lr = result.layers[l];
    const std::vector<KVEntry>& pool = pools[l];
    if (pool.empty()) continue;
    const Embedding& q = bundle.q[l];

    lr.latency.lookup_us =
        cfg.lookup_cost_per_candidate_us * static_cast<double>(pool.size());

    struct Scored {
      double sim;
      std::size_t idx;
    };
    std::vector<Scored> ranked;
    ranked.reserve(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) ranked.push_back({cosine_sim(q, pool[i].key), i});
    std::sort(ranked.begin(), ranked.end(), [&](const Scored& a, const Scored& b) {
      if (a.sim != b.sim) return a.sim > b.sim;
      const KVEntry& ea = pool[a.idx];
      const KVEntry& eb = pool[b.idx];
      if (ea.frame_id != eb.frame_id) return ea.frame_id < eb.frame_id;
      return ea.token_id < eb.token_id;
    });

    std::size_t budget = std::min<std::size_t>(pool.size(), static_cast<std::size_t>(cfg.token_budget));
    std::vector<std::pair<std::int64_t, std::int32_t>> picked;  // (frame, token)
    std::vector<std::pair<std::int64_t, std::int32_t>> host_side;
    for (std::size_t i = 0; i < budget; ++i) {
      const KVEntry& e = pool[ranked[i].idx];
      picked.push_back({e.frame_id, e.token_id});
      fetched_frames.insert(e.frame_id);
      if (!window_frames.count(e.frame_id)) host_side.push_back({e.frame_id, e.token_id});
    }

    // Scattered fine-grained movement: one op per run of adjacent tokens
    // within a frame.
    std::sort(host_side.begin(), host_side.end());
    std::int64_t entry_bytes = cost.entry_bytes(static_cast<std::int32_t>(pool.front().key.size()));
    std::size_t i = 0;
    while (i < host_side.size()) {
      std::size_t j = i + 1;
      while (j < host_side.size() && host_side[j].first == host_side[j - 1].first &&
             host_side[j].second == host_side[j - 1].second + 1)
        ++j;
      std::int64_t bytes = static_cast<std::int64_t>(j - i) * entry_bytes;
      TransferOp op{TransferCause::Retrieval, true, -1, 1, bytes, cost.transfer_cost(1, bytes)};
      ledger.record(op);
      lr.latency.transfer_us += op.cost_us;
      i = j;
    }

    std::set<std::pair<std::int64_t, std::int32_t>> attended(picked.begin(), picked.end());
    for (const KVEntry& e : pool)
      if (window_frames.count(e.frame_id)) attended.insert({e.frame_id, e.token_id});
    lr.attended_tokens.assign(attended.begin(), attended.end());
    for (const auto& [frame, token] : attended) context_frames.insert(frame);
    lr.latency.compute_us =
        cfg.compute_cost_per_token_us * static_cast<double>(attended.size());
  }

  for (const LayerResult& lr : result.layers) result.ttft_us += lr.latency.total();
  result.context_frames.assign(context_frames.begin(), context_frames.end());
  result.fetched_frames.assign(fetched_frames.begin(), fetched_frames.end());

  if (!bundle.ground_truth_frames.empty()) {
    std::int64_t hit = 0;
    for (std::int64_t f : bundle.ground_truth_frames)
      if (context_frames.count(f)) hit += 1;
    result.recall = static_cast<double>(hit) /
                    static_cast<double>(bundle.ground_truth_frames.size());
  }
  return result;
}

}  // namespace kvclust
