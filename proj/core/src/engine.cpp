#include "kvclust/engine.hpp"

#include <algorithm>

#include "kvclust/error.hpp"

namespace kvclust {

void EngineConfig::validate() const {
  retrieval.validate();
  if (build_batch_frames < 1) throw ConfigError("build batch must be at least 1 frame");
  if (ingest_overhead_us < 0.0) throw ConfigError("ingestion overhead must be non-negative");
  if (offload_horizon_frames < 1) throw ConfigError("offload horizon must be at least 1 frame");
}

namespace {

std::uint64_t fnv1a(std::uint64_t h, std::uint64_t x) {
  for (int i = 0; i < 8; ++i) {
    h ^= (x >> (8 * i)) & 0xffu;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t attended_digest(const RetrievalResult& r) {
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t l = 0; l < r.layers.size(); ++l)
    for (const auto& [frame, token] : r.layers[l].attended_tokens) {
      h = fnv1a(h, static_cast<std::uint64_t>(l));
      h = fnv1a(h, static_cast<std::uint64_t>(frame));
      h = fnv1a(h, static_cast<std::uint64_t>(token));
    }
  return h;
}

}  // namespace

StreamEngine::StreamEngine(const EngineConfig& cfg, int d, int L) : cfg_(cfg), d_(d), L_(L) {
  cfg_.validate();
  if (d < 1 || L < 1) throw ConfigError("stream dimensions must be positive");
  if (cfg_.retrieval.mode == RetrievalMode::TokenBaseline)
    pools_.resize(static_cast<std::size_t>(L));
}

void StreamEngine::process(const StreamEvent& event) {
  if (event.kind == StreamEvent::Kind::Frame) {
    ingest_frame(event);
  } else {
    answer_query(event.query);
  }
}

void StreamEngine::push_window(const FrameInput& frame) {
  window_.push_back(frame);
  while (static_cast<int>(window_.size()) > cfg_.retrieval.window_frames) window_.pop_front();
}

std::vector<KVEntry> StreamEngine::window_entries() const {
  std::vector<KVEntry> out;
  for (const FrameInput& f : window_)
    for (const auto& layer : f.layers)
      for (const KVEntry& e : layer) out.push_back(e);
  return out;
}

void StreamEngine::repin() {
  if (!store_) return;
  std::set<std::int64_t> pins;
  for (const FrameInput& f : window_) {
    std::set<std::int64_t> owners = index_->clusters_of_frame(f.frame_id);
    pins.insert(owners.begin(), owners.end());
  }
  store_->pin(pins);
}

void StreamEngine::build_now() {
  if (pending_.empty()) throw EmptyIndex("no frames available to build from");
  BuildConfig b = cfg_.build;
  b.seed = mix_seed(cfg_.seed, 1);
  index_.emplace(build_index(pending_, b));
  store_.emplace(*index_, cfg_.cost);
  MaintainerConfig m = cfg_.maintainer;
  m.seed = mix_seed(cfg_.seed, 2);
  maintainer_.emplace(*index_, *store_, m);
  built_ = true;
  std::int64_t last = pending_.back().frame_id;
  pending_.clear();
  repin();
  apply_cadence(last, -1);
  index_->check_invariants();
  store_->audit();
}

void StreamEngine::apply_cadence(std::int64_t frame_id, std::int64_t partition_id) {
  // Closing a partition pushes its unpinned clusters out; anything untouched
  // for the horizon follows. Pinned window clusters never move.
  if (last_partition_ >= 0 && partition_id >= 0 && partition_id != last_partition_) {
    const VisualPartition& closed = index_->partition(last_partition_);
    std::vector<std::int64_t> ids;
    for (const auto& [layer, list] : closed.per_layer_clusters)
      ids.insert(ids.end(), list.begin(), list.end());
    for (std::int64_t cid : ids) {
      const ClusterRecord& rec = index_->cluster(cid);
      if (rec.residence == Residence::Device && !rec.lazy_split) {
        std::set<std::int64_t> owners;
        for (const FrameInput& f : window_) {
          auto o = index_->clusters_of_frame(f.frame_id);
          owners.insert(o.begin(), o.end());
        }
        if (!owners.count(cid)) store_->offload(cid);
      }
    }
  }
  if (partition_id >= 0) last_partition_ = partition_id;

  std::vector<std::int64_t> stale;
  for (const auto& [cid, rec] : index_->clusters())
    if (rec.residence == Residence::Device && !rec.lazy_split &&
        rec.last_touch_frame + cfg_.offload_horizon_frames < frame_id)
      stale.push_back(cid);
  if (!stale.empty()) {
    std::set<std::int64_t> owners;
    for (const FrameInput& f : window_) {
      auto o = index_->clusters_of_frame(f.frame_id);
      owners.insert(o.begin(), o.end());
    }
    for (std::int64_t cid : stale)
      if (!owners.count(cid)) store_->offload(cid);
  }
  store_->enforce_capacity();
}

void StreamEngine::ingest_frame(const StreamEvent& event) {
  const FrameInput& frame = event.frame;
  if (static_cast<int>(frame.visual.size()) != d_)
    throw ConfigError("frame width does not match the engine");
  if (static_cast<int>(frame.layers.size()) != L_)
    throw ConfigError("frame layer count does not match the engine");

  frames_processed_ += 1;
  last_frame_id_ = frame.frame_id;
  frames_in_batch_ += 1;
  if (cfg_.batched_ingest) {
    if (frames_in_batch_ == cfg_.build_batch_frames) {
      ingest_cost_us_ += cfg_.ingest_overhead_us;
      frames_in_batch_ = 0;
    }
  } else {
    ingest_cost_us_ += cfg_.ingest_overhead_us;
    frames_in_batch_ = 0;
  }

  if (cfg_.retrieval.mode == RetrievalMode::TokenBaseline) {
    for (std::size_t l = 0; l < frame.layers.size(); ++l)
      for (const KVEntry& e : frame.layers[l]) pools_[l].push_back(e);
    push_window(frame);
    return;
  }

  if (!built_) {
    pending_.push_back(frame);
    push_window(frame);
    if (static_cast<int>(pending_.size()) >= cfg_.build_batch_frames) build_now();
    return;
  }

  std::int64_t pid = maintainer_->place_frame(frame.frame_id, frame.visual);
  for (const auto& layer : frame.layers)
    for (const KVEntry& e : layer) maintainer_->on_insert(pid, e);
  push_window(frame);
  repin();
  apply_cadence(frame.frame_id, pid);
}

void StreamEngine::answer_query(const QueryBundle& bundle) {
  QueryRow row;
  row.query_id = bundle.query_id;

  if (cfg_.retrieval.mode == RetrievalMode::TokenBaseline) {
    std::set<std::int64_t> window_frames;
    for (const FrameInput& f : window_) window_frames.insert(f.frame_id);
    std::size_t mark = baseline_ledger_.log().size();
    RetrievalResult r = retrieve_token_baseline(bundle, cfg_.retrieval, pools_, window_frames,
                                                cfg_.cost, baseline_ledger_);
    for (std::size_t i = mark; i < baseline_ledger_.log().size(); ++i) {
      row.ops += baseline_ledger_.log()[i].n_ops;
      row.bytes += baseline_ledger_.log()[i].bytes;
    }
    row.recall = r.recall;
    row.ttft_us = r.ttft_us;
    for (const LayerResult& lr : r.layers) {
      row.lookup_us += lr.latency.lookup_us;
      row.transfer_us += lr.latency.transfer_us;
      row.stall_us += lr.latency.stall_us;
      row.completion_us += lr.latency.completion_us;
      row.compute_us += lr.latency.compute_us;
    }
    row.realized_frames = static_cast<std::int64_t>(r.fetched_frames.size());
    row.context_frames = static_cast<std::int64_t>(r.context_frames.size());
    row.attended_digest = attended_digest(r);
    rows_.push_back(row);
    return;
  }

  if (!built_) build_now();  // a query cannot wait for the batch to fill

  std::size_t mark = store_->ledger().log().size();
  RetrievalResult r =
      retrieve(bundle, cfg_.retrieval, *index_, *store_, *maintainer_, window_entries());
  for (std::size_t i = mark; i < store_->ledger().log().size(); ++i) {
    row.ops += store_->ledger().log()[i].n_ops;
    row.bytes += store_->ledger().log()[i].bytes;
  }
  row.recall = r.recall;
  row.ttft_us = r.ttft_us;
  for (std::size_t l = 0; l < r.layers.size(); ++l) {
    const LayerResult& lr = r.layers[l];
    row.lookup_us += lr.latency.lookup_us;
    row.transfer_us += lr.latency.transfer_us;
    row.stall_us += lr.latency.stall_us;
    row.completion_us += lr.latency.completion_us;
    row.compute_us += lr.latency.compute_us;
    if (cfg_.retrieval.prefetch_enabled && l > 0) {
      row.prefetch_hits += lr.prefetch_hits;
      row.verified_clusters += lr.verified_clusters;
    }
  }
  row.realized_frames = static_cast<std::int64_t>(r.fetched_frames.size());
  row.context_frames = static_cast<std::int64_t>(r.context_frames.size());
  row.attended_digest = attended_digest(r);
  rows_.push_back(row);

  repin();
  index_->check_invariants();
  store_->audit();
}

RunOutput StreamEngine::finish() {
  RunOutput out;
  if (cfg_.retrieval.mode == RetrievalMode::Cluster) {
    if (!built_ && !pending_.empty()) build_now();
    if (built_) {
      index_->check_invariants();
      store_->audit();
      out.maintainer = maintainer_->stats();
      out.ledger = store_->ledger();
      out.final_partitions = static_cast<std::int64_t>(index_->partitions().size());
      out.final_clusters = static_cast<std::int64_t>(index_->clusters().size());
    }
  } else {
    baseline_ledger_.audit();
    out.ledger = baseline_ledger_;
  }
  if (cfg_.batched_ingest && frames_in_batch_ > 0) {
    ingest_cost_us_ += cfg_.ingest_overhead_us;
    frames_in_batch_ = 0;
  }
  out.rows = rows_;
  out.ingest_cost_us = ingest_cost_us_;
  out.frames_processed = frames_processed_;
  out.queries_processed = static_cast<std::int64_t>(rows_.size());
  return out;
}

RunOutput run_stream(const EngineConfig& cfg, int d, int L,
                     const std::vector<StreamEvent>& events) {
  StreamEngine engine(cfg, d, L);
  for (const StreamEvent& ev : events) engine.process(ev);
  return engine.finish();
}

}  // namespace kvclust
