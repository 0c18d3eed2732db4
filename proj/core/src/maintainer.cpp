#include "kvclust/maintainer.hpp"

#include <algorithm>
#include <cmath>

#include "kvclust/clustering.hpp"
#include "kvclust/error.hpp"

namespace kvclust {

double tau(std::int64_t n, const ThresholdConfig& cfg) {
  return cfg.tau_min + (cfg.tau_max - cfg.tau_min) *
                           std::exp(-static_cast<double>(n) / cfg.n0);
}

StatUpdate updated_stats(const DVec& rep, double variance, std::int64_t n, const Embedding& key) {
  if (rep.size() != key.size()) throw DimMismatch(rep.size(), key.size());
  StatUpdate out;
  out.rep.resize(rep.size());
  double dn = static_cast<double>(n);
  for (std::size_t i = 0; i < rep.size(); ++i)
    out.rep[i] = (dn * rep[i] + static_cast<double>(key[i])) / (dn + 1.0);
  out.variance = (dn * variance + sq_dist(key, out.rep)) / (dn + 1.0);
  return out;
}

Maintainer::Maintainer(HierIndex& index, TieredStore& store, const MaintainerConfig& cfg)
    : index_(index), store_(store), cfg_(cfg) {
  if (cfg_.threshold.tau_min < 0.0 || cfg_.threshold.tau_max < cfg_.threshold.tau_min)
    throw ConfigError("variance thresholds must satisfy 0 <= tau_min <= tau_max");
  if (cfg_.threshold.n0 <= 0.0) throw ConfigError("threshold horizon must be positive");
  if (cfg_.max_split_depth < 1) throw ConfigError("split depth must be at least 1");
  if (cfg_.visual_floor < -1.0 || cfg_.visual_floor > 1.0)
    throw ConfigError("visual floor must be a cosine value");
}

std::int64_t Maintainer::place_frame(std::int64_t frame_id, const Embedding& visual) {
  std::int64_t best = -1;
  double best_sim = -2.0;
  for (const VisualPartition& p : index_.partitions()) {
    double sim = cosine_sim(visual, p.visual_rep);
    if (sim > best_sim) {
      best_sim = sim;
      best = p.partition_id;
    }
  }
  if (best >= 0 && best_sim >= cfg_.visual_floor) {
    index_.append_frame(best, frame_id, visual);
    return best;
  }
  stats_.partitions_opened += 1;
  return index_.add_partition(frame_id, visual);
}

namespace {

struct Candidate {
  double sim;
  CandidateRef ref;
};

std::int64_t home_of(const HierIndex& index, const std::vector<std::int64_t>& children,
                     const KVEntry& entry) {
  for (std::int64_t id : children)
    for (const KVEntry& e : index.cluster(id).members)
      if (e.frame_id == entry.frame_id && e.layer_id == entry.layer_id &&
          e.token_id == entry.token_id)
        return id;
  return children.front();
}

}  // namespace

std::int64_t Maintainer::seed_cluster(std::int64_t partition_id, const KVEntry& entry) {
  ClusterRecord rec;
  rec.layer_id = entry.layer_id;
  rec.visual_parent = partition_id;
  rec.rep.assign(entry.key.begin(), entry.key.end());
  rec.variance = 0.0;
  rec.stat_count = 1;
  rec.members.push_back(entry);
  rec.residence = Residence::Device;
  std::int64_t id = index_.add_cluster(std::move(rec));
  store_.adopt(id);
  return id;
}

std::int64_t Maintainer::on_insert(std::int64_t partition_id, const KVEntry& entry) {
  stats_.inserts += 1;

  const VisualPartition& part = index_.partition(partition_id);
  auto it = part.per_layer_clusters.find(entry.layer_id);
  if (it == part.per_layer_clusters.end() || it->second.empty())
    return seed_cluster(partition_id, entry);

  Candidate best{-2.0, {-1, false}};
  bool have = false;
  for (std::int64_t cid : it->second) {
    const ClusterRecord& rec = index_.cluster(cid);
    Candidate live{cosine_sim(entry.key, rec.rep), {cid, false}};
    if (!have || live.sim > best.sim || (live.sim == best.sim && live.ref < best.ref)) {
      best = live;
      have = true;
    }
    if (index_.buffer_registered(cid)) {
      Candidate buf{cosine_sim(entry.key, rec.buffer_rep), {cid, true}};
      if (buf.sim > best.sim || (buf.sim == best.sim && buf.ref < best.ref)) best = buf;
    }
  }

  std::int64_t cid = best.ref.cluster_id;
  if (best.ref.is_buffer) {
    // Joins the pending bucket; the parent's running statistics still absorb it.
    ClusterRecord& rec = index_.cluster(cid);
    StatUpdate up = updated_stats(rec.rep, rec.variance, rec.stat_count, entry.key);
    rec.rep = std::move(up.rep);
    rec.variance = up.variance;
    rec.stat_count += 1;
    index_.add_to_buffer(cid, entry);
    store_.note_device_buffer_append(cid);
    stats_.deferred_marks += 1;
    return cid;
  }

  ClusterRecord& rec = index_.cluster(cid);
  std::int64_t n_pre = rec.n();
  StatUpdate up = updated_stats(rec.rep, rec.variance, rec.stat_count, entry.key);
  rec.rep = std::move(up.rep);
  rec.variance = up.variance;
  rec.stat_count += 1;

  if (rec.variance <= tau(n_pre, cfg_.threshold)) {
    index_.add_member(cid, entry);
    store_.note_device_append(cid);
    stats_.absorbed += 1;
    return cid;
  }

  if (rec.residence == Residence::Device) {
    stats_.immediate_splits += 1;
    std::vector<KVEntry> pool = rec.members;
    pool.insert(pool.end(), rec.buffer.begin(), rec.buffer.end());
    pool.push_back(entry);
    store_.forget(cid);
    index_.remove_cluster(cid);
    std::vector<std::int64_t> children =
        split_members(std::move(pool), partition_id, entry.layer_id, Residence::Device, 0);
    return home_of(index_, children, entry);
  }

  stats_.host_over_threshold += 1;

  if (!cfg_.defer_host_splits) {
    // Eager policy: pull the payload up over the link right now and split.
    store_.fetch(cid, TransferCause::Maintenance);
    stats_.maintenance_fetches += 1;
    stats_.immediate_splits += 1;
    std::vector<KVEntry> pool = rec.members;
    pool.insert(pool.end(), rec.buffer.begin(), rec.buffer.end());
    pool.push_back(entry);
    store_.forget(cid);
    index_.remove_cluster(cid);
    std::vector<std::int64_t> children =
        split_members(std::move(pool), partition_id, entry.layer_id, Residence::Device, 0);
    return home_of(index_, children, entry);
  }

  // Deferred: the entry parks device-side and the split waits for the next
  // retrieval of this cluster.
  rec.lazy_split = true;
  index_.add_to_buffer(cid, entry);
  index_.register_buffer(cid);
  store_.note_device_buffer_append(cid);
  stats_.deferred_marks += 1;
  return cid;
}

std::vector<std::int64_t> Maintainer::materialize(std::int64_t cluster_id) {
  ClusterRecord& rec = index_.cluster(cluster_id);
  if (!rec.lazy_split) return {cluster_id};
  if (rec.residence != Residence::Device)
    throw InvariantViolation("pending split settled without fetching the payload first");

  stats_.settled_splits += 1;
  std::vector<KVEntry> pool = rec.members;
  pool.insert(pool.end(), rec.buffer.begin(), rec.buffer.end());
  std::int64_t pid = rec.visual_parent;
  std::int32_t layer = rec.layer_id;
  Residence residence = rec.residence;
  store_.forget(cluster_id);
  index_.remove_cluster(cluster_id);
  return split_members(std::move(pool), pid, layer, residence, 0);
}

std::vector<std::int64_t> Maintainer::split_members(std::vector<KVEntry> members,
                                                    std::int64_t partition_id, std::int32_t layer,
                                                    Residence residence, int depth) {
  auto emit = [&](std::vector<KVEntry> group) {
    ClusterRecord rec;
    rec.layer_id = layer;
    rec.visual_parent = partition_id;
    rec.rep = compute_representative(group);
    rec.variance = compute_variance(group, rec.rep);
    rec.stat_count = static_cast<std::int64_t>(group.size());
    rec.members = std::move(group);
    rec.residence = residence;
    std::int64_t id = index_.add_cluster(std::move(rec));
    store_.adopt(id);
    return id;
  };

  std::vector<std::int64_t> out;
  if (members.size() < 2) {
    out.push_back(emit(std::move(members)));
    return out;
  }

  std::vector<Embedding> keys;
  keys.reserve(members.size());
  for (const KVEntry& e : members) keys.push_back(e.key);
  KMeansResult halves =
      split_two(keys, mix_seed(cfg_.seed, static_cast<std::uint64_t>(split_counter_++)));
  stats_.split_ops_total += 1;

  std::vector<std::vector<KVEntry>> groups(2);
  for (std::size_t i = 0; i < members.size(); ++i)
    groups[static_cast<std::size_t>(halves.assignments[i])].push_back(std::move(members[i]));

  for (auto& g : groups) {
    if (g.empty()) continue;
    DVec rep = compute_representative(g);
    double var = compute_variance(g, rep);
    if (depth + 1 < cfg_.max_split_depth && g.size() >= 2 &&
        var > tau(static_cast<std::int64_t>(g.size()), cfg_.threshold)) {
      auto sub = split_members(std::move(g), partition_id, layer, residence, depth + 1);
      out.insert(out.end(), sub.begin(), sub.end());
    } else {
      out.push_back(emit(std::move(g)));
    }
  }
  return out;
}

}  // namespace kvclust
