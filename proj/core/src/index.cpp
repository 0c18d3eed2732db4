#include "kvclust/index.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "kvclust/error.hpp"
#include "kvclust/rng.hpp"

namespace kvclust {

using json = nlohmann::json;

namespace {

void require_layer(std::int32_t layer, std::int32_t layers) {
  if (layer < 0 || layer >= layers) throw BadLayer(layer);
}

}  // namespace

VisualPartition& HierIndex::partition(std::int64_t id) {
  if (id < 0 || id >= static_cast<std::int64_t>(partitions_.size()))
    throw UnknownCluster(id);
  return partitions_[static_cast<std::size_t>(id)];
}

const VisualPartition& HierIndex::partition(std::int64_t id) const {
  return const_cast<HierIndex*>(this)->partition(id);
}

ClusterRecord& HierIndex::cluster(std::int64_t id) {
  auto it = clusters_.find(id);
  if (it == clusters_.end()) throw UnknownCluster(id);
  return it->second;
}

const ClusterRecord& HierIndex::cluster(std::int64_t id) const {
  return const_cast<HierIndex*>(this)->cluster(id);
}

const std::vector<CandidateRef>& HierIndex::rep_set(std::int32_t layer) const {
  require_layer(layer, layers_);
  return rep_set_[static_cast<std::size_t>(layer)];
}

const std::vector<std::int64_t>& HierIndex::rep_timeline(std::int32_t layer) const {
  require_layer(layer, layers_);
  return rep_timeline_[static_cast<std::size_t>(layer)];
}

const DVec& HierIndex::candidate_rep(const CandidateRef& ref) const {
  const ClusterRecord& rec = cluster(ref.cluster_id);
  return ref.is_buffer ? rec.buffer_rep : rec.rep;
}

std::int64_t HierIndex::add_partition(std::int64_t first_frame_id, const Embedding& visual) {
  if (static_cast<std::int32_t>(visual.size()) != dim_)
    throw DimMismatch(visual.size(), static_cast<std::size_t>(dim_));
  VisualPartition p;
  p.partition_id = static_cast<std::int64_t>(partitions_.size());
  p.frame_ids.push_back(first_frame_id);
  p.visual_rep.assign(visual.begin(), visual.end());
  p.visual_stat_count = 1;
  partitions_.push_back(std::move(p));
  return partitions_.back().partition_id;
}

void HierIndex::append_frame(std::int64_t partition_id, std::int64_t frame_id,
                             const Embedding& visual) {
  VisualPartition& p = partition(partition_id);
  p.frame_ids.push_back(frame_id);
  double n = static_cast<double>(p.visual_stat_count);
  for (std::size_t i = 0; i < p.visual_rep.size(); ++i)
    p.visual_rep[i] = (n * p.visual_rep[i] + visual[i]) / (n + 1.0);
  p.visual_stat_count += 1;
}

void HierIndex::timeline_insert(const ClusterRecord& rec) {
  auto& line = rep_timeline_[static_cast<std::size_t>(rec.layer_id)];
  auto key = std::pair{rec.first_frame_id, rec.cluster_id};
  auto pos = std::lower_bound(line.begin(), line.end(), key,
                              [this](std::int64_t id, const std::pair<std::int64_t, std::int64_t>& k) {
                                const ClusterRecord& c = clusters_.at(id);
                                return std::pair{c.first_frame_id, c.cluster_id} < k;
                              });
  line.insert(pos, rec.cluster_id);
}

void HierIndex::timeline_erase(const ClusterRecord& rec) {
  auto& line = rep_timeline_[static_cast<std::size_t>(rec.layer_id)];
  line.erase(std::remove(line.begin(), line.end(), rec.cluster_id), line.end());
}

std::int64_t HierIndex::add_cluster(ClusterRecord&& rec) {
  if (rec.members.empty()) throw EmptyCluster("cluster with no members");
  require_layer(rec.layer_id, layers_);
  if (rep_set_.empty()) {
    rep_set_.resize(static_cast<std::size_t>(layers_));
    rep_timeline_.resize(static_cast<std::size_t>(layers_));
    registered_buffers_.resize(static_cast<std::size_t>(layers_));
  }
  rec.cluster_id = next_cluster_id_++;
  rec.first_frame_id = rec.members.front().frame_id;
  rec.last_touch_frame = rec.members.front().frame_id;
  for (const KVEntry& e : rec.members) {
    rec.first_frame_id = std::min(rec.first_frame_id, e.frame_id);
    rec.last_touch_frame = std::max(rec.last_touch_frame, e.frame_id);
    frame_clusters_[e.frame_id].insert(rec.cluster_id);
  }
  std::int64_t id = rec.cluster_id;
  VisualPartition& p = partition(rec.visual_parent);
  p.per_layer_clusters[rec.layer_id].push_back(id);
  rep_set_[static_cast<std::size_t>(rec.layer_id)].push_back({id, false});
  clusters_.emplace(id, std::move(rec));
  timeline_insert(clusters_.at(id));
  return id;
}

void HierIndex::remove_cluster(std::int64_t id) {
  ClusterRecord& rec = cluster(id);
  if (buffer_registered(id)) deregister_buffer(id);
  timeline_erase(rec);
  auto& reps = rep_set_[static_cast<std::size_t>(rec.layer_id)];
  reps.erase(std::remove(reps.begin(), reps.end(), CandidateRef{id, false}), reps.end());
  auto& siblings = partition(rec.visual_parent).per_layer_clusters[rec.layer_id];
  siblings.erase(std::remove(siblings.begin(), siblings.end(), id), siblings.end());
  for (const KVEntry& e : rec.members) {
    auto it = frame_clusters_.find(e.frame_id);
    if (it != frame_clusters_.end()) {
      it->second.erase(id);
      if (it->second.empty()) frame_clusters_.erase(it);
    }
  }
  for (const KVEntry& e : rec.buffer) {
    auto it = frame_clusters_.find(e.frame_id);
    if (it != frame_clusters_.end()) {
      it->second.erase(id);
      if (it->second.empty()) frame_clusters_.erase(it);
    }
  }
  clusters_.erase(id);
}

bool HierIndex::buffer_registered(std::int64_t cluster_id) const {
  for (const auto& layer_set : registered_buffers_)
    if (layer_set.count(cluster_id) != 0) return true;
  return false;
}

void HierIndex::register_buffer(std::int64_t cluster_id) {
  ClusterRecord& rec = cluster(cluster_id);
  auto layer = static_cast<std::size_t>(rec.layer_id);
  if (registered_buffers_[layer].insert(cluster_id).second)
    rep_set_[layer].push_back({cluster_id, true});
}

void HierIndex::deregister_buffer(std::int64_t cluster_id) {
  ClusterRecord& rec = cluster(cluster_id);
  auto layer = static_cast<std::size_t>(rec.layer_id);
  if (registered_buffers_[layer].erase(cluster_id)) {
    auto& reps = rep_set_[layer];
    reps.erase(std::remove(reps.begin(), reps.end(), CandidateRef{cluster_id, true}),
               reps.end());
  }
}

void HierIndex::add_member(std::int64_t cluster_id, KVEntry entry) {
  ClusterRecord& rec = cluster(cluster_id);
  frame_clusters_[entry.frame_id].insert(cluster_id);
  rec.last_touch_frame = std::max(rec.last_touch_frame, entry.frame_id);
  rec.members.push_back(std::move(entry));
}

void HierIndex::add_to_buffer(std::int64_t cluster_id, KVEntry entry) {
  ClusterRecord& rec = cluster(cluster_id);
  frame_clusters_[entry.frame_id].insert(cluster_id);
  rec.last_touch_frame = std::max(rec.last_touch_frame, entry.frame_id);
  std::size_t n = rec.buffer.size();
  if (n == 0) {
    rec.buffer_rep.assign(entry.key.begin(), entry.key.end());
  } else {
    double dn = static_cast<double>(n);
    for (std::size_t i = 0; i < rec.buffer_rep.size(); ++i)
      rec.buffer_rep[i] = (dn * rec.buffer_rep[i] + entry.key[i]) / (dn + 1.0);
  }
  rec.buffer.push_back(std::move(entry));
}

std::vector<std::int64_t> HierIndex::visual_topk(const Embedding& query, int k_v) const {
  if (partitions_.empty()) throw EmptyIndex("lookup before any index was built");
  if (k_v <= 0) throw ConfigError("visual top-k must be positive");
  std::vector<std::pair<double, std::int64_t>> ranked;
  ranked.reserve(partitions_.size());
  for (const VisualPartition& p : partitions_)
    ranked.emplace_back(cosine_sim(query, p.visual_rep), p.partition_id);
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::size_t take = std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(k_v));
  std::vector<std::int64_t> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back(ranked[i].second);
  return out;
}

std::vector<CandidateRef> HierIndex::semantic_topk(const Embedding& query, std::int32_t layer,
                                                   const std::vector<std::int64_t>& partition_ids,
                                                   int k_s) const {
  require_layer(layer, layers_);
  if (k_s <= 0) throw ConfigError("semantic top-k must be positive");
  struct Scored {
    double sim;
    CandidateRef ref;
  };
  std::vector<Scored> ranked;
  for (std::int64_t pid : partition_ids) {
    const VisualPartition& p = partition(pid);
    auto it = p.per_layer_clusters.find(layer);
    if (it == p.per_layer_clusters.end()) continue;
    for (std::int64_t cid : it->second) {
      const ClusterRecord& rec = cluster(cid);
      ranked.push_back({cosine_sim(query, rec.rep), {cid, false}});
      if (buffer_registered(cid))
        ranked.push_back({cosine_sim(query, rec.buffer_rep), {cid, true}});
    }
  }
  std::sort(ranked.begin(), ranked.end(), [](const Scored& a, const Scored& b) {
    if (a.sim != b.sim) return a.sim > b.sim;
    return a.ref < b.ref;
  });
  std::size_t take = std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(k_s));
  std::vector<CandidateRef> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back(ranked[i].ref);
  return out;
}

std::set<std::int64_t> HierIndex::clusters_of_frame(std::int64_t frame_id) const {
  auto it = frame_clusters_.find(frame_id);
  if (it == frame_clusters_.end()) return {};
  return it->second;
}

std::int64_t HierIndex::entries_at_layer(std::int32_t layer) const {
  require_layer(layer, layers_);
  std::int64_t total = 0;
  for (const auto& [id, rec] : clusters_)
    if (rec.layer_id == layer)
      total += rec.n() + static_cast<std::int64_t>(rec.buffer.size());
  return total;
}

std::int64_t HierIndex::total_member_entries() const {
  std::int64_t total = 0;
  for (const auto& [id, rec] : clusters_) total += rec.n();
  return total;
}

void HierIndex::check_invariants() const {
  auto fail = [](const std::string& what) { throw InvariantViolation(what); };

  for (const VisualPartition& p : partitions_) {
    if (p.partition_id != static_cast<std::int64_t>(&p - partitions_.data()))
      fail("partition id out of step with its slot");
    if (!std::is_sorted(p.frame_ids.begin(), p.frame_ids.end()))
      fail("partition frame list not in temporal order");
    if (static_cast<std::int32_t>(p.visual_rep.size()) != dim_)
      fail("visual representative has wrong width");
    for (const auto& [layer, ids] : p.per_layer_clusters) {
      for (std::int64_t cid : ids) {
        auto it = clusters_.find(cid);
        if (it == clusters_.end()) fail("partition lists a cluster that does not exist");
        if (it->second.visual_parent != p.partition_id)
          fail("cluster parent does not match the partition listing it");
        if (it->second.layer_id != layer) fail("cluster filed under the wrong layer");
      }
    }
  }

  std::map<std::int64_t, std::set<std::int64_t>> frames;
  for (const auto& [id, rec] : clusters_) {
    if (rec.cluster_id != id) fail("cluster id out of step with its key");
    if (rec.members.empty()) fail("cluster with no members");
    if (static_cast<std::int32_t>(rec.rep.size()) != dim_)
      fail("cluster representative has wrong width");
    if (!(rec.variance >= 0.0)) fail("negative cluster variance");
    if (rec.stat_count != rec.n() + static_cast<std::int64_t>(rec.buffer.size()))
      fail("statistics count out of step with held entries");
    if (rec.lazy_split != !rec.buffer.empty())
      fail("deferred-split flag out of step with buffer");
    if (rec.lazy_split != buffer_registered(id))
      fail("buffer registration out of step with deferred-split flag");
    if (rec.residence == Residence::Device && rec.device_tail != 0)
      fail("device-resident cluster with a device tail");
    if (rec.device_tail < 0 || rec.device_tail > rec.n())
      fail("device tail outside the member count");
    std::int64_t first = rec.members.front().frame_id;
    for (const KVEntry& e : rec.members) {
      if (e.layer_id != rec.layer_id) fail("member entry from the wrong layer");
      first = std::min(first, e.frame_id);
      frames[e.frame_id].insert(id);
    }
    for (const KVEntry& e : rec.buffer) {
      if (e.layer_id != rec.layer_id) fail("buffered entry from the wrong layer");
      frames[e.frame_id].insert(id);
    }
    if (first != rec.first_frame_id) fail("first-frame marker out of step with members");
  }
  if (frames != frame_clusters_) fail("frame lookup map out of step with cluster contents");

  for (std::int32_t layer = 0; layer < layers_; ++layer) {
    auto li = static_cast<std::size_t>(layer);
    std::set<CandidateRef> seen;
    if (li < rep_set_.size()) {
      for (const CandidateRef& ref : rep_set_[li]) {
        if (!seen.insert(ref).second) fail("duplicate entry in the representative set");
        auto it = clusters_.find(ref.cluster_id);
        if (it == clusters_.end()) fail("representative set names a missing cluster");
        if (it->second.layer_id != layer) fail("representative set entry on the wrong layer");
        if (ref.is_buffer && !it->second.lazy_split)
          fail("registered buffer on a cluster without a pending split");
      }
    }
    std::size_t live = 0;
    for (const auto& [id, rec] : clusters_)
      if (rec.layer_id == layer) {
        ++live;
        if (!seen.count({id, false})) fail("live cluster missing from the representative set");
      }
    const auto& line = li < rep_timeline_.size() ? rep_timeline_[li] : std::vector<std::int64_t>{};
    if (line.size() != live) fail("timeline length out of step with live clusters");
    for (std::size_t i = 0; i + 1 < line.size(); ++i) {
      const ClusterRecord& a = clusters_.at(line[i]);
      const ClusterRecord& b = clusters_.at(line[i + 1]);
      if (std::pair{a.first_frame_id, a.cluster_id} >= std::pair{b.first_frame_id, b.cluster_id})
        fail("timeline not ordered by arrival");
    }
  }
}

DVec compute_representative(const std::vector<KVEntry>& members) {
  if (members.empty()) throw EmptyCluster("cluster with no members");
  DVec sum(members.front().key.size(), 0.0);
  for (const KVEntry& e : members) {
    if (e.key.size() != sum.size()) throw DimMismatch(e.key.size(), sum.size());
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += e.key[i];
  }
  double inv = 1.0 / static_cast<double>(members.size());
  for (double& v : sum) v *= inv;
  return sum;
}

double compute_variance(const std::vector<KVEntry>& members, const DVec& rep) {
  if (members.empty()) throw EmptyCluster("cluster with no members");
  double total = 0.0;
  for (const KVEntry& e : members) total += sq_dist(e.key, rep);
  return total / static_cast<double>(members.size());
}

HierIndex build_index(const std::vector<FrameInput>& frames, const BuildConfig& cfg) {
  if (frames.empty()) throw EmptyInput("no frames to index");
  if (cfg.target_visual_cluster_size <= 0 || cfg.target_semantic_cluster_size <= 0)
    throw ConfigError("target cluster sizes must be positive");
  auto dim = static_cast<std::int32_t>(frames.front().visual.size());
  auto layers = static_cast<std::int32_t>(frames.front().layers.size());
  if (layers <= 0) throw ConfigError("frames carry no layers");

  HierIndex index(dim, layers);
  index.rep_set_.resize(static_cast<std::size_t>(layers));
  index.rep_timeline_.resize(static_cast<std::size_t>(layers));
  index.registered_buffers_.resize(static_cast<std::size_t>(layers));

  std::vector<Embedding> visuals;
  visuals.reserve(frames.size());
  for (const FrameInput& f : frames) {
    if (static_cast<std::int32_t>(f.visual.size()) != dim)
      throw DimMismatch(f.visual.size(), static_cast<std::size_t>(dim));
    if (static_cast<std::int32_t>(f.layers.size()) != layers)
      throw ConfigError("frames disagree on layer count");
    visuals.push_back(f.visual);
  }

  std::size_t n = frames.size();
  KMeansConfig vis_cfg;
  vis_cfg.k = static_cast<int>((n + cfg.target_visual_cluster_size - 1) /
                               cfg.target_visual_cluster_size);
  vis_cfg.max_iters = cfg.kmeans_max_iters;
  vis_cfg.tol = cfg.kmeans_tol;
  vis_cfg.seed = cfg.seed;
  KMeansResult vis = spherical_kmeans(visuals, vis_cfg);

  std::size_t n_parts = vis.centroids.size();
  std::vector<std::vector<std::size_t>> part_frames(n_parts);
  for (std::size_t i = 0; i < n; ++i)
    part_frames[static_cast<std::size_t>(vis.assignments[i])].push_back(i);

  for (std::size_t p = 0; p < n_parts; ++p) {
    VisualPartition part;
    part.partition_id = static_cast<std::int64_t>(p);
    std::vector<Embedding> own;
    for (std::size_t fi : part_frames[p]) {
      part.frame_ids.push_back(frames[fi].frame_id);
      own.push_back(frames[fi].visual);
    }
    part.visual_rep = dmean(own);
    part.visual_stat_count = static_cast<std::int64_t>(own.size());
    index.partitions_.push_back(std::move(part));
  }

  for (std::size_t p = 0; p < n_parts; ++p) {
    for (std::int32_t layer = 0; layer < layers; ++layer) {
      std::vector<KVEntry> pool;
      for (std::size_t fi : part_frames[p])
        for (const KVEntry& e : frames[fi].layers[static_cast<std::size_t>(layer)])
          pool.push_back(e);
      if (pool.empty()) continue;
      std::vector<Embedding> keys;
      keys.reserve(pool.size());
      for (const KVEntry& e : pool) keys.push_back(e.key);

      KMeansConfig sem_cfg;
      sem_cfg.k = static_cast<int>((pool.size() + cfg.target_semantic_cluster_size - 1) /
                                   static_cast<std::size_t>(cfg.target_semantic_cluster_size));
      sem_cfg.max_iters = cfg.kmeans_max_iters;
      sem_cfg.tol = cfg.kmeans_tol;
      sem_cfg.seed = mix_seed(cfg.seed, (static_cast<std::uint64_t>(p) << 8) |
                                            static_cast<std::uint64_t>(layer) | 0x100u);
      KMeansResult sem = spherical_kmeans(keys, sem_cfg);

      std::vector<std::vector<KVEntry>> groups(sem.centroids.size());
      for (std::size_t i = 0; i < pool.size(); ++i)
        groups[static_cast<std::size_t>(sem.assignments[i])].push_back(pool[i]);
      for (auto& g : groups) {
        ClusterRecord rec;
        rec.layer_id = layer;
        rec.visual_parent = static_cast<std::int64_t>(p);
        rec.rep = compute_representative(g);
        rec.variance = compute_variance(g, rec.rep);
        rec.stat_count = static_cast<std::int64_t>(g.size());
        rec.members = std::move(g);
        index.add_cluster(std::move(rec));
      }
    }
  }
  return index;
}

namespace {

json embedding_to_json(const Embedding& v) {
  json arr = json::array();
  for (float x : v) arr.push_back(static_cast<double>(x));
  return arr;
}

Embedding embedding_from_json(const json& arr) {
  Embedding v;
  v.reserve(arr.size());
  for (const auto& x : arr) v.push_back(static_cast<float>(x.get<double>()));
  return v;
}

json entry_to_json(const KVEntry& e) {
  return json{{"key", embedding_to_json(e.key)},
              {"value", embedding_to_json(e.value)},
              {"frame", e.frame_id},
              {"layer", e.layer_id},
              {"token", e.token_id}};
}

KVEntry entry_from_json(const json& j) {
  KVEntry e;
  e.key = embedding_from_json(j.at("key"));
  e.value = embedding_from_json(j.at("value"));
  e.frame_id = j.at("frame").get<std::int64_t>();
  e.layer_id = j.at("layer").get<std::int32_t>();
  e.token_id = j.at("token").get<std::int32_t>();
  return e;
}

}  // namespace

std::string HierIndex::to_json_string() const {
  json root;
  root["format"] = "kvclust.index.v1";
  root["dim"] = dim_;
  root["layers"] = layers_;
  root["next_cluster_id"] = next_cluster_id_;

  json parts = json::array();
  for (const VisualPartition& p : partitions_) {
    json jp;
    jp["id"] = p.partition_id;
    jp["frames"] = p.frame_ids;
    jp["visual_rep"] = p.visual_rep;
    jp["visual_stat_count"] = p.visual_stat_count;
    json layer_map = json::object();
    for (const auto& [layer, ids] : p.per_layer_clusters)
      layer_map[std::to_string(layer)] = ids;
    jp["clusters"] = std::move(layer_map);
    parts.push_back(std::move(jp));
  }
  root["partitions"] = std::move(parts);

  json clusters = json::array();
  for (const auto& [id, rec] : clusters_) {
    json jc;
    jc["id"] = id;
    jc["layer"] = rec.layer_id;
    jc["parent"] = rec.visual_parent;
    jc["rep"] = rec.rep;
    jc["variance"] = rec.variance;
    jc["stat_count"] = rec.stat_count;
    jc["lazy_split"] = rec.lazy_split;
    jc["residence"] = rec.residence == Residence::Device ? "device" : "host";
    jc["device_tail"] = rec.device_tail;
    jc["first_frame"] = rec.first_frame_id;
    jc["last_touch"] = rec.last_touch_frame;
    json members = json::array();
    for (const KVEntry& e : rec.members) members.push_back(entry_to_json(e));
    jc["members"] = std::move(members);
    json buffer = json::array();
    for (const KVEntry& e : rec.buffer) buffer.push_back(entry_to_json(e));
    jc["buffer"] = std::move(buffer);
    jc["buffer_rep"] = rec.buffer_rep;
    clusters.push_back(std::move(jc));
  }
  root["clusters"] = std::move(clusters);
  return root.dump(2);
}

HierIndex HierIndex::from_json_string(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(0, std::string("bad index json: ") + e.what());
  }
  if (root.value("format", "") != "kvclust.index.v1")
    throw ParseError(0, "unrecognized index format");

  HierIndex index(root.at("dim").get<std::int32_t>(), root.at("layers").get<std::int32_t>());
  index.next_cluster_id_ = root.at("next_cluster_id").get<std::int64_t>();
  auto layers = static_cast<std::size_t>(index.layers_);
  index.rep_set_.resize(layers);
  index.rep_timeline_.resize(layers);
  index.registered_buffers_.resize(layers);

  for (const json& jp : root.at("partitions")) {
    VisualPartition p;
    p.partition_id = jp.at("id").get<std::int64_t>();
    p.frame_ids = jp.at("frames").get<std::vector<std::int64_t>>();
    p.visual_rep = jp.at("visual_rep").get<DVec>();
    p.visual_stat_count = jp.at("visual_stat_count").get<std::int64_t>();
    for (const auto& [layer_str, ids] : jp.at("clusters").items())
      p.per_layer_clusters[std::stoi(layer_str)] = ids.get<std::vector<std::int64_t>>();
    index.partitions_.push_back(std::move(p));
  }

  for (const json& jc : root.at("clusters")) {
    ClusterRecord rec;
    rec.cluster_id = jc.at("id").get<std::int64_t>();
    rec.layer_id = jc.at("layer").get<std::int32_t>();
    rec.visual_parent = jc.at("parent").get<std::int64_t>();
    rec.rep = jc.at("rep").get<DVec>();
    rec.variance = jc.at("variance").get<double>();
    rec.stat_count = jc.at("stat_count").get<std::int64_t>();
    rec.lazy_split = jc.at("lazy_split").get<bool>();
    rec.residence = jc.at("residence").get<std::string>() == "device" ? Residence::Device
                                                                      : Residence::Host;
    rec.device_tail = jc.at("device_tail").get<std::int64_t>();
    rec.first_frame_id = jc.at("first_frame").get<std::int64_t>();
    rec.last_touch_frame = jc.at("last_touch").get<std::int64_t>();
    for (const json& je : jc.at("members")) rec.members.push_back(entry_from_json(je));
    for (const json& je : jc.at("buffer")) rec.buffer.push_back(entry_from_json(je));
    rec.buffer_rep = jc.at("buffer_rep").get<DVec>();

    std::int64_t id = rec.cluster_id;
    auto li = static_cast<std::size_t>(rec.layer_id);
    for (const KVEntry& e : rec.members) index.frame_clusters_[e.frame_id].insert(id);
    for (const KVEntry& e : rec.buffer) index.frame_clusters_[e.frame_id].insert(id);
    index.rep_set_[li].push_back({id, false});
    index.clusters_.emplace(id, std::move(rec));
    index.timeline_insert(index.clusters_.at(id));
    if (index.clusters_.at(id).lazy_split) index.register_buffer(id);
  }
  return index;
}

}  // namespace kvclust
