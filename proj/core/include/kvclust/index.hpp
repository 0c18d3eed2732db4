#pragma once

// The nested visual->semantic hierarchy: visual partitions over frames,
// per-layer semantic clusters inside each partition, and the device-resident
// representative set used for two-stage lookup.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "kvclust/clustering.hpp"
#include "kvclust/vecmath.hpp"

namespace kvclust {

enum class Residence { Device, Host };

struct KVEntry {
  Embedding key;    // semantic key of its layer
  Embedding value;  // opaque payload, same width
  std::int64_t frame_id = 0;
  std::int32_t layer_id = 0;
  std::int32_t token_id = 0;
};

struct ClusterRecord {
  std::int64_t cluster_id = 0;
  std::int32_t layer_id = 0;
  std::int64_t visual_parent = 0;
  std::vector<KVEntry> members;

  DVec rep;                      // running centroid, 64-bit
  double variance = 0.0;         // running cohesion signal, 64-bit
  std::int64_t stat_count = 0;   // inserts folded into rep/variance

  bool lazy_split = false;       // deferred-split marker
  std::vector<KVEntry> buffer;   // device-side entries awaiting the split
  DVec buffer_rep;               // running mean of buffered entries

  Residence residence = Residence::Device;
  std::int64_t device_tail = 0;  // members still device-side while Host-resident
  std::int64_t first_frame_id = 0;
  std::int64_t last_touch_frame = 0;  // newest member frame, drives offload cadence

  std::int64_t n() const { return static_cast<std::int64_t>(members.size()); }
  std::int64_t payload_bytes(std::int64_t bytes_per_entry) const { return n() * bytes_per_entry; }
};

struct VisualPartition {
  std::int64_t partition_id = 0;
  std::vector<std::int64_t> frame_ids;  // temporal order
  DVec visual_rep;                      // mean of member frames' visual embeddings
  std::int64_t visual_stat_count = 0;
  std::map<std::int32_t, std::vector<std::int64_t>> per_layer_clusters;
};

// A retrieval candidate: a live cluster, or the registered lazy-split buffer
// of a flagged cluster (addressed through its parent's id).
struct CandidateRef {
  std::int64_t cluster_id = 0;
  bool is_buffer = false;

  friend bool operator==(const CandidateRef&, const CandidateRef&) = default;
  friend auto operator<=>(const CandidateRef&, const CandidateRef&) = default;
};

struct FrameInput {
  std::int64_t frame_id = 0;
  Embedding visual;
  std::vector<std::vector<KVEntry>> layers;  // layers[l] = that layer's entries
};

struct BuildConfig {
  int target_visual_cluster_size = 8;    // frames per visual partition
  int target_semantic_cluster_size = 32; // keys per semantic cluster
  int kmeans_max_iters = 50;
  double kmeans_tol = 1e-6;
  std::uint64_t seed = 0;
};

class HierIndex {
 public:
  HierIndex() = default;
  HierIndex(std::int32_t dim, std::int32_t layers) : dim_(dim), layers_(layers) {}

  std::int32_t dim() const { return dim_; }
  std::int32_t num_layers() const { return layers_; }
  bool empty() const { return partitions_.empty(); }

  const std::vector<VisualPartition>& partitions() const { return partitions_; }
  VisualPartition& partition(std::int64_t id);
  const VisualPartition& partition(std::int64_t id) const;

  const std::map<std::int64_t, ClusterRecord>& clusters() const { return clusters_; }
  ClusterRecord& cluster(std::int64_t id);
  const ClusterRecord& cluster(std::int64_t id) const;
  bool has_cluster(std::int64_t id) const { return clusters_.count(id) != 0; }

  // Representative set: live clusters plus registered buffers, per layer.
  const std::vector<CandidateRef>& rep_set(std::int32_t layer) const;
  // Live cluster ids per layer, ordered by first-member frame arrival.
  const std::vector<std::int64_t>& rep_timeline(std::int32_t layer) const;

  // The representative vector a candidate is ranked by.
  const DVec& candidate_rep(const CandidateRef& ref) const;

  std::int64_t add_partition(std::int64_t first_frame_id, const Embedding& visual);
  void append_frame(std::int64_t partition_id, std::int64_t frame_id, const Embedding& visual);

  // Inserts a fully formed cluster, registering it in the representative set
  // and the timeline. Returns its id.
  std::int64_t add_cluster(ClusterRecord&& rec);
  // Removes a live cluster along with its registrations.
  void remove_cluster(std::int64_t id);

  void register_buffer(std::int64_t cluster_id);
  void deregister_buffer(std::int64_t cluster_id);
  bool buffer_registered(std::int64_t cluster_id) const;

  // Member mutation goes through the index so the frame -> cluster map stays
  // aligned. Statistics are the caller's business.
  void add_member(std::int64_t cluster_id, KVEntry entry);
  void add_to_buffer(std::int64_t cluster_id, KVEntry entry);

  // Two-stage lookup, stage one: partitions ranked by cosine to visual_rep,
  // ties to the lower partition id. Returns at most k_v ids.
  std::vector<std::int64_t> visual_topk(const Embedding& query, int k_v) const;

  // Stage two: candidates drawn from the given partitions' layer clusters and
  // registered buffers, ranked by cosine to their representatives. Ties break
  // by cluster id, live cluster before its buffer.
  std::vector<CandidateRef> semantic_topk(const Embedding& query, std::int32_t layer,
                                          const std::vector<std::int64_t>& partition_ids,
                                          int k_s) const;

  // Clusters that hold entries of the given frame (any layer).
  std::set<std::int64_t> clusters_of_frame(std::int64_t frame_id) const;

  std::int64_t entries_at_layer(std::int32_t layer) const;  // members + buffered
  std::int64_t total_member_entries() const;                // members only

  // Structural self-check; throws InvariantViolation on any breach.
  void check_invariants() const;

  std::string to_json_string() const;
  static HierIndex from_json_string(const std::string& text);

 private:
  friend HierIndex build_index(const std::vector<FrameInput>&, const BuildConfig&);

  std::int32_t dim_ = 0;
  std::int32_t layers_ = 0;
  std::vector<VisualPartition> partitions_;  // partition_id == position
  std::map<std::int64_t, ClusterRecord> clusters_;
  std::vector<std::vector<CandidateRef>> rep_set_;        // per layer
  std::vector<std::vector<std::int64_t>> rep_timeline_;   // per layer
  std::vector<std::set<std::int64_t>> registered_buffers_;  // per layer
  std::map<std::int64_t, std::set<std::int64_t>> frame_clusters_;
  std::int64_t next_cluster_id_ = 0;

  void timeline_insert(const ClusterRecord& rec);
  void timeline_erase(const ClusterRecord& rec);
};

// Exact statistics over a member set: the arithmetic-mean representative and
// the mean squared distance of members to it, both in 64-bit.
DVec compute_representative(const std::vector<KVEntry>& members);
double compute_variance(const std::vector<KVEntry>& members, const DVec& rep);

// Batch construction: visual k-means over frames, then per-partition
// per-layer k-means over keys, with k = ceil(count / target size).
HierIndex build_index(const std::vector<FrameInput>& frames, const BuildConfig& cfg);

}  // namespace kvclust
