#pragma once

// Online cluster maintenance: assign each arriving key to its nearest
// cluster, fold it into the running statistics, and split clusters whose
// variance outgrows the size-adaptive threshold. Splits of host-resident
// clusters are deferred into a device-side buffer and settled when the
// cluster is next retrieved, so maintenance itself never touches the link.

#include <cstdint>
#include <vector>

#include "kvclust/index.hpp"
#include "kvclust/rng.hpp"
#include "kvclust/store.hpp"

namespace kvclust {

struct ThresholdConfig {
  double tau_min = 0.05;
  double tau_max = 0.3;
  double n0 = 32.0;
};

// tau(n) = tau_min + (tau_max - tau_min) * exp(-n / n0): permissive for
// young clusters, tightening toward tau_min as they grow.
double tau(std::int64_t n, const ThresholdConfig& cfg);

struct MaintainerConfig {
  ThresholdConfig threshold;
  bool defer_host_splits = true;   // false reproduces the eager policy
  int max_split_depth = 4;         // recursion cap when settling a deferred split
  double visual_floor = 0.75;      // below this, a frame opens a new partition
  std::uint64_t seed = 0;
};

struct MaintainerStats {
  std::int64_t inserts = 0;
  std::int64_t absorbed = 0;
  std::int64_t immediate_splits = 0;
  std::int64_t deferred_marks = 0;        // inserts routed into a pending buffer
  std::int64_t settled_splits = 0;        // deferred splits performed at retrieval
  std::int64_t split_ops_total = 0;       // every two-way split executed
  std::int64_t host_over_threshold = 0;   // over-threshold inserts hitting host-resident clusters
  std::int64_t maintenance_fetches = 0;   // link transfers made purely to split (eager policy only)
  std::int64_t partitions_opened = 0;
};

class Maintainer {
 public:
  Maintainer(HierIndex& index, TieredStore& store, const MaintainerConfig& cfg);

  // Routes a frame's visual embedding: nearest partition if similar enough,
  // otherwise a fresh partition. Returns the partition id.
  std::int64_t place_frame(std::int64_t frame_id, const Embedding& visual);

  // One arriving key-value entry. Follows the deferred-split policy; the
  // entry always lands device-side. Returns the cluster it was routed to.
  std::int64_t on_insert(std::int64_t partition_id, const KVEntry& entry);

  // Settles a pending split before the cluster's content is consumed by a
  // retrieval. Returns the replacement cluster ids (or {cluster_id} when
  // nothing was pending).
  std::vector<std::int64_t> materialize(std::int64_t cluster_id);

  const MaintainerStats& stats() const { return stats_; }

 private:
  HierIndex& index_;
  TieredStore& store_;
  MaintainerConfig cfg_;
  MaintainerStats stats_;
  std::int64_t split_counter_ = 0;

  std::int64_t seed_cluster(std::int64_t partition_id, const KVEntry& entry);
  // Two-way split of the given member set, recursing while a side still
  // exceeds its threshold. Children inherit the parent's partition, layer,
  // and residence. Returns new cluster ids.
  std::vector<std::int64_t> split_members(std::vector<KVEntry> members, std::int64_t partition_id,
                                          std::int32_t layer, Residence residence, int depth);
};

// Uncommitted one-step update of the running mean and variance, in the fixed
// evaluation order the conformance checks replay.
struct StatUpdate {
  DVec rep;
  double variance = 0.0;
};
StatUpdate updated_stats(const DVec& rep, double variance, std::int64_t n, const Embedding& key);

}  // namespace kvclust
