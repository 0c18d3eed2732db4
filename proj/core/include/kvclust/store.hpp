#pragma once

// Two-tier residency for cluster payloads with an analytic transfer cost
// model. Every host<->device move lands in a ledger keyed by cause, so runs
// can report exactly where simulated I/O time went.

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "kvclust/index.hpp"

namespace kvclust {

struct CostModel {
  double alpha_us = 10.0;          // fixed cost per transfer operation
  double beta_us_per_byte = 0.001; // marginal cost per byte moved
  std::int64_t bytes_per_entry = 0;  // 0 means derive from entry width
  std::int64_t device_capacity_entries = 1 << 20;

  double transfer_cost(std::int64_t n_ops, std::int64_t bytes) const {
    return static_cast<double>(n_ops) * alpha_us +
           static_cast<double>(bytes) * beta_us_per_byte;
  }
  std::int64_t entry_bytes(std::int32_t dim) const {
    return bytes_per_entry > 0 ? bytes_per_entry
                               : static_cast<std::int64_t>(dim) * 2 * static_cast<std::int64_t>(sizeof(float));
  }
};

enum class TransferCause { Retrieval, Maintenance, Prefetch, Completion, Offload };

const char* to_string(TransferCause cause);

struct TransferOp {
  TransferCause cause = TransferCause::Retrieval;
  bool to_device = true;
  std::int64_t cluster_id = -1;  // -1 for token-granular moves
  std::int64_t n_ops = 0;
  std::int64_t bytes = 0;
  double cost_us = 0.0;
};

struct CauseTotals {
  std::int64_t n_ops = 0;
  std::int64_t bytes = 0;
  double cost_us = 0.0;
};

class TransferLedger {
 public:
  void record(const TransferOp& op);
  const std::vector<TransferOp>& log() const { return log_; }
  const std::map<std::string, CauseTotals>& by_cause() const { return totals_; }
  CauseTotals totals() const;
  CauseTotals cause(TransferCause c) const;

  // Re-derives the per-cause totals from the op log and compares against the
  // incrementally maintained ones. Throws InvariantViolation on mismatch.
  void audit() const;

  void clear();

 private:
  std::vector<TransferOp> log_;
  std::map<std::string, CauseTotals> totals_;
};

// Moves cluster payloads between tiers, tracks device occupancy in entries,
// and evicts least-recently-used unpinned clusters when over capacity.
class TieredStore {
 public:
  TieredStore(HierIndex& index, const CostModel& cost);

  // Registers a cluster that already has its residence field set, counting
  // its device-side entries against capacity. Used at build time and after
  // splits.
  void adopt(std::int64_t cluster_id);
  void forget(std::int64_t cluster_id);

  // Brings a host-resident cluster's payload onto the device in one batched
  // operation (only the entries not already device-side move). Returns the
  // simulated cost of this call; 0 if already resident.
  double fetch(std::int64_t cluster_id, TransferCause cause);

  // Pushes a device-resident cluster (or the device tail of a host one) out.
  double offload(std::int64_t cluster_id);

  // One new entry appended on the device side of the given cluster.
  void note_device_append(std::int64_t cluster_id);
  // Same, for an entry parked in the cluster's pending-split buffer.
  void note_device_buffer_append(std::int64_t cluster_id);

  void touch(std::int64_t cluster_id);
  void pin(const std::set<std::int64_t>& cluster_ids);

  bool on_device(std::int64_t cluster_id) const;
  std::int64_t device_entries() const { return device_entries_; }

  // Evicts until occupancy fits capacity. Called internally by fetch and
  // note_device_append; exposed for cadence-driven trims.
  double enforce_capacity();

  TransferLedger& ledger() { return ledger_; }
  const TransferLedger& ledger() const { return ledger_; }
  const CostModel& cost() const { return cost_; }

  // Occupancy recount from the index; throws InvariantViolation if the
  // incremental count drifted.
  void audit() const;

 private:
  HierIndex& index_;
  CostModel cost_;
  TransferLedger ledger_;
  std::int64_t device_entries_ = 0;
  std::int64_t tick_ = 0;
  std::map<std::int64_t, std::int64_t> last_use_;  // cluster -> tick
  std::set<std::int64_t> pinned_;

  std::int64_t device_side_entries(const ClusterRecord& rec) const;
  double evict_one();
};

}  // namespace kvclust
