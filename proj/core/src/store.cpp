#include "kvclust/store.hpp"

#include <algorithm>
#include <cmath>

#include "kvclust/error.hpp"

namespace kvclust {

const char* to_string(TransferCause cause) {
  switch (cause) {
    case TransferCause::Retrieval: return "retrieval";
    case TransferCause::Maintenance: return "maintenance";
    case TransferCause::Prefetch: return "prefetch";
    case TransferCause::Completion: return "completion";
    case TransferCause::Offload: return "offload";
  }
  return "unknown";
}

void TransferLedger::record(const TransferOp& op) {
  log_.push_back(op);
  CauseTotals& t = totals_[to_string(op.cause)];
  t.n_ops += op.n_ops;
  t.bytes += op.bytes;
  t.cost_us += op.cost_us;
}

CauseTotals TransferLedger::totals() const {
  CauseTotals sum;
  for (const auto& [name, t] : totals_) {
    sum.n_ops += t.n_ops;
    sum.bytes += t.bytes;
    sum.cost_us += t.cost_us;
  }
  return sum;
}

CauseTotals TransferLedger::cause(TransferCause c) const {
  auto it = totals_.find(to_string(c));
  return it == totals_.end() ? CauseTotals{} : it->second;
}

void TransferLedger::audit() const {
  std::map<std::string, CauseTotals> replay;
  for (const TransferOp& op : log_) {
    CauseTotals& t = replay[to_string(op.cause)];
    t.n_ops += op.n_ops;
    t.bytes += op.bytes;
    t.cost_us += op.cost_us;
  }
  if (replay.size() != totals_.size())
    throw InvariantViolation("ledger causes out of step with op log");
  for (const auto& [name, t] : totals_) {
    auto it = replay.find(name);
    if (it == replay.end() || it->second.n_ops != t.n_ops || it->second.bytes != t.bytes ||
        it->second.cost_us != t.cost_us)
      throw InvariantViolation("ledger totals out of step with op log");
  }
}

void TransferLedger::clear() {
  log_.clear();
  totals_.clear();
}

TieredStore::TieredStore(HierIndex& index, const CostModel& cost)
    : index_(index), cost_(cost) {
  if (cost_.alpha_us < 0.0 || cost_.beta_us_per_byte < 0.0)
    throw ConfigError("transfer costs must be non-negative");
  if (cost_.device_capacity_entries <= 0)
    throw ConfigError("device capacity must be positive");
  for (const auto& [id, rec] : index_.clusters()) adopt(id);
}

std::int64_t TieredStore::device_side_entries(const ClusterRecord& rec) const {
  std::int64_t buffered = static_cast<std::int64_t>(rec.buffer.size());
  if (rec.residence == Residence::Device) return rec.n() + buffered;
  return rec.device_tail + buffered;  // buffers live on the device until split
}

void TieredStore::adopt(std::int64_t cluster_id) {
  const ClusterRecord& rec = index_.cluster(cluster_id);
  device_entries_ += device_side_entries(rec);
  last_use_.emplace(cluster_id, tick_++);
}

void TieredStore::forget(std::int64_t cluster_id) {
  const ClusterRecord& rec = index_.cluster(cluster_id);
  device_entries_ -= device_side_entries(rec);
  last_use_.erase(cluster_id);
  pinned_.erase(cluster_id);
}

double TieredStore::fetch(std::int64_t cluster_id, TransferCause cause) {
  ClusterRecord& rec = index_.cluster(cluster_id);
  touch(cluster_id);
  if (rec.residence == Residence::Device) return 0.0;
  std::int64_t moved = rec.n() - rec.device_tail;
  if (moved < 0) throw InvariantViolation("device tail exceeds member count");
  double paid = 0.0;
  if (moved > 0) {
    std::int64_t bytes = moved * cost_.entry_bytes(index_.dim());
    TransferOp op{cause, true, cluster_id, 1, bytes, cost_.transfer_cost(1, bytes)};
    ledger_.record(op);
    paid = op.cost_us;
    device_entries_ += moved;
  }
  rec.residence = Residence::Device;
  rec.device_tail = 0;
  paid += enforce_capacity();
  return paid;
}

double TieredStore::offload(std::int64_t cluster_id) {
  ClusterRecord& rec = index_.cluster(cluster_id);
  std::int64_t moved = rec.residence == Residence::Device ? rec.n() : rec.device_tail;
  double paid = 0.0;
  if (moved > 0) {
    std::int64_t bytes = moved * cost_.entry_bytes(index_.dim());
    TransferOp op{TransferCause::Offload, false, cluster_id, 1, bytes,
                  cost_.transfer_cost(1, bytes)};
    ledger_.record(op);
    paid = op.cost_us;
    device_entries_ -= moved;
  }
  rec.residence = Residence::Host;
  rec.device_tail = 0;
  return paid;
}

void TieredStore::note_device_append(std::int64_t cluster_id) {
  ClusterRecord& rec = index_.cluster(cluster_id);
  if (rec.residence == Residence::Host) rec.device_tail += 1;
  device_entries_ += 1;
  touch(cluster_id);
}

void TieredStore::note_device_buffer_append(std::int64_t cluster_id) {
  device_entries_ += 1;
  touch(cluster_id);
}

void TieredStore::touch(std::int64_t cluster_id) {
  last_use_[cluster_id] = tick_++;
}

void TieredStore::pin(const std::set<std::int64_t>& cluster_ids) {
  pinned_ = cluster_ids;
}

bool TieredStore::on_device(std::int64_t cluster_id) const {
  return index_.cluster(cluster_id).residence == Residence::Device;
}

double TieredStore::enforce_capacity() {
  double paid = 0.0;
  while (device_entries_ > cost_.device_capacity_entries) {
    double cost = evict_one();
    if (cost < 0.0) break;  // nothing evictable; run over capacity rather than deadlock
    paid += cost;
  }
  return paid;
}

double TieredStore::evict_one() {
  std::int64_t victim = -1;
  std::int64_t victim_tick = 0;
  for (const auto& [id, tick] : last_use_) {
    if (pinned_.count(id)) continue;
    const ClusterRecord& rec = index_.cluster(id);
    if (device_side_entries(rec) == 0) continue;
    if (!rec.buffer.empty()) continue;  // pending splits stay device-side
    if (victim < 0 || tick < victim_tick) {
      victim = id;
      victim_tick = tick;
    }
  }
  if (victim < 0) return -1.0;
  return offload(victim);
}

void TieredStore::audit() const {
  std::int64_t recount = 0;
  for (const auto& [id, rec] : index_.clusters()) recount += device_side_entries(rec);
  if (recount != device_entries_)
    throw InvariantViolation("device occupancy out of step with residency");
  ledger_.audit();
}

}  // namespace kvclust
