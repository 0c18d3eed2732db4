#include "doctest.h"

#include <cmath>
#include <vector>

#include "kvclust/maintainer.hpp"
#include "test_util.hpp"

using namespace kvclust;
using testutil::random_unit;

namespace {

KVEntry entry_with_key(Embedding key, std::int64_t frame, std::int32_t token) {
  KVEntry e;
  e.value = key;
  e.key = std::move(key);
  e.frame_id = frame;
  e.layer_id = 0;
  e.token_id = token;
  return e;
}

// The literal one-step recursion, written out independently of the library:
// each mean component first, then the squared distance to the new mean. Must
// agree bit for bit with updated_stats.
void oracle_step(DVec& r, double& var, std::int64_t n, const Embedding& k) {
  const double dn = static_cast<double>(n);
  DVec r_new(r.size());
  for (std::size_t i = 0; i < r.size(); ++i)
    r_new[i] = (dn * r[i] + static_cast<double>(k[i])) / (dn + 1.0);
  double d2 = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double diff = static_cast<double>(k[i]) - r_new[i];
    d2 += diff * diff;
  }
  var = (dn * var + d2) / (dn + 1.0);
  r = std::move(r_new);
}

struct Rig {
  HierIndex idx{4, 1};
  CostModel cm;
  TieredStore store;
  Maintainer maint;

  explicit Rig(const MaintainerConfig& mc) : store(idx, cm), maint(idx, store, mc) {}
};

MaintainerConfig flat_threshold(double tau_value, bool defer = true) {
  MaintainerConfig mc;
  mc.threshold.tau_min = tau_value;
  mc.threshold.tau_max = tau_value;
  mc.threshold.n0 = 32.0;
  mc.defer_host_splits = defer;
  mc.seed = 77;
  return mc;
}

}  // namespace

TEST_SUITE("maintainer") {

TEST_CASE("threshold endpoints and shape") {
  ThresholdConfig cfg;  // 0.05 / 0.3 / 32
  CHECK(tau(0, cfg) == cfg.tau_max);

  // strict decay to the floor over the whole operating range; with the
  // default horizon the double-precision tail is still several ulps per step
  for (std::int64_t n = 0; n < 1000; ++n) {
    CHECK(tau(n + 1, cfg) < tau(n, cfg));
    CHECK(tau(n, cfg) <= cfg.tau_max);
    CHECK(tau(n, cfg) >= cfg.tau_min);
  }

  ThresholdConfig named{0.1, 0.5, 16.0};
  CHECK(tau(0, named) == named.tau_max);
  CHECK(tau(16, named) == doctest::Approx(0.1 + 0.4 * std::exp(-1.0)).epsilon(1e-12));
  CHECK(tau(16, named) == doctest::Approx(0.24715).epsilon(1e-4));
  CHECK(tau(1600, named) == doctest::Approx(named.tau_min).epsilon(1e-6));
}

TEST_CASE("one-step statistics update matches the hand example") {
  DVec r{1.0, 0.0};
  StatUpdate up = updated_stats(r, 0.0, 1, Embedding{0.0f, 1.0f});
  CHECK(up.rep[0] == doctest::Approx(0.5));
  CHECK(up.rep[1] == doctest::Approx(0.5));
  CHECK(up.variance == doctest::Approx(0.25));

  // inserting the representative itself cannot raise the variance
  DVec tight{0.6, 0.8};
  StatUpdate same = updated_stats(tight, 0.01, 9, Embedding{0.6f, 0.8f});
  CHECK(same.variance <= 0.01 + 1e-12);
}

TEST_CASE("running mean stays exact over long insert runs") {
  Rng rng(61);
  std::vector<Embedding> keys{random_unit(rng, 16)};
  DVec r(keys[0].begin(), keys[0].end());
  double var = 0.0;
  for (int i = 1; i < 1000; ++i) {
    keys.push_back(random_unit(rng, 16));
    StatUpdate up = updated_stats(r, var, i, keys.back());
    r = std::move(up.rep);
    var = up.variance;
  }
  DVec batch = dmean(keys);
  double err = 0.0, scale = 0.0;
  for (std::size_t c = 0; c < batch.size(); ++c) {
    err += (r[c] - batch[c]) * (r[c] - batch[c]);
    scale += batch[c] * batch[c];
  }
  CHECK(std::sqrt(err) <= 1e-5 * std::max(1.0, std::sqrt(scale)));
}

TEST_CASE("variance recursion replays bit for bit") {
  Rng rng(62);
  Embedding first = random_unit(rng, 8);
  DVec lib_r(first.begin(), first.end());
  double lib_var = 0.0;
  DVec orc_r = lib_r;
  double orc_var = 0.0;

  for (int i = 1; i < 500; ++i) {
    Embedding k = random_unit(rng, 8);
    StatUpdate up = updated_stats(lib_r, lib_var, i, k);
    lib_r = std::move(up.rep);
    lib_var = up.variance;
    oracle_step(orc_r, orc_var, i, k);
    REQUIRE(lib_var == orc_var);  // exact, not approximate
    REQUIRE(lib_r == orc_r);
  }
  CHECK(lib_var >= 0.0);
}

TEST_CASE("frame placement joins near partitions and opens far ones") {
  MaintainerConfig mc = flat_threshold(0.5);
  mc.visual_floor = 0.75;
  Rig rig(mc);

  Embedding v0{1.0f, 0.0f, 0.0f, 0.0f};
  std::int64_t p0 = rig.maint.place_frame(0, v0);
  CHECK(rig.maint.stats().partitions_opened == 1);

  Embedding near{0.95f, 0.1f, 0.0f, 0.0f};
  CHECK(rig.maint.place_frame(1, near) == p0);
  CHECK(rig.idx.partition(p0).frame_ids.size() == 2);
  CHECK(rig.maint.stats().partitions_opened == 1);

  Embedding far{0.0f, 0.0f, 1.0f, 0.0f};
  std::int64_t p1 = rig.maint.place_frame(2, far);
  CHECK(p1 != p0);
  CHECK(rig.maint.stats().partitions_opened == 2);
}

TEST_CASE("first insert bootstraps a singleton cluster") {
  Rig rig(flat_threshold(0.1));
  std::int64_t pid = rig.maint.place_frame(0, Embedding{1, 0, 0, 0});
  std::int64_t cid = rig.maint.on_insert(pid, entry_with_key(Embedding{0, 1, 0, 0}, 0, 0));
  const ClusterRecord& rec = rig.idx.cluster(cid);
  CHECK(rec.n() == 1);
  CHECK(rec.variance == 0.0);
  CHECK(rec.stat_count == 1);
  CHECK(rec.residence == Residence::Device);
  CHECK(rig.store.device_entries() == 1);
  rig.idx.check_invariants();
  rig.store.audit();
}

TEST_CASE("tight keys absorb and keep statistics honest") {
  Rig rig(flat_threshold(0.1));
  std::int64_t pid = rig.maint.place_frame(0, Embedding{1, 0, 0, 0});
  Embedding k{0.0f, 0.6f, 0.8f, 0.0f};
  std::int64_t cid = rig.maint.on_insert(pid, entry_with_key(k, 0, 0));
  for (int t = 1; t < 6; ++t) CHECK(rig.maint.on_insert(pid, entry_with_key(k, 0, t)) == cid);

  const MaintainerStats& st = rig.maint.stats();
  CHECK(st.inserts == 6);
  CHECK(st.absorbed == 5);
  CHECK(st.immediate_splits == 0);
  CHECK(st.deferred_marks == 0);

  const ClusterRecord& rec = rig.idx.cluster(cid);
  CHECK(rec.n() == 6);
  CHECK(rec.stat_count == 6);
  CHECK(rec.variance == doctest::Approx(0.0).epsilon(1e-12));
  DVec exact = compute_representative(rec.members);
  for (std::size_t c = 0; c < exact.size(); ++c)
    CHECK(rec.rep[c] == doctest::Approx(exact[c]).epsilon(1e-9));
  rig.idx.check_invariants();
  rig.store.audit();
}

TEST_CASE("a device-resident cluster splits immediately when it loosens") {
  Rig rig(flat_threshold(0.01));
  std::int64_t pid = rig.maint.place_frame(0, Embedding{1, 0, 0, 0});
  rig.maint.on_insert(pid, entry_with_key(Embedding{1, 0, 0, 0}, 0, 0));
  rig.maint.on_insert(pid, entry_with_key(Embedding{1, 0, 0, 0}, 0, 1));
  std::int64_t cid = rig.maint.on_insert(pid, entry_with_key(Embedding{0, 1, 0, 0}, 0, 2));

  const MaintainerStats& st = rig.maint.stats();
  CHECK(st.immediate_splits == 1);
  CHECK(st.split_ops_total >= 1);
  CHECK(st.deferred_marks == 0);
  CHECK(st.maintenance_fetches == 0);

  // the divergent entry lives in the cluster that was returned
  bool found = false;
  for (const KVEntry& e : rig.idx.cluster(cid).members)
    if (e.token_id == 2) found = true;
  CHECK(found);

  // split children carry exact statistics over their members
  std::int64_t total = 0;
  for (const auto& [id, rec] : rig.idx.clusters()) {
    total += rec.n();
    DVec r = compute_representative(rec.members);
    CHECK(rec.variance == doctest::Approx(compute_variance(rec.members, r)).epsilon(1e-9));
    CHECK(rec.stat_count == rec.n());
    CHECK(!rec.lazy_split);
  }
  CHECK(total == 3);
  CHECK(rig.idx.clusters().size() == 2);
  rig.idx.check_invariants();
  rig.store.audit();
}

TEST_CASE("a host-resident cluster defers its split off the critical path") {
  Rig rig(flat_threshold(0.01));
  std::int64_t pid = rig.maint.place_frame(0, Embedding{1, 0, 0, 0});
  std::int64_t cid = rig.maint.on_insert(pid, entry_with_key(Embedding{1, 0, 0, 0}, 0, 0));
  rig.maint.on_insert(pid, entry_with_key(Embedding{1, 0, 0, 0}, 0, 1));
  rig.store.offload(cid);
  CHECK(rig.store.device_entries() == 0);

  std::size_t reps_before = rig.idx.rep_set(0).size();
  std::int64_t got = rig.maint.on_insert(pid, entry_with_key(Embedding{0, 1, 0, 0}, 1, 0));
  CHECK(got == cid);

  const ClusterRecord& rec = rig.idx.cluster(cid);
  CHECK(rec.lazy_split);
  CHECK(rec.residence == Residence::Host);
  CHECK(rec.buffer.size() == 1);
  CHECK(rec.n() == 2);
  CHECK(rec.stat_count == 3);  // statistics absorbed the buffered entry
  CHECK(rig.idx.buffer_registered(cid));
  CHECK(rig.idx.rep_set(0).size() == reps_before + 1);
  CHECK(rig.store.device_entries() == 1);  // the buffered entry parks on device

  const MaintainerStats& st = rig.maint.stats();
  CHECK(st.deferred_marks == 1);
  CHECK(st.host_over_threshold == 1);
  CHECK(st.immediate_splits == 0);
  CHECK(st.maintenance_fetches == 0);
  CHECK(rig.store.ledger().cause(TransferCause::Maintenance).n_ops == 0);

  // a later key nearest to the buffered content joins the same buffer
  rig.maint.on_insert(pid, entry_with_key(normalize(Embedding{0.0f, 0.99f, 0.1f, 0.0f}), 1, 1));
  CHECK(rec.buffer.size() == 2);
  CHECK(rec.stat_count == 4);
  CHECK(rig.maint.stats().deferred_marks == 2);
  CHECK(rig.store.ledger().cause(TransferCause::Maintenance).n_ops == 0);
  rig.idx.check_invariants();
  rig.store.audit();

  // settling: fetch (as retrieval would) and materialize
  rig.store.fetch(cid, TransferCause::Retrieval);
  auto children = rig.maint.materialize(cid);
  CHECK(children.size() >= 2);
  CHECK(rig.maint.stats().settled_splits == 1);
  CHECK(!rig.idx.has_cluster(cid));
  std::int64_t total = 0;
  for (std::int64_t id : children) {
    const ClusterRecord& child = rig.idx.cluster(id);
    total += child.n();
    CHECK(!child.lazy_split);
    CHECK(child.buffer.empty());
    CHECK(child.residence == Residence::Device);
  }
  CHECK(total == 4);  // two members and two buffered entries, conserved
  CHECK(rig.idx.rep_set(0).size() == children.size());
  rig.idx.check_invariants();
  rig.store.audit();

  // the whole deferred lifecycle never charged a maintenance transfer
  CHECK(rig.store.ledger().cause(TransferCause::Maintenance).n_ops == 0);
}

TEST_CASE("the eager policy pays the link to split host clusters") {
  Rig rig(flat_threshold(0.01, false));
  std::int64_t pid = rig.maint.place_frame(0, Embedding{1, 0, 0, 0});
  std::int64_t cid = rig.maint.on_insert(pid, entry_with_key(Embedding{1, 0, 0, 0}, 0, 0));
  rig.maint.on_insert(pid, entry_with_key(Embedding{1, 0, 0, 0}, 0, 1));
  rig.store.offload(cid);

  rig.maint.on_insert(pid, entry_with_key(Embedding{0, 1, 0, 0}, 1, 0));
  const MaintainerStats& st = rig.maint.stats();
  CHECK(st.maintenance_fetches == 1);
  CHECK(st.immediate_splits == 1);
  CHECK(st.deferred_marks == 0);
  CHECK(st.host_over_threshold == 1);
  CHECK(rig.store.ledger().cause(TransferCause::Maintenance).n_ops == 1);
  CHECK(rig.store.ledger().cause(TransferCause::Maintenance).bytes > 0);

  for (const auto& [id, rec] : rig.idx.clusters()) {
    CHECK(!rec.lazy_split);
    CHECK(rec.residence == Residence::Device);
  }
  rig.idx.check_invariants();
  rig.store.audit();
}

TEST_CASE("materialize is a no-op without a pending split") {
  Rig rig(flat_threshold(0.5));
  std::int64_t pid = rig.maint.place_frame(0, Embedding{1, 0, 0, 0});
  std::int64_t cid = rig.maint.on_insert(pid, entry_with_key(Embedding{1, 0, 0, 0}, 0, 0));
  auto out = rig.maint.materialize(cid);
  REQUIRE(out.size() == 1);
  CHECK(out[0] == cid);
  CHECK(rig.maint.stats().settled_splits == 0);
}

TEST_CASE("settling a pending split demands the payload on device") {
  Rig rig(flat_threshold(0.01));
  std::int64_t pid = rig.maint.place_frame(0, Embedding{1, 0, 0, 0});
  std::int64_t cid = rig.maint.on_insert(pid, entry_with_key(Embedding{1, 0, 0, 0}, 0, 0));
  rig.maint.on_insert(pid, entry_with_key(Embedding{1, 0, 0, 0}, 0, 1));
  rig.store.offload(cid);
  rig.maint.on_insert(pid, entry_with_key(Embedding{0, 1, 0, 0}, 1, 0));
  CHECK(rig.idx.cluster(cid).lazy_split);
  CHECK_THROWS_AS(rig.maint.materialize(cid), InvariantViolation);
}

TEST_CASE("deferral counters dominate settlements") {
  MaintainerConfig mc = flat_threshold(0.02);
  Rig rig(mc);
  Rng rng(63);
  std::int64_t pid = rig.maint.place_frame(0, Embedding{1, 0, 0, 0});
  std::vector<std::int64_t> seen;
  for (int i = 0; i < 200; ++i) {
    Embedding k = random_unit(rng, 4);
    std::int64_t cid = rig.maint.on_insert(pid, entry_with_key(k, i / 4, i % 4));
    seen.push_back(cid);
    if (i % 17 == 8) {
      // drive some content host-side so the deferred branch gets exercised
      for (const auto& [id, rec] : rig.idx.clusters())
        if (rec.buffer.empty()) {
          rig.store.offload(id);
          break;
        }
    }
    if (i % 29 == 21) {
      for (const auto& [id, rec] : rig.idx.clusters())
        if (rec.lazy_split) {
          rig.store.fetch(id, TransferCause::Retrieval);
          rig.maint.materialize(id);
          break;
        }
    }
  }
  const MaintainerStats& st = rig.maint.stats();
  CHECK(st.inserts == 200);
  CHECK(st.deferred_marks >= st.settled_splits);
  CHECK(st.absorbed + st.deferred_marks + st.immediate_splits +
            (rig.idx.clusters().size() > 0 ? 0 : 0) <=
        st.inserts);
  CHECK(rig.store.ledger().cause(TransferCause::Maintenance).n_ops == 0);  // deferred mode
  rig.idx.check_invariants();
  rig.store.audit();

  // every entry inserted is still held exactly once
  CHECK(rig.idx.entries_at_layer(0) == 200);
}

}
