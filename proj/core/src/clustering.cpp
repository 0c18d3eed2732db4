#include "kvclust/clustering.hpp"

#include <algorithm>
#include <cstddef>
#include <limits>

#include "kvclust/error.hpp"
#include "kvclust/rng.hpp"

namespace kvclust {

namespace {

std::vector<DVec> normalize_all(const std::vector<Embedding>& points) {
  std::vector<DVec> out;
  out.reserve(points.size());
  for (const auto& p : points) {
    DVec v(p.begin(), p.end());
    out.push_back(dnormalize(v));
  }
  return out;
}

// k-means++-style seeding with 1 - cosine weights. Returns point indices.
std::vector<std::size_t> seed_centroids(const std::vector<DVec>& pts, int k, Rng& rng) {
  const std::size_t n = pts.size();
  std::vector<std::size_t> chosen;
  chosen.reserve(k);
  std::vector<bool> is_chosen(n, false);

  std::size_t first = rng.index(n);
  chosen.push_back(first);
  is_chosen[first] = true;

  // best_sim[i] = max cosine of point i to any chosen centroid
  std::vector<double> best_sim(n, -1.0);
  for (std::size_t i = 0; i < n; ++i) best_sim[i] = dot(pts[i], pts[first]);

  while (static_cast<int>(chosen.size()) < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (!is_chosen[i]) total += std::max(0.0, 1.0 - best_sim[i]);

    std::size_t pick = n;
    if (total > 1e-15) {
      const double x = rng.uniform() * total;
      double run = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (is_chosen[i]) continue;
        run += std::max(0.0, 1.0 - best_sim[i]);
        if (run >= x) {
          pick = i;
          break;
        }
      }
    }
    if (pick == n) {
      // all remaining points coincide with a centroid: lowest free index
      for (std::size_t i = 0; i < n; ++i)
        if (!is_chosen[i]) {
          pick = i;
          break;
        }
    }
    chosen.push_back(pick);
    is_chosen[pick] = true;
    for (std::size_t i = 0; i < n; ++i) best_sim[i] = std::max(best_sim[i], dot(pts[i], pts[pick]));
  }
  return chosen;
}

double cos_to_centroid(const DVec& p, const DVec& c) {
  const double nc = norm(c);
  if (nc < kDegenerateNorm) return -2.0;  // degenerate centroid, never preferred
  return std::clamp(dot(p, c) / nc, -1.0, 1.0);  // p is unit
}

}  // namespace

KMeansResult spherical_kmeans(const std::vector<Embedding>& points, const KMeansConfig& cfg) {
  if (points.empty()) throw EmptyInput("spherical_kmeans: no points");
  const std::size_t n = points.size();
  const int k = std::max(1, std::min<int>(cfg.k, static_cast<int>(n)));

  const std::vector<DVec> pts = normalize_all(points);
  const std::size_t d = pts.front().size();

  Rng rng(cfg.seed);
  std::vector<DVec> centroids;
  centroids.reserve(k);
  for (std::size_t idx : seed_centroids(pts, k, rng)) centroids.push_back(pts[idx]);

  KMeansResult res;
  res.assignments.assign(n, 0);
  double prev_obj = -std::numeric_limits<double>::infinity();

  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    // assignment: max cosine, ties to the lowest cluster id
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_sim = cos_to_centroid(pts[i], centroids[0]);
      for (int j = 1; j < k; ++j) {
        const double s = cos_to_centroid(pts[i], centroids[j]);
        if (s > best_sim) {
          best_sim = s;
          best = j;
        }
      }
      if (res.assignments[i] != best) changed = true;
      res.assignments[i] = best;
    }

    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) ++counts[res.assignments[i]];

    // reseed each empty cluster with the point least similar to its own
    // centroid, skipping points that are their cluster's only member
    for (int j = 0; j < k; ++j) {
      if (counts[j] != 0) continue;
      std::size_t far_idx = n;
      double far_sim = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[res.assignments[i]] <= 1) continue;
        const double s = cos_to_centroid(pts[i], centroids[res.assignments[i]]);
        if (s < far_sim) {
          far_sim = s;
          far_idx = i;
        }
      }
      if (far_idx == n) continue;  // nothing movable
      --counts[res.assignments[far_idx]];
      res.assignments[far_idx] = j;
      ++counts[j];
      changed = true;
    }

    // update: arithmetic means
    std::vector<DVec> sums(k, DVec(d, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      const DVec& p = pts[i];
      DVec& s = sums[res.assignments[i]];
      for (std::size_t c = 0; c < d; ++c) s[c] += p[c];
    }
    for (int j = 0; j < k; ++j) {
      if (counts[j] == 0) continue;
      const double inv = 1.0 / static_cast<double>(counts[j]);
      for (std::size_t c = 0; c < d; ++c) sums[j][c] *= inv;
      centroids[j] = std::move(sums[j]);
    }

    double obj = 0.0;
    for (std::size_t i = 0; i < n; ++i) obj += cos_to_centroid(pts[i], centroids[res.assignments[i]]);
    obj /= static_cast<double>(n);

    res.iterations_run = iter + 1;
    res.objective_trace.push_back(obj);
    res.objective = obj;

    if (iter > 0 && obj - prev_obj < cfg.tol) break;
    prev_obj = obj;
    if (!changed) break;  // assignment fixed point, objective cannot move
  }

  // compact cluster ids so every reported centroid has members
  std::vector<std::size_t> counts(k, 0);
  for (int a : res.assignments) ++counts[a];
  std::vector<int> remap(k, -1);
  std::vector<DVec> live;
  for (int j = 0; j < k; ++j) {
    if (counts[j] == 0) continue;
    remap[j] = static_cast<int>(live.size());
    live.push_back(std::move(centroids[j]));
  }
  for (auto& a : res.assignments) a = remap[a];
  res.centroids = std::move(live);
  return res;
}

KMeansResult split_two(const std::vector<Embedding>& points, std::uint64_t seed) {
  if (points.size() < 2) throw TooFewPoints("split_two: need at least 2 points");
  const std::size_t n = points.size();

  const std::vector<DVec> pts = normalize_all(points);
  bool identical = true;
  for (std::size_t i = 1; i < n && identical; ++i)
    if (dot(pts[i], pts[0]) < 1.0 - 1e-12) identical = false;

  if (identical) {
    KMeansResult res;
    res.degenerate = true;
    res.assignments.assign(n, 0);
    res.assignments[n - 1] = 1;
    std::vector<DVec> bulk(pts.begin(), pts.end() - 1);
    res.centroids.push_back(dmean(bulk));
    res.centroids.push_back(pts[n - 1]);
    res.objective = 1.0;
    res.objective_trace.push_back(1.0);
    return res;
  }

  KMeansConfig cfg;
  cfg.k = 2;
  cfg.max_iters = 50;
  cfg.tol = 1e-9;
  cfg.seed = seed;
  return spherical_kmeans(points, cfg);
}

}  // namespace kvclust
