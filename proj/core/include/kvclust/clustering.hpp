#pragma once

// Batch spherical (cosine) k-means used for initial index construction, and
// the two-way split routine used by online refinement.

#include <cstdint>
#include <vector>

#include "kvclust/vecmath.hpp"

namespace kvclust {

struct KMeansConfig {
  int k = 1;
  int max_iters = 50;
  double tol = 1e-6;  // stop once the objective improves by less than this
  std::uint64_t seed = 0;
};

struct KMeansResult {
  std::vector<int> assignments;     // per-point cluster id, dense in [0, k)
  std::vector<DVec> centroids;      // arithmetic means of the normalized points
  double objective = 0.0;           // mean cosine of each point to its centroid
  int iterations_run = 0;
  bool degenerate = false;          // split_two forced-split marker
  std::vector<double> objective_trace;  // objective after each iteration
};

// Lloyd iteration on the unit sphere: points are normalized once, assignment
// maximizes cosine to the centroid (ties to the lowest cluster id), centroids
// are recomputed as arithmetic means, and empty clusters are reseeded with the
// point least similar to its current centroid. Initialization is
// k-means++-style seeding with 1 - cosine weights, fully determined by
// cfg.seed. k is clamped to the point count.
KMeansResult spherical_kmeans(const std::vector<Embedding>& points, const KMeansConfig& cfg);

// k=2 refinement split. All-identical inputs cannot be separated by
// similarity; they produce a deterministic (n-1, 1) partition with the last
// point as the singleton, flagged degenerate.
KMeansResult split_two(const std::vector<Embedding>& points, std::uint64_t seed);

}  // namespace kvclust
