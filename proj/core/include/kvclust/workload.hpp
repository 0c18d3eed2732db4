#pragma once

// Synthetic stream generation with controllable cross-modal structure, plus
// trace file round-tripping. Frames arrive scene by scene; queries target a
// completed scene's semantic centers and carry frame-level ground truth.

#include <cstdint>
#include <string>
#include <vector>

#include "kvclust/index.hpp"
#include "kvclust/retrieval.hpp"

namespace kvclust {

struct StreamConfig {
  int n_scenes = 6;
  int frames_per_scene = 32;
  int tokens_per_frame = 4;
  int d = 32;
  int L = 4;
  double visual_noise = 0.05;
  double semantic_noise = 0.1;
  double drift_rate = 0.01;      // per-frame drift of semantic centers
  double cross_layer_eps = 0.02; // query perturbation between adjacent layers
  int n_queries = 24;
  // Weight of the scene's visual center inside its semantic centers. Nonzero
  // is what lets the visual stage narrow semantic queries; 0 makes the two
  // modalities independent.
  double cross_modal_mix = 0.6;
  int gt_top_m = 16;
  // Scene centers repeat with this period (0 = every scene distinct), so
  // streams can revisit earlier content after it was offloaded.
  int scene_cycle = 0;
  bool queries_at_end = false;
  std::uint64_t seed = 42;

  void validate() const;
};

struct StreamEvent {
  enum class Kind { Frame, Query };
  Kind kind = Kind::Frame;
  FrameInput frame;
  QueryBundle query;
};

std::vector<StreamEvent> gen_stream(const StreamConfig& cfg);

void save_trace(const std::vector<StreamEvent>& events, const StreamConfig& cfg,
                const std::string& path);

struct LoadedTrace {
  int d = 0;
  int L = 0;
  int tokens_per_frame = 0;
  std::vector<StreamEvent> events;
};

LoadedTrace load_trace(const std::string& path);

// The stock workloads the comparisons run on: a clustered stream with mild
// drift, and a revisit-heavy stream with strong drift that pressures the
// split policy of offloaded clusters.
StreamConfig default_stream_config();
StreamConfig drift_stream_config();

}  // namespace kvclust
