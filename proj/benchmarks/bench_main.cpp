// Microbenchmarks for the hot paths: vector primitives, batch clustering,
// and the streaming ingest/retrieve loop.

#include <benchmark/benchmark.h>

#include "kvclust/clustering.hpp"
#include "kvclust/engine.hpp"
#include "kvclust/rng.hpp"
#include "kvclust/vecmath.hpp"
#include "kvclust/workload.hpp"

namespace {

using namespace kvclust;

std::vector<Embedding> random_points(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Embedding> out(n);
  for (auto& v : out) {
    v.resize(d);
    for (auto& x : v) x = static_cast<float>(rng.gaussian());
  }
  return out;
}

void BM_cosine(benchmark::State& state) {
  auto pts = random_points(2, static_cast<std::size_t>(state.range(0)), 1);
  for (auto _ : state) benchmark::DoNotOptimize(cosine_sim(pts[0], pts[1]));
}
BENCHMARK(BM_cosine)->Arg(32)->Arg(128)->Arg(1024);

void BM_mean(benchmark::State& state) {
  auto pts = random_points(static_cast<std::size_t>(state.range(0)), 64, 2);
  for (auto _ : state) benchmark::DoNotOptimize(dmean(pts));
}
BENCHMARK(BM_mean)->Arg(32)->Arg(256);

void BM_spherical_kmeans(benchmark::State& state) {
  auto pts = random_points(static_cast<std::size_t>(state.range(0)), 32, 3);
  KMeansConfig cfg;
  cfg.k = static_cast<int>(state.range(0) / 32);
  cfg.seed = 4;
  for (auto _ : state) benchmark::DoNotOptimize(spherical_kmeans(pts, cfg));
}
BENCHMARK(BM_spherical_kmeans)->Arg(128)->Arg(512);

void BM_split_two(benchmark::State& state) {
  auto pts = random_points(static_cast<std::size_t>(state.range(0)), 32, 5);
  for (auto _ : state) benchmark::DoNotOptimize(split_two(pts, 6));
}
BENCHMARK(BM_split_two)->Arg(32)->Arg(128);

void BM_stream_run(benchmark::State& state) {
  StreamConfig sc = default_stream_config();
  sc.n_scenes = 3;
  sc.frames_per_scene = 16;
  sc.n_queries = 8;
  auto events = gen_stream(sc);
  EngineConfig ec;
  ec.build_batch_frames = 16;
  for (auto _ : state) benchmark::DoNotOptimize(run_stream(ec, sc.d, sc.L, events));
}
BENCHMARK(BM_stream_run)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
