#include "doctest.h"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "kvclust/error.hpp"
#include "kvclust/harness.hpp"
#include "kvclust/report.hpp"

using namespace kvclust;
using json = nlohmann::json;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/kvclust_harness_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

StreamConfig tiny_stream() {
  StreamConfig cfg;
  cfg.n_scenes = 2;
  cfg.frames_per_scene = 6;
  cfg.tokens_per_frame = 2;
  cfg.d = 8;
  cfg.L = 2;
  cfg.n_queries = 4;
  cfg.gt_top_m = 3;
  cfg.seed = 31;
  return cfg;
}

EngineConfig tiny_engine() {
  EngineConfig cfg;
  cfg.retrieval.k_v = 2;
  cfg.retrieval.k_s = 2;
  cfg.retrieval.window_frames = 2;
  cfg.build.target_visual_cluster_size = 4;
  cfg.build.target_semantic_cluster_size = 6;
  cfg.build_batch_frames = 6;
  cfg.seed = 5;
  return cfg;
}

int gen_tiny(const std::string& path) {
  GenOptions opt;
  opt.stream = tiny_stream();
  opt.output = path;
  std::ostringstream out, err;
  return cmd_gen(opt, out, err);
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("gen writes a counted trace, twice over identically") {
  TempFile a("gen_a.jsonl"), b("gen_b.jsonl");

  GenOptions opt;
  opt.stream = tiny_stream();
  opt.output = a.path;
  std::ostringstream out, err;
  REQUIRE(cmd_gen(opt, out, err) == 0);
  CHECK(out.str().find("12 frames, 4 queries") != std::string::npos);
  CHECK(err.str().empty());

  opt.output = b.path;
  std::ostringstream out2, err2;
  REQUIRE(cmd_gen(opt, out2, err2) == 0);
  CHECK(slurp(a.path) == slurp(b.path));
}

TEST_CASE("gen rejects bad configuration with exit code 2") {
  std::ostringstream out, err;

  GenOptions no_output;
  no_output.stream = tiny_stream();
  CHECK(cmd_gen(no_output, out, err) == 2);

  GenOptions zero_scenes;
  zero_scenes.stream = tiny_stream();
  zero_scenes.stream.n_scenes = 0;
  zero_scenes.output = "/tmp/kvclust_harness_never.jsonl";
  CHECK(cmd_gen(zero_scenes, out, err) == 2);

  GenOptions bad_preset;
  bad_preset.preset = "warp";
  bad_preset.output = "/tmp/kvclust_harness_never.jsonl";
  CHECK(cmd_gen(bad_preset, out, err) == 2);
  CHECK(err.str().find("config error") != std::string::npos);
}

TEST_CASE("the default preset overrides the stream knobs") {
  TempFile file("preset.jsonl");
  GenOptions opt;
  opt.stream = tiny_stream();  // ignored once the preset lands
  opt.preset = "default";
  opt.output = file.path;
  std::ostringstream out, err;
  REQUIRE(cmd_gen(opt, out, err) == 0);

  StreamConfig def = default_stream_config();
  std::ostringstream want;
  want << def.n_scenes * def.frames_per_scene << " frames, " << def.n_queries << " queries";
  CHECK(out.str().find(want.str()) != std::string::npos);
}

TEST_CASE("run replays a trace into a coherent report") {
  TempFile trace("run_trace.jsonl"), report_file("run_report.json");
  REQUIRE(gen_tiny(trace.path) == 0);

  RunOptions opt;
  opt.trace_path = trace.path;
  opt.engine = tiny_engine();
  opt.output = report_file.path;
  std::ostringstream out, err;
  REQUIRE(cmd_run(opt, out, err) == 0);

  json report = json::parse(slurp(report_file.path));
  CHECK(report["format"] == "kvclust.report.v1");
  CHECK(report["trace"]["frames"].get<std::int64_t>() == 12);
  CHECK(report["trace"]["queries"].get<std::int64_t>() == 4);
  CHECK(report["rows"].size() == 4);
  CHECK(report["aggregates"] == recompute_aggregates(report));
  CHECK(report["wall_clock_seconds"].get<double>() >= 0.0);

  // stdout delivery works the same way
  RunOptions to_stdout = opt;
  to_stdout.output.clear();
  std::ostringstream out2, err2;
  REQUIRE(cmd_run(to_stdout, out2, err2) == 0);
  json piped = json::parse(out2.str());
  CHECK(piped["trace"]["frames"] == report["trace"]["frames"]);
}

TEST_CASE("run surfaces config and parse failures by exit code") {
  std::ostringstream out, err;

  RunOptions no_trace;
  CHECK(cmd_run(no_trace, out, err) == 2);

  RunOptions missing;
  missing.trace_path = "/tmp/kvclust_harness_missing.jsonl";
  CHECK(cmd_run(missing, out, err) == 2);

  TempFile trace("bad_engine.jsonl");
  REQUIRE(gen_tiny(trace.path) == 0);
  RunOptions bad_engine;
  bad_engine.trace_path = trace.path;
  bad_engine.engine = tiny_engine();
  bad_engine.engine.retrieval.k_v = 0;
  CHECK(cmd_run(bad_engine, out, err) == 2);

  TempFile corrupt("corrupt.jsonl");
  {
    std::ofstream f(corrupt.path);
    f << "{\"format\":\"kvclust.trace.v1\",\"d\":8,\"L\":2,\"tokens_per_frame\":2}\n"
      << "not json\n";
  }
  RunOptions parse_fail;
  parse_fail.trace_path = corrupt.path;
  parse_fail.engine = tiny_engine();
  CHECK(cmd_run(parse_fail, out, err) == 1);  // parse faults are not config errors
}

TEST_CASE("config objects land on the right fields and reject strangers") {
  StreamConfig scfg;
  apply_stream_config(json{{"n_scenes", 9}, {"drift_rate", 0.5}, {"queries_at_end", true}}, scfg);
  CHECK(scfg.n_scenes == 9);
  CHECK(scfg.drift_rate == 0.5);
  CHECK(scfg.queries_at_end);
  CHECK(scfg.frames_per_scene == StreamConfig{}.frames_per_scene);  // untouched default
  CHECK_THROWS_AS(apply_stream_config(json{{"scenes", 3}}, scfg), ConfigError);
  CHECK_THROWS_AS(apply_stream_config(json::array(), scfg), ConfigError);

  EngineConfig ecfg;
  apply_engine_config(json{{"mode", "token_baseline"}, {"token_budget", 99}, {"tau_max", 0.4}},
                      ecfg);
  CHECK(ecfg.retrieval.mode == RetrievalMode::TokenBaseline);
  CHECK(ecfg.retrieval.token_budget == 99);
  CHECK(ecfg.maintainer.threshold.tau_max == 0.4);
  CHECK_THROWS_AS(apply_engine_config(json{{"mode", "hybrid"}}, ecfg), ConfigError);
  CHECK_THROWS_AS(apply_engine_config(json{{"kv", 2}}, ecfg), ConfigError);

  // later explicit settings still win over the config file layer
  apply_engine_config(json{{"k_v", 7}}, ecfg);
  ecfg.retrieval.k_v = 3;
  CHECK(ecfg.retrieval.k_v == 3);
}

TEST_CASE("mode labels parse into engine settings") {
  auto parsed = [](const std::string& label) {
    EngineConfig cfg;
    apply_mode_label(label, cfg);
    return cfg;
  };

  EngineConfig c = parsed("cluster");
  CHECK(c.retrieval.mode == RetrievalMode::Cluster);
  CHECK(c.maintainer.defer_host_splits);
  CHECK(!c.retrieval.prefetch_enabled);

  CHECK(!parsed("cluster-eager").maintainer.defer_host_splits);
  CHECK(parsed("cluster-deferred").maintainer.defer_host_splits);
  CHECK(parsed("cluster+prefetch").retrieval.prefetch_enabled);
  EngineConfig both = parsed("cluster-eager+prefetch");
  CHECK(!both.maintainer.defer_host_splits);
  CHECK(both.retrieval.prefetch_enabled);
  CHECK(parsed("token").retrieval.mode == RetrievalMode::TokenBaseline);
  CHECK(parsed("token_baseline").retrieval.mode == RetrievalMode::TokenBaseline);

  EngineConfig cfg;
  CHECK_THROWS_AS(apply_mode_label("flat", cfg), ConfigError);
  CHECK_THROWS_AS(apply_mode_label("cluster-bogus", cfg), ConfigError);
}

TEST_CASE("compare joins modes into table and csv files") {
  TempFile trace("cmp_trace.jsonl");
  REQUIRE(gen_tiny(trace.path) == 0);

  CompareOptions opt;
  opt.trace_path = trace.path;
  opt.modes = {"cluster", "cluster-eager", "token"};
  opt.engine = tiny_engine();
  opt.output_prefix = "/tmp/kvclust_harness_cmp";
  TempFile table_file("cmp.json"), csv_file("cmp.csv");  // cleanup stand-ins
  std::ostringstream out, err;
  REQUIRE(cmd_compare(opt, out, err) == 0);

  json table = json::parse(slurp("/tmp/kvclust_harness_cmp.json"));
  CHECK(table["format"] == "kvclust.compare.v1");
  REQUIRE(table["rows"].size() == 3);
  CHECK(table["rows"][0]["label"] == "cluster/deferred");
  CHECK(table["rows"][1]["label"] == "cluster/eager");
  CHECK(table["rows"][2]["label"] == "token_baseline");
  for (const json& row : table["rows"]) CHECK(row.contains("ttft_speedup_vs_token"));

  std::string csv = slurp("/tmp/kvclust_harness_cmp.csv");
  CHECK(csv.rfind("label,", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);

  std::remove("/tmp/kvclust_harness_cmp.json");
  std::remove("/tmp/kvclust_harness_cmp.csv");

  // stdout mode emits the table followed by the csv
  CompareOptions solo = opt;
  solo.modes = {"cluster"};
  solo.output_prefix.clear();
  std::ostringstream out2, err2;
  REQUIRE(cmd_compare(solo, out2, err2) == 0);
  CHECK(out2.str().find("kvclust.compare.v1") != std::string::npos);
  CHECK(out2.str().find("label,mean_ttft_us") != std::string::npos);

  CompareOptions no_modes = opt;
  no_modes.modes.clear();
  std::ostringstream out3, err3;
  CHECK(cmd_compare(no_modes, out3, err3) == 2);

  CompareOptions bad_mode = opt;
  bad_mode.modes = {"tokens"};
  std::ostringstream out4, err4;
  CHECK(cmd_compare(bad_mode, out4, err4) == 2);
}

TEST_CASE("report renders a saved run for reading") {
  TempFile trace("rep_trace.jsonl"), saved("rep_run.json");
  REQUIRE(gen_tiny(trace.path) == 0);
  RunOptions run;
  run.trace_path = trace.path;
  run.engine = tiny_engine();
  run.output = saved.path;
  std::ostringstream out0, err0;
  REQUIRE(cmd_run(run, out0, err0) == 0);

  ReportOptions opt;
  opt.report_path = saved.path;
  std::ostringstream out, err;
  REQUIRE(cmd_report(opt, out, err) == 0);
  CHECK(out.str().find("run: mode=cluster") != std::string::npos);
  CHECK(out.str().find("recall: mean=") != std::string::npos);

  ReportOptions missing;
  missing.report_path = "/tmp/kvclust_harness_nothing.json";
  std::ostringstream out2, err2;
  CHECK(cmd_report(missing, out2, err2) == 2);

  TempFile junk("junk.json");
  {
    std::ofstream f(junk.path);
    f << "not a report";
  }
  ReportOptions bad;
  bad.report_path = junk.path;
  std::ostringstream out3, err3;
  CHECK(cmd_report(bad, out3, err3) == 1);
}

}  // TEST_SUITE
