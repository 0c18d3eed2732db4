#include "kvclust/workload.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "kvclust/error.hpp"
#include "kvclust/rng.hpp"

namespace kvclust {

using json = nlohmann::json;

void StreamConfig::validate() const {
  if (n_scenes < 1 || frames_per_scene < 1 || tokens_per_frame < 1 || d < 1 || L < 1)
    throw ConfigError("stream counts must be at least 1");
  if (visual_noise < 0.0 || semantic_noise < 0.0 || drift_rate < 0.0 || cross_layer_eps < 0.0)
    throw ConfigError("noise magnitudes must be non-negative");
  if (n_queries < 0) throw ConfigError("query count must be non-negative");
  if (cross_modal_mix < 0.0 || cross_modal_mix > 1.0)
    throw ConfigError("cross-modal mix must lie in [0, 1]");
  if (gt_top_m < 1) throw ConfigError("ground-truth size must be at least 1");
  if (scene_cycle < 0) throw ConfigError("scene cycle must be non-negative");
}

namespace {

DVec gauss_vec(Rng& rng, int d) {
  DVec v(static_cast<std::size_t>(d));
  for (double& x : v) x = rng.gaussian();
  return v;
}

DVec unit_vec(Rng& rng, int d) {
  DVec v = gauss_vec(rng, d);
  return dnormalize(v);
}

Embedding to_embedding(const DVec& v) {
  Embedding out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i]);
  return out;
}

DVec perturb(Rng& rng, const DVec& base, double scale) {
  DVec v = base;
  for (double& x : v) x += scale * rng.gaussian();
  return dnormalize(v);
}

}  // namespace

std::vector<StreamEvent> gen_stream(const StreamConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);

  int n_base = cfg.scene_cycle > 0 ? std::min(cfg.scene_cycle, cfg.n_scenes) : cfg.n_scenes;

  // Scene visual centers, kept apart by rejection sampling.
  std::vector<DVec> visual_centers;
  int retries = 0;
  const int max_retries = 20000;
  while (static_cast<int>(visual_centers.size()) < n_base) {
    DVec c = unit_vec(rng, cfg.d);
    bool ok = true;
    for (const DVec& other : visual_centers)
      if (cosine_sim(c, other) >= 0.5) {
        ok = false;
        break;
      }
    if (ok) {
      visual_centers.push_back(std::move(c));
    } else if (++retries > max_retries) {
      throw ConfigInfeasible("could not sample well-separated scene centers");
    }
  }

  // Per-(scene, layer) semantic base directions, tied to the scene's visual
  // center by the cross-modal mix.
  std::vector<std::vector<DVec>> semantic_base(static_cast<std::size_t>(n_base));
  for (int s = 0; s < n_base; ++s) {
    semantic_base[static_cast<std::size_t>(s)].resize(static_cast<std::size_t>(cfg.L));
    for (int l = 0; l < cfg.L; ++l) {
      DVec dir = unit_vec(rng, cfg.d);
      DVec mixed(static_cast<std::size_t>(cfg.d));
      for (int i = 0; i < cfg.d; ++i)
        mixed[static_cast<std::size_t>(i)] =
            cfg.cross_modal_mix * visual_centers[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)] +
            (1.0 - cfg.cross_modal_mix) * dir[static_cast<std::size_t>(i)];
      semantic_base[static_cast<std::size_t>(s)][static_cast<std::size_t>(l)] = dnormalize(mixed);
    }
  }

  int per_scene = cfg.n_queries / cfg.n_scenes;
  int extra = cfg.n_queries % cfg.n_scenes;

  std::vector<StreamEvent> events;
  std::vector<StreamEvent> held_queries;
  std::int64_t frame_id = 0;
  std::int64_t query_id = 0;

  // Last drifted layer-0 center and per-frame layer-0 keys of each scene,
  // kept for query targeting and ground-truth labeling.
  std::vector<std::vector<DVec>> final_centers(static_cast<std::size_t>(cfg.n_scenes));
  std::vector<std::vector<std::pair<std::int64_t, DVec>>> frame_key_means(
      static_cast<std::size_t>(cfg.n_scenes));

  for (int s = 0; s < cfg.n_scenes; ++s) {
    int base = cfg.scene_cycle > 0 ? s % n_base : s;
    const DVec& vcenter = visual_centers[static_cast<std::size_t>(base)];

    std::vector<DVec> centers = semantic_base[static_cast<std::size_t>(base)];
    for (int f = 0; f < cfg.frames_per_scene; ++f) {
      StreamEvent ev;
      ev.kind = StreamEvent::Kind::Frame;
      ev.frame.frame_id = frame_id;
      ev.frame.visual = to_embedding(perturb(rng, vcenter, cfg.visual_noise));
      ev.frame.layers.resize(static_cast<std::size_t>(cfg.L));

      if (f > 0)
        for (int l = 0; l < cfg.L; ++l)
          centers[static_cast<std::size_t>(l)] =
              perturb(rng, centers[static_cast<std::size_t>(l)], cfg.drift_rate);

      DVec key_sum(static_cast<std::size_t>(cfg.d), 0.0);
      for (int l = 0; l < cfg.L; ++l) {
        auto& layer_entries = ev.frame.layers[static_cast<std::size_t>(l)];
        for (int t = 0; t < cfg.tokens_per_frame; ++t) {
          KVEntry e;
          DVec key = perturb(rng, centers[static_cast<std::size_t>(l)], cfg.semantic_noise);
          e.key = to_embedding(key);
          e.value = to_embedding(gauss_vec(rng, cfg.d));
          e.frame_id = frame_id;
          e.layer_id = l;
          e.token_id = t;
          layer_entries.push_back(std::move(e));
          if (l == 0)
            for (int i = 0; i < cfg.d; ++i) key_sum[static_cast<std::size_t>(i)] += key[static_cast<std::size_t>(i)];
        }
      }
      for (double& x : key_sum) x /= static_cast<double>(cfg.tokens_per_frame);
      frame_key_means[static_cast<std::size_t>(s)].push_back({frame_id, std::move(key_sum)});

      events.push_back(std::move(ev));
      frame_id += 1;
    }
    final_centers[static_cast<std::size_t>(s)] = centers;

    int allotted = per_scene + (s < extra ? 1 : 0);
    for (int qi = 0; qi < allotted; ++qi) {
      int target = static_cast<int>(rng.index(static_cast<std::uint64_t>(s + 1)));
      StreamEvent ev;
      ev.kind = StreamEvent::Kind::Query;
      ev.query.query_id = query_id++;
      DVec q = final_centers[static_cast<std::size_t>(target)][0];
      ev.query.q.push_back(to_embedding(q));
      for (int l = 1; l < cfg.L; ++l) {
        q = perturb(rng, q, cfg.cross_layer_eps);
        ev.query.q.push_back(to_embedding(q));
      }

      const auto& means = frame_key_means[static_cast<std::size_t>(target)];
      std::vector<std::pair<double, std::int64_t>> scored;
      for (const auto& [fid, mean_key] : means)
        scored.push_back({cosine_sim(ev.query.q[0], mean_key), fid});
      std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
      });
      std::size_t m = std::min<std::size_t>(scored.size(), static_cast<std::size_t>(cfg.gt_top_m));
      for (std::size_t i = 0; i < m; ++i)
        ev.query.ground_truth_frames.push_back(scored[i].second);
      std::sort(ev.query.ground_truth_frames.begin(), ev.query.ground_truth_frames.end());

      if (cfg.queries_at_end)
        held_queries.push_back(std::move(ev));
      else
        events.push_back(std::move(ev));
    }
  }

  for (StreamEvent& ev : held_queries) events.push_back(std::move(ev));
  return events;
}

void save_trace(const std::vector<StreamEvent>& events, const StreamConfig& cfg,
                const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open trace for writing: " + path);

  json header;
  header["format"] = "kvclust.trace.v1";
  header["d"] = cfg.d;
  header["L"] = cfg.L;
  header["tokens_per_frame"] = cfg.tokens_per_frame;
  out << header.dump() << "\n";

  auto dump_embedding = [](const Embedding& v) {
    json arr = json::array();
    for (float x : v) arr.push_back(static_cast<double>(x));
    return arr;
  };

  for (const StreamEvent& ev : events) {
    json rec;
    if (ev.kind == StreamEvent::Kind::Frame) {
      rec["type"] = "frame";
      rec["frame_id"] = ev.frame.frame_id;
      rec["visual"] = dump_embedding(ev.frame.visual);
      json layers = json::array();
      for (const auto& layer : ev.frame.layers) {
        json tokens = json::array();
        for (const KVEntry& e : layer) {
          tokens.push_back(json{{"token", e.token_id},
                                {"key", dump_embedding(e.key)},
                                {"value", dump_embedding(e.value)}});
        }
        layers.push_back(std::move(tokens));
      }
      rec["layers"] = std::move(layers);
    } else {
      rec["type"] = "query";
      rec["query_id"] = ev.query.query_id;
      json qs = json::array();
      for (const Embedding& q : ev.query.q) qs.push_back(dump_embedding(q));
      rec["q"] = std::move(qs);
      rec["gt"] = ev.query.ground_truth_frames;
    }
    out << rec.dump() << "\n";
  }
  if (!out) throw ConfigError("write failed for trace: " + path);
}

LoadedTrace load_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open trace: " + path);

  auto parse_line = [](const std::string& text, std::size_t line_no) {
    try {
      return json::parse(text);
    } catch (const json::exception& e) {
      throw ParseError(line_no, std::string("bad trace record: ") + e.what());
    }
  };

  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError(1, "missing trace header");
  line_no = 1;
  json header = parse_line(line, line_no);
  if (header.value("format", "") != "kvclust.trace.v1")
    throw ParseError(1, "unrecognized trace format");

  LoadedTrace trace;
  try {
    trace.d = header.at("d").get<int>();
    trace.L = header.at("L").get<int>();
    trace.tokens_per_frame = header.at("tokens_per_frame").get<int>();
  } catch (const json::exception& e) {
    throw ParseError(1, std::string("bad trace header: ") + e.what());
  }
  if (trace.d < 1 || trace.L < 1 || trace.tokens_per_frame < 1)
    throw ParseError(1, "trace header counts must be positive");

  auto read_embedding = [&](const json& arr, std::size_t ln) {
    if (!arr.is_array() || static_cast<int>(arr.size()) != trace.d)
      throw ParseError(ln, "embedding width does not match the header");
    Embedding v;
    v.reserve(arr.size());
    for (const auto& x : arr) v.push_back(static_cast<float>(x.get<double>()));
    return v;
  };

  std::int64_t last_frame = -1;
  while (std::getline(in, line)) {
    line_no += 1;
    if (line.empty()) continue;
    json rec = parse_line(line, line_no);
    try {
      std::string type = rec.at("type").get<std::string>();
      StreamEvent ev;
      if (type == "frame") {
        ev.kind = StreamEvent::Kind::Frame;
        ev.frame.frame_id = rec.at("frame_id").get<std::int64_t>();
        if (ev.frame.frame_id <= last_frame)
          throw ParseError(line_no, "frame ids must be strictly increasing");
        last_frame = ev.frame.frame_id;
        ev.frame.visual = read_embedding(rec.at("visual"), line_no);
        const json& layers = rec.at("layers");
        if (static_cast<int>(layers.size()) != trace.L)
          throw ParseError(line_no, "layer count does not match the header");
        std::int32_t layer_id = 0;
        for (const json& tokens : layers) {
          std::vector<KVEntry> entries;
          for (const json& t : tokens) {
            KVEntry e;
            e.token_id = t.at("token").get<std::int32_t>();
            e.key = read_embedding(t.at("key"), line_no);
            e.value = read_embedding(t.at("value"), line_no);
            e.frame_id = ev.frame.frame_id;
            e.layer_id = layer_id;
            entries.push_back(std::move(e));
          }
          ev.frame.layers.push_back(std::move(entries));
          layer_id += 1;
        }
      } else if (type == "query") {
        ev.kind = StreamEvent::Kind::Query;
        ev.query.query_id = rec.at("query_id").get<std::int64_t>();
        const json& qs = rec.at("q");
        if (static_cast<int>(qs.size()) != trace.L)
          throw ParseError(line_no, "query layer count does not match the header");
        for (const json& q : qs) ev.query.q.push_back(read_embedding(q, line_no));
        ev.query.ground_truth_frames = rec.at("gt").get<std::vector<std::int64_t>>();
        for (std::int64_t f : ev.query.ground_truth_frames)
          if (f > last_frame)
            throw ParseError(line_no, "query references a frame that has not arrived");
      } else {
        throw ParseError(line_no, "unknown event type: " + type);
      }
      trace.events.push_back(std::move(ev));
    } catch (const json::exception& e) {
      throw ParseError(line_no, std::string("bad trace record: ") + e.what());
    }
  }
  return trace;
}

StreamConfig default_stream_config() {
  return StreamConfig{};
}

StreamConfig drift_stream_config() {
  StreamConfig cfg;
  cfg.n_scenes = 6;
  cfg.frames_per_scene = 48;
  cfg.scene_cycle = 2;
  cfg.drift_rate = 0.06;
  cfg.semantic_noise = 0.05;
  cfg.n_queries = 18;
  cfg.seed = 7;
  return cfg;
}

}  // namespace kvclust
