#include "snapshot/benchmark.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "snapshot/detail/scene_json.hpp"

namespace snapshot {

using detail::ordered_json;

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

namespace {

TrackLabel classify(const Track& track, int window) {
  bool present_now = track.state_at(kObservedSteps - 1) != nullptr;
  if (track.agent_type == AgentType::kPedestrian && track.has_range(0, window - 1))
    return TrackLabel::kScored;
  if (present_now) return TrackLabel::kUnscored;
  return TrackLabel::kFragment;
}

}  // namespace

Sample label_tracks(Sample sample) {
  for (auto& track : sample.tracks) track.label = classify(track, sample.window);
  return sample;
}

std::vector<Sample> slide_windows(const Scenario& scenario, int window, int stride) {
  if (window <= 0) throw ValidationError("slide_windows: window must be positive");
  if (stride <= 0) throw ValidationError("slide_windows: stride must be positive");
  if (window <= kObservedSteps)
    throw ValidationError("slide_windows: window must exceed the observation length " +
                          std::to_string(kObservedSteps));

  std::vector<Sample> samples;
  const int length = scenario.length();
  auto map = std::make_shared<const std::vector<MapPolygon>>(scenario.map);
  for (int start = 0; start + window <= length; start += stride) {
    Sample sample;
    sample.id = scenario.id + "_w" + std::to_string(start);
    sample.scenario_id = scenario.id;
    sample.window_start = start;
    sample.window = window;
    sample.map = map;
    for (const auto& track : scenario.tracks) {
      Track local;
      local.id = track.id;
      local.agent_type = track.agent_type;
      for (const auto& st : track.states) {
        if (st.t >= start && st.t < start + window)
          local.states.push_back({st.t - start, st.x, st.y});
      }
      if (!local.states.empty()) sample.tracks.push_back(std::move(local));
    }
    sample = label_tracks(std::move(sample));
    bool has_scored = std::any_of(sample.tracks.begin(), sample.tracks.end(), [](const Track& t) {
      return t.label == TrackLabel::kScored;
    });
    if (has_scored) samples.push_back(std::move(sample));
  }
  return samples;
}

namespace {

// splitmix64 finalizer. FNV-1a does not avalanche the final input bytes, so
// ids differing only in a trailing counter would otherwise land in clustered
// buckets. The constants are fixed for cross-implementation reproducibility.
std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace

Split assign_split(const std::string& scenario_id, const SplitRatios& ratios) {
  if (scenario_id.empty()) throw ValidationError("assign_split: empty scenario id");
  double sum = ratios.train + ratios.val + ratios.test;
  if (std::abs(sum - 1.0) > 1e-9 || ratios.train < 0 || ratios.val < 0 || ratios.test < 0)
    throw ValidationError("assign_split: ratios must be non-negative and sum to 1");
  double u = static_cast<double>(mix64(fnv1a64(scenario_id))) * 0x1.0p-64;
  if (u < ratios.train) return Split::kTrain;
  if (u < ratios.train + ratios.val) return Split::kVal;
  return Split::kTest;
}

namespace {

ordered_json sample_to_json(const Sample& sample) {
  ordered_json j;
  j["id"] = sample.id;
  j["freq_hz"] = 10;
  j["window_start"] = sample.window_start;
  ordered_json tracks = ordered_json::array();
  for (const auto& track : sample.tracks) tracks.push_back(detail::track_to_json(track));
  j["tracks"] = std::move(tracks);
  ordered_json map = ordered_json::array();
  if (sample.map) {
    for (const auto& poly : *sample.map) map.push_back(detail::polygon_to_json(poly));
  }
  j["map"] = std::move(map);
  return j;
}

Sample sample_from_json(const ordered_json& j, const std::string& where) {
  Sample sample;
  auto it = j.find("id");
  if (it == j.end()) throw ValidationError(where + ": missing field 'id'");
  sample.id = it->get<std::string>();
  auto ws = j.find("window_start");
  if (ws == j.end()) throw ValidationError(where + ": missing field 'window_start'");
  sample.window_start = ws->get<int>();
  // The scenario id is the sample id with the trailing "_w<start>" stripped.
  auto pos = sample.id.rfind("_w");
  sample.scenario_id = pos == std::string::npos ? sample.id : sample.id.substr(0, pos);
  auto tracks = j.find("tracks");
  if (tracks == j.end()) throw ValidationError(where + ": missing field 'tracks'");
  for (const auto& jt : *tracks)
    sample.tracks.push_back(detail::track_from_json(jt, where, /*allow_label=*/true));
  auto map_it = j.find("map");
  if (map_it == j.end()) throw ValidationError(where + ": missing field 'map'");
  auto map = std::make_shared<std::vector<MapPolygon>>();
  for (const auto& jp : *map_it) map->push_back(detail::polygon_from_json(jp, where));
  sample.map = std::move(map);
  // Every sample carries a SCORED track reaching t = window - 1, so the
  // window is recoverable from the largest local timestep.
  int max_t = 0;
  for (const auto& track : sample.tracks) {
    for (const auto& st : track.states) max_t = std::max(max_t, st.t);
  }
  sample.window = std::max(kWindowSteps, max_t + 1);
  for (const auto& track : sample.tracks) {
    if (!track.label.has_value())
      throw ValidationError(where + ": track '" + track.id + "' is missing its label");
    for (const auto& st : track.states) {
      if (st.t < 0)
        throw ValidationError(where + ": track '" + track.id + "' has negative local timestep " +
                              std::to_string(st.t));
    }
  }
  return sample;
}

}  // namespace

void save_samples(const std::vector<Sample>& samples, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  for (const auto& sample : samples) out << sample_to_json(sample).dump() << '\n';
  if (!out) throw IoError("write failed for '" + path + "'");
}

std::vector<Sample> load_samples(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open sample file '" + path + "'");
  std::vector<Sample> samples;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError(where + ": malformed JSON: " + e.what());
    }
    samples.push_back(sample_from_json(j, where));
  }
  return samples;
}

std::string BenchmarkManifest::to_json() const {
  ordered_json j;
  ordered_json splits_json;
  for (const char* name : {"train", "val", "test"}) {
    SplitCounts counts;
    auto it = splits.find(name);
    if (it != splits.end()) counts = it->second;
    ordered_json c;
    c["samples"] = counts.samples;
    c["scored_tracks"] = counts.scored_tracks;
    c["multi_pedestrian_samples"] = counts.multi_pedestrian_samples;
    c["multi_pedestrian_fraction"] =
        counts.samples > 0 ? static_cast<double>(counts.multi_pedestrian_samples) /
                                 static_cast<double>(counts.samples)
                           : 0.0;
    splits_json[name] = std::move(c);
  }
  j["splits"] = std::move(splits_json);
  j["stride"] = stride;
  j["window"] = window;
  ordered_json overlap;
  overlap["overlap_steps"] = std::max(0, window - stride);
  overlap["scenarios"] = scenarios;
  overlap["mean_windows_per_scenario"] = mean_windows_per_scenario;
  j["overlap"] = std::move(overlap);
  if (!hash.empty()) j["hash"] = hash;
  return j.dump(2);
}

BenchmarkManifest build_benchmark(const std::vector<Scenario>& scenarios,
                                  const std::string& out_dir, int window, int stride,
                                  const SplitRatios& ratios) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + out_dir + "': " + ec.message());

  std::map<std::string, std::vector<Sample>> by_split;
  by_split["train"];
  by_split["val"];
  by_split["test"];
  std::int64_t total_windows = 0;
  for (const auto& scenario : scenarios) {
    Split split = assign_split(scenario.id, ratios);
    auto samples = slide_windows(scenario, window, stride);
    total_windows += static_cast<std::int64_t>(samples.size());
    auto& bucket = by_split[split_name(split)];
    for (auto& sample : samples) bucket.push_back(std::move(sample));
  }

  BenchmarkManifest manifest;
  manifest.window = window;
  manifest.stride = stride;
  manifest.scenarios = static_cast<std::int64_t>(scenarios.size());
  manifest.mean_windows_per_scenario =
      scenarios.empty() ? 0.0
                        : static_cast<double>(total_windows) / static_cast<double>(scenarios.size());
  for (auto& [name, samples] : by_split) {
    SplitCounts counts;
    counts.samples = static_cast<std::int64_t>(samples.size());
    for (const auto& sample : samples) {
      int scored = 0;
      for (const auto& track : sample.tracks) {
        if (track.label == TrackLabel::kScored) ++scored;
      }
      counts.scored_tracks += scored;
      if (scored >= 2) ++counts.multi_pedestrian_samples;
    }
    manifest.splits[name] = counts;
    save_samples(samples, (fs::path(out_dir) / (name + ".jsonl")).string());
  }
  manifest.hash = "fnv1a64:" + std::to_string(fnv1a64(manifest.to_json()));

  std::ofstream out(fs::path(out_dir) / "manifest.json");
  if (!out) throw IoError("cannot write manifest in '" + out_dir + "'");
  out << manifest.to_json() << '\n';
  return manifest;
}

BenchmarkManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path + "'");
  ordered_json j;
  try {
    j = ordered_json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path + ": malformed manifest: " + e.what());
  }
  BenchmarkManifest manifest;
  manifest.window = j.at("window").get<int>();
  manifest.stride = j.at("stride").get<int>();
  if (j.contains("overlap")) {
    manifest.scenarios = j["overlap"].value("scenarios", std::int64_t{0});
    manifest.mean_windows_per_scenario = j["overlap"].value("mean_windows_per_scenario", 0.0);
  }
  for (auto& [name, c] : j.at("splits").items()) {
    SplitCounts counts;
    counts.samples = c.at("samples").get<std::int64_t>();
    counts.scored_tracks = c.at("scored_tracks").get<std::int64_t>();
    counts.multi_pedestrian_samples = c.at("multi_pedestrian_samples").get<std::int64_t>();
    manifest.splits[name] = counts;
  }
  manifest.hash = j.value("hash", std::string{});
  return manifest;
}

}  // namespace snapshot
