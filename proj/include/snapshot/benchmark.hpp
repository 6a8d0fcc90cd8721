#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "snapshot/scene.hpp"

namespace snapshot {

// One 70-timestep prediction window: tracks re-indexed to local timesteps
// 0..window-1 with labels assigned, sharing the source scenario's map.
struct Sample {
  std::string id;           // scenario id + "_w" + window start
  std::string scenario_id;
  int window_start = 0;
  int window = 70;
  std::vector<Track> tracks;
  std::shared_ptr<const std::vector<MapPolygon>> map;
};

enum class Split : int { kTrain = 0, kVal = 1, kTest = 2 };

const char* split_name(Split s);

inline constexpr int kObservedSteps = 10;  // local t in [0, 9]
inline constexpr int kHorizonSteps = 60;   // local t in [10, 69]
inline constexpr int kWindowSteps = kObservedSteps + kHorizonSteps;

// Assigns SCORED/UNSCORED/FRAGMENT labels to every track of the sample.
// SCORED: pedestrian with complete observation and future. UNSCORED: present
// at the most recent observed step (local t=9) but not SCORED. FRAGMENT:
// everything else.
Sample label_tracks(Sample sample);

// Cuts a scenario into fixed windows starting at 0, stride, 2*stride, ...
// Windows without a SCORED pedestrian are dropped.
std::vector<Sample> slide_windows(const Scenario& scenario, int window = kWindowSteps,
                                  int stride = 5);

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

// Deterministic per-scenario split: FNV-1a of the id mapped to [0, 1) and
// thresholded. All windows of one scenario land in the same split.
Split assign_split(const std::string& scenario_id, const SplitRatios& ratios = {});

struct SplitCounts {
  std::int64_t samples = 0;
  std::int64_t scored_tracks = 0;
  std::int64_t multi_pedestrian_samples = 0;
};

struct BenchmarkManifest {
  int window = kWindowSteps;
  int stride = 5;
  std::int64_t scenarios = 0;
  double mean_windows_per_scenario = 0.0;
  std::map<std::string, SplitCounts> splits;  // keys: train, val, test
  std::string hash;                           // FNV-1a of the manifest body

  std::string to_json() const;
};

// Windows all scenarios, writes {train,val,test}.jsonl plus manifest.json
// into out_dir, and returns the manifest.
BenchmarkManifest build_benchmark(const std::vector<Scenario>& scenarios,
                                  const std::string& out_dir, int window = kWindowSteps,
                                  int stride = 5, const SplitRatios& ratios = {});

std::vector<Sample> load_samples(const std::string& path);
void save_samples(const std::vector<Sample>& samples, const std::string& path);

BenchmarkManifest load_manifest(const std::string& path);

}  // namespace snapshot
