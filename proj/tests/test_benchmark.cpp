#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <set>

#include "helpers.hpp"
#include "snapshot/benchmark.hpp"

using namespace snapshot;
using snapshot::testing::make_sample;
using snapshot::testing::make_scenario;
using snapshot::testing::make_track;

namespace {

std::string temp_dir(const char* name) {
  auto dir = std::filesystem::temp_directory_path() / "snapshot_benchmark_tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

// Brute-force window enumerator: every start whose window fits.
int count_windows_brute_force(int length, int window, int stride) {
  int count = 0;
  for (int start = 0;; start += stride) {
    if (start + window > length) break;
    ++count;
  }
  return count;
}

Scenario full_pedestrian_scenario(const std::string& id, int length) {
  return make_scenario(id, {make_track("ped", AgentType::kPedestrian, 0, length, 0, 0, 1, 0)});
}

}  // namespace

TEST_CASE("window count formula on the reference setup") {
  auto s = full_pedestrian_scenario("w", 110);
  auto samples = slide_windows(s, 70, 5);
  CHECK(samples.size() == 9);  // floor((110-70)/5)+1
  CHECK(samples.front().window_start == 0);
  CHECK(samples.back().window_start == 40);
}

TEST_CASE("scenario shorter than the window yields nothing") {
  auto s = full_pedestrian_scenario("short", 69);
  CHECK(slide_windows(s, 70, 5).empty());
}

TEST_CASE("window count matches the brute-force enumerator across lengths and strides") {
  for (int length : {70, 83, 110, 200, 300}) {
    auto s = full_pedestrian_scenario("sweep", length);
    for (int stride = 1; stride <= 20; ++stride) {
      auto samples = slide_windows(s, 70, stride);
      CHECK(static_cast<int>(samples.size()) == count_windows_brute_force(length, 70, stride));
    }
  }
}

TEST_CASE("windows without a predictable pedestrian are dropped") {
  // pedestrian track ends at t=50: no window of [start, start+70) is complete
  auto s = make_scenario("droppy", {make_track("ped", AgentType::kPedestrian, 0, 51, 0, 0, 1, 0),
                                    make_track("veh", AgentType::kVehicle, 0, 110, 5, 5, 2, 0)});
  CHECK(slide_windows(s, 70, 5).empty());
}

TEST_CASE("invalid window parameters are rejected") {
  auto s = full_pedestrian_scenario("bad", 110);
  CHECK_THROWS_AS(slide_windows(s, 70, 0), ValidationError);
  CHECK_THROWS_AS(slide_windows(s, 0, 5), ValidationError);
  CHECK_THROWS_AS(slide_windows(s, -3, 5), ValidationError);
}

TEST_CASE("labels replicate the reference windowing picture") {
  // Ped 1 fully observed -> SCORED; Ped 2 present at t=9 but ending inside
  // the window -> UNSCORED; Veh 1 absent at t=9 -> TRACK_FRAGMENT.
  auto sample = make_sample({
      make_track("ped1", AgentType::kPedestrian, 0, 70, 0, 0, 1, 0),
      make_track("ped2", AgentType::kPedestrian, 0, 30, 5, 0, 1, 0),
      make_track("veh1", AgentType::kVehicle, 20, 40, -5, 2, 3, 0),
  });
  REQUIRE(sample.tracks.size() == 3);
  CHECK(sample.tracks[0].label == TrackLabel::kScored);
  CHECK(sample.tracks[1].label == TrackLabel::kUnscored);
  CHECK(sample.tracks[2].label == TrackLabel::kFragment);
}

TEST_CASE("non-pedestrian present at t=9 is UNSCORED even when complete") {
  auto sample = make_sample({
      make_track("ped", AgentType::kPedestrian, 0, 70, 0, 0, 1, 0),
      make_track("veh", AgentType::kVehicle, 0, 70, 3, 3, 2, 0),
  });
  CHECK(sample.tracks[1].label == TrackLabel::kUnscored);
}

TEST_CASE("pedestrian with an occlusion gap in the observation is UNSCORED") {
  Track ped = make_track("ped-gap", AgentType::kPedestrian, 0, 70, 0, 0, 1, 0);
  ped.states.erase(ped.states.begin() + 4);  // drop local t=4
  auto sample = make_sample({make_track("ped", AgentType::kPedestrian, 0, 70, 9, 9, 1, 0), ped});
  CHECK(sample.tracks[1].label == TrackLabel::kUnscored);
}

TEST_CASE("label assignment is idempotent and exhaustive") {
  GeneratorConfig cfg;
  cfg.num_scenarios = 10;
  cfg.agents_per_scenario = 6;
  auto scenarios = generate_synthetic(cfg, 21);
  for (const auto& scenario : scenarios) {
    for (const auto& sample : slide_windows(scenario)) {
      Sample relabeled = label_tracks(sample);
      REQUIRE(relabeled.tracks.size() == sample.tracks.size());
      for (size_t i = 0; i < sample.tracks.size(); ++i) {
        REQUIRE(sample.tracks[i].label.has_value());
        CHECK(relabeled.tracks[i].label == sample.tracks[i].label);
      }
    }
  }
}

TEST_CASE("split assignment is deterministic and respects the ratios") {
  CHECK(assign_split("abc") == assign_split("abc"));
  int train = 0, val = 0, test = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    switch (assign_split("scenario-" + std::to_string(i * 7919))) {
      case Split::kTrain: ++train; break;
      case Split::kVal: ++val; break;
      case Split::kTest: ++test; break;
    }
  }
  CHECK(train / static_cast<double>(n) == doctest::Approx(0.8).epsilon(0.025));
  CHECK(val / static_cast<double>(n) == doctest::Approx(0.1).epsilon(0.25));
  CHECK(test / static_cast<double>(n) == doctest::Approx(0.1).epsilon(0.25));
}

TEST_CASE("degenerate split ratios send everything to train") {
  SplitRatios all_train{1.0, 0.0, 0.0};
  for (int i = 0; i < 200; ++i)
    CHECK(assign_split("id" + std::to_string(i), all_train) == Split::kTrain);
}

TEST_CASE("split ratios must sum to one") {
  CHECK_THROWS_AS(assign_split("x", {0.5, 0.2, 0.2}), ValidationError);
  CHECK_THROWS_AS(assign_split("", {}), ValidationError);
}

TEST_CASE("build_benchmark counts agree with a recount of the emitted files") {
  GeneratorConfig cfg;
  cfg.num_scenarios = 60;
  cfg.agents_per_scenario = 5;
  auto scenarios = generate_synthetic(cfg, 11);
  auto dir = temp_dir("recount");
  auto manifest = build_benchmark(scenarios, dir);

  std::int64_t expected_total = 0;
  for (const auto& s : scenarios) expected_total += static_cast<std::int64_t>(slide_windows(s).size());

  std::int64_t emitted_total = 0;
  for (const char* split : {"train", "val", "test"}) {
    auto samples = load_samples(dir + "/" + split + ".jsonl");
    const auto& counts = manifest.splits.at(split);
    CHECK(static_cast<std::int64_t>(samples.size()) == counts.samples);
    emitted_total += static_cast<std::int64_t>(samples.size());
    std::int64_t scored = 0, multi = 0;
    for (const auto& sample : samples) {
      int in_sample = 0;
      for (const auto& track : sample.tracks) {
        if (track.label == TrackLabel::kScored) ++in_sample;
      }
      scored += in_sample;
      if (in_sample >= 2) ++multi;
    }
    CHECK(scored == counts.scored_tracks);
    CHECK(multi == counts.multi_pedestrian_samples);
  }
  CHECK(emitted_total == expected_total);
}

TEST_CASE("no scenario id appears in more than one split") {
  GeneratorConfig cfg;
  cfg.num_scenarios = 80;
  cfg.agents_per_scenario = 4;
  auto scenarios = generate_synthetic(cfg, 13);
  auto dir = temp_dir("leakage");
  build_benchmark(scenarios, dir);
  std::map<std::string, std::string> seen;
  for (const char* split : {"train", "val", "test"}) {
    for (const auto& sample : load_samples(dir + "/" + split + ".jsonl")) {
      auto [it, inserted] = seen.emplace(sample.scenario_id, split);
      if (!inserted) CHECK(it->second == split);
    }
  }
}

TEST_CASE("empty scenario list produces an all-zero manifest") {
  auto dir = temp_dir("empty");
  auto manifest = build_benchmark({}, dir);
  for (const char* split : {"train", "val", "test"}) {
    CHECK(manifest.splits.at(split).samples == 0);
    CHECK(manifest.splits.at(split).scored_tracks == 0);
  }
  auto reloaded = load_manifest(dir + "/manifest.json");
  CHECK(reloaded.splits.at("train").samples == 0);
  CHECK(reloaded.window == kWindowSteps);
  CHECK(reloaded.stride == 5);
}

TEST_CASE("samples round-trip through the sample file format") {
  GeneratorConfig cfg;
  cfg.num_scenarios = 4;
  cfg.agents_per_scenario = 5;
  auto scenarios = generate_synthetic(cfg, 17);
  std::vector<Sample> all;
  for (const auto& s : scenarios) {
    for (auto& sample : slide_windows(s)) all.push_back(std::move(sample));
  }
  REQUIRE(!all.empty());
  auto dir = temp_dir("samples");
  save_samples(all, dir + "/x.jsonl");
  auto loaded = load_samples(dir + "/x.jsonl");
  REQUIRE(loaded.size() == all.size());
  for (size_t i = 0; i < all.size(); ++i) {
    CHECK(loaded[i].id == all[i].id);
    CHECK(loaded[i].window_start == all[i].window_start);
    CHECK(loaded[i].scenario_id == all[i].scenario_id);
    REQUIRE(loaded[i].tracks.size() == all[i].tracks.size());
    for (size_t j = 0; j < all[i].tracks.size(); ++j) {
      CHECK(loaded[i].tracks[j].label == all[i].tracks[j].label);
      CHECK(loaded[i].tracks[j].states.size() == all[i].tracks[j].states.size());
    }
    CHECK(loaded[i].map->size() == all[i].map->size());
  }
}

TEST_CASE("manifest records the overlap statistics") {
  GeneratorConfig cfg;
  cfg.num_scenarios = 10;
  cfg.agents_per_scenario = 3;
  auto scenarios = generate_synthetic(cfg, 23);
  auto dir = temp_dir("overlap");
  auto manifest = build_benchmark(scenarios, dir);
  CHECK(manifest.scenarios == 10);
  CHECK(manifest.mean_windows_per_scenario == doctest::Approx(9.0));
  CHECK(manifest.to_json().find("overlap_steps") != std::string::npos);
  CHECK(!manifest.hash.empty());
}
