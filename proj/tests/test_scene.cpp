#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "snapshot/scene.hpp"

using namespace snapshot;
using snapshot::testing::make_polygon;
using snapshot::testing::make_scenario;
using snapshot::testing::make_track;

namespace {

std::string temp_path(const char* name) {
  auto dir = std::filesystem::temp_directory_path() / "snapshot_scene_tests";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

bool scenarios_equal(const Scenario& a, const Scenario& b) {
  if (a.id != b.id || a.freq_hz != b.freq_hz || a.tracks.size() != b.tracks.size() ||
      a.map.size() != b.map.size())
    return false;
  for (size_t i = 0; i < a.tracks.size(); ++i) {
    const Track& ta = a.tracks[i];
    const Track& tb = b.tracks[i];
    if (ta.id != tb.id || ta.agent_type != tb.agent_type || ta.states.size() != tb.states.size())
      return false;
    for (size_t j = 0; j < ta.states.size(); ++j) {
      if (ta.states[j].t != tb.states[j].t || ta.states[j].x != tb.states[j].x ||
          ta.states[j].y != tb.states[j].y)
        return false;
    }
  }
  for (size_t i = 0; i < a.map.size(); ++i) {
    if (a.map[i].id != b.map[i].id || a.map[i].ptype != b.map[i].ptype ||
        a.map[i].points != b.map[i].points)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("load preserves a saved scenario with track order intact") {
  auto s = make_scenario(
      "s1",
      {make_track("a", AgentType::kPedestrian, 0, 5, 0, 0, 1, 0),
       make_track("b", AgentType::kVehicle, 0, 5, 10, 2, -3, 0)},
      {make_polygon(1, PolygonType::kCrosswalk, {{0, 0}, {1, 0}, {1, 1}})});
  auto path = temp_path("roundtrip.jsonl");
  save_scenarios({s}, path);
  auto loaded = load_scenarios(path);
  REQUIRE(loaded.size() == 1);
  CHECK(scenarios_equal(loaded[0], s));
  CHECK(loaded[0].tracks[0].id == "a");
  CHECK(loaded[0].tracks[1].id == "b");
}

TEST_CASE("empty file loads to an empty list") {
  auto path = temp_path("empty.jsonl");
  std::ofstream(path).close();
  CHECK(load_scenarios(path).empty());
}

TEST_CASE("duplicate track id is rejected naming the id") {
  auto s = make_scenario("dup", {make_track("t1", AgentType::kPedestrian, 0, 3, 0, 0, 1, 0),
                                 make_track("t1", AgentType::kVehicle, 0, 3, 5, 5, 1, 0)});
  CHECK_THROWS_WITH_AS(validate(s), doctest::Contains("t1"), ValidationError);
}

TEST_CASE("parse errors name the line and field") {
  auto path = temp_path("bad.jsonl");
  {
    std::ofstream out(path);
    out << R"({"id":"ok","freq_hz":10,"tracks":[],"map":[]})" << "\n";
    out << R"({"id":"broken","freq_hz":10,"map":[]})" << "\n";
  }
  CHECK_THROWS_WITH_AS(load_scenarios(path), doctest::Contains(":2"), ValidationError);
  CHECK_THROWS_WITH_AS(load_scenarios(path), doctest::Contains("tracks"), ValidationError);
}

TEST_CASE("occlusion gaps survive the round trip") {
  Track t = make_track("gap", AgentType::kPedestrian, 0, 10, 0, 0, 1, 0);
  t.states.erase(t.states.begin() + 5);  // drop t=5
  auto s = make_scenario("s-occ", {t});
  auto path = temp_path("gap.jsonl");
  save_scenarios({s}, path);
  auto loaded = load_scenarios(path);
  REQUIRE(loaded.size() == 1);
  CHECK(loaded[0].tracks[0].states.size() == 9);
  CHECK(loaded[0].tracks[0].state_at(5) == nullptr);
  CHECK(loaded[0].tracks[0].state_at(6) != nullptr);
}

TEST_CASE("coordinates with many significant digits round-trip bit-exactly") {
  Track t;
  t.id = "precise";
  t.agent_type = AgentType::kPedestrian;
  t.states = {{0, 123.456789012, -0.000123456789},
              {1, 1.0 / 3.0, std::nextafter(2.0, 3.0)},
              {2, 1e-17, 98765.432109876}};
  auto s = make_scenario("s-prec", {t});
  auto path = temp_path("precise.jsonl");
  save_scenarios({s}, path);
  auto loaded = load_scenarios(path);
  REQUIRE(loaded.size() == 1);
  for (size_t i = 0; i < t.states.size(); ++i) {
    CHECK(loaded[0].tracks[0].states[i].x == t.states[i].x);
    CHECK(loaded[0].tracks[0].states[i].y == t.states[i].y);
  }
}

TEST_CASE("round-trip is the identity over a generated set") {
  GeneratorConfig cfg;
  cfg.num_scenarios = 10;
  cfg.agents_per_scenario = 5;
  auto scenarios = generate_synthetic(cfg, 99);
  auto path = temp_path("gen10.jsonl");
  save_scenarios(scenarios, path);
  auto loaded = load_scenarios(path);
  REQUIRE(loaded.size() == scenarios.size());
  for (size_t i = 0; i < loaded.size(); ++i) CHECK(scenarios_equal(loaded[i], scenarios[i]));
}

TEST_CASE("generator is deterministic, also across thread counts") {
  GeneratorConfig cfg;
  cfg.num_scenarios = 6;
  cfg.agents_per_scenario = 3;
  auto a = generate_synthetic(cfg, 7);
  auto b = generate_synthetic(cfg, 7);
  auto c = generate_synthetic(cfg, 7, /*threads=*/3);
  REQUIRE(a.size() == 6);
  auto pa = temp_path("det_a.jsonl"), pb = temp_path("det_b.jsonl"), pc = temp_path("det_c.jsonl");
  save_scenarios(a, pa);
  save_scenarios(b, pb);
  save_scenarios(c, pc);
  auto slurp = [](const std::string& p) {
    std::ifstream in(p);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  };
  CHECK(slurp(pa) == slurp(pb));
  CHECK(slurp(pa) == slurp(pc));
}

TEST_CASE("constant-velocity pedestrians move with equal displacements") {
  GeneratorConfig cfg;
  cfg.num_scenarios = 20;
  cfg.agents_per_scenario = 4;
  cfg.mix_constant_velocity = 1.0;
  cfg.mix_stop_and_wait = 0.0;
  cfg.mix_crosswalk_turn = 0.0;
  auto scenarios = generate_synthetic(cfg, 3);
  int checked = 0;
  for (const auto& s : scenarios) {
    for (const auto& t : s.tracks) {
      if (t.id.find("_cv") == std::string::npos || t.states.size() < 3) continue;
      for (size_t i = 2; i < t.states.size(); ++i) {
        if (t.states[i].t != t.states[i - 1].t + 1 || t.states[i - 1].t != t.states[i - 2].t + 1)
          continue;  // skip across occlusion gaps
        double dx1 = t.states[i].x - t.states[i - 1].x;
        double dx0 = t.states[i - 1].x - t.states[i - 2].x;
        double dy1 = t.states[i].y - t.states[i - 1].y;
        double dy0 = t.states[i - 1].y - t.states[i - 2].y;
        CHECK(std::abs(dx1 - dx0) < 1e-9);
        CHECK(std::abs(dy1 - dy0) < 1e-9);
        ++checked;
      }
    }
  }
  CHECK(checked > 100);
}

TEST_CASE("generated scenario counts and lengths match the config") {
  GeneratorConfig cfg;
  cfg.num_scenarios = 100;
  cfg.agents_per_scenario = 8;
  auto scenarios = generate_synthetic(cfg, 1);
  REQUIRE(scenarios.size() == 100);
  for (const auto& s : scenarios) {
    CHECK(s.length() == 110);
    CHECK(s.tracks.size() == 8);
    // agent 0 is always fully observed
    CHECK(s.tracks[0].states.size() == 110);
    bool has_crosswalk = false;
    for (const auto& p : s.map) has_crosswalk |= p.ptype == PolygonType::kCrosswalk;
    CHECK(has_crosswalk);
  }
}

TEST_CASE("pedestrian step displacements never exceed 0.25 m") {
  GeneratorConfig cfg;
  cfg.num_scenarios = 30;
  cfg.agents_per_scenario = 6;
  auto scenarios = generate_synthetic(cfg, 5);
  for (const auto& s : scenarios) {
    for (const auto& t : s.tracks) {
      if (t.agent_type != AgentType::kPedestrian) continue;
      for (size_t i = 1; i < t.states.size(); ++i) {
        if (t.states[i].t != t.states[i - 1].t + 1) continue;
        double d =
            std::hypot(t.states[i].x - t.states[i - 1].x, t.states[i].y - t.states[i - 1].y);
        CHECK(d <= 0.25 + 1e-12);
      }
    }
  }
}

TEST_CASE("degenerate generator configs are rejected") {
  GeneratorConfig cfg;
  cfg.num_scenarios = 1;
  cfg.length_timesteps = 0;
  CHECK_THROWS_AS(generate_synthetic(cfg, 0), ValidationError);
  cfg.length_timesteps = 110;
  cfg.agents_per_scenario = 0;
  CHECK_THROWS_AS(generate_synthetic(cfg, 0), ValidationError);
}

TEST_CASE("save surfaces I/O failures with path context") {
  auto s = make_scenario("io", {make_track("a", AgentType::kPedestrian, 0, 3, 0, 0, 1, 0)});
  CHECK_THROWS_WITH_AS(save_scenarios({s}, "/nonexistent-dir/out.jsonl"),
                       doctest::Contains("/nonexistent-dir/out.jsonl"), IoError);
}
