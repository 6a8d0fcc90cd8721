#pragma once

// Shared fixtures for the test suites.

#include <string>
#include <vector>

#include "snapshot/benchmark.hpp"
#include "snapshot/scene.hpp"

namespace snapshot::testing {

// Straight-line track sampled on [t0, t0+n) at 10 Hz.
inline Track make_track(const std::string& id, AgentType type, int t0, int n, double x0,
                        double y0, double vx, double vy) {
  Track track;
  track.id = id;
  track.agent_type = type;
  for (int i = 0; i < n; ++i) {
    track.states.push_back({t0 + i, x0 + vx * kDt * i, y0 + vy * kDt * i});
  }
  return track;
}

inline Sample make_sample(std::vector<Track> tracks, std::vector<MapPolygon> map = {},
                          int window = kWindowSteps) {
  Sample sample;
  sample.id = "fixture_w0";
  sample.scenario_id = "fixture";
  sample.window_start = 0;
  sample.window = window;
  sample.tracks = std::move(tracks);
  sample.map = std::make_shared<const std::vector<MapPolygon>>(std::move(map));
  return label_tracks(std::move(sample));
}

inline Scenario make_scenario(const std::string& id, std::vector<Track> tracks,
                              std::vector<MapPolygon> map = {}) {
  Scenario s;
  s.id = id;
  s.freq_hz = 10;
  s.tracks = std::move(tracks);
  s.map = std::move(map);
  return s;
}

inline MapPolygon make_polygon(int id, PolygonType type,
                               std::vector<std::pair<double, double>> points) {
  MapPolygon p;
  p.id = id;
  p.ptype = type;
  p.points = std::move(points);
  return p;
}

}  // namespace snapshot::testing
