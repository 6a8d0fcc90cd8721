#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "snapshot/common.hpp"

namespace snapshot {

// Numeric codes are stable across serialization. PADDING never appears in
// stored scenarios, only in feature matrices.
enum class AgentType : int {
  kPadding = 0,
  kPedestrian = 1,
  kVehicle = 2,
  kCyclist = 3,
  kOther = 4,
};

// Assigned only inside benchmark samples, never on raw scenarios.
enum class TrackLabel : int {
  kFragment = 0,
  kUnscored = 1,
  kScored = 2,
};

enum class PolygonType : int {
  kDrivableArea = 1,
  kLaneSegment = 2,
  kCrosswalk = 3,
  kFreeSpace = 4,
};

// One observation on the fixed 10 Hz grid, scene frame, meters.
struct TrackState {
  int t = 0;
  double x = 0.0;
  double y = 0.0;
};

struct Track {
  std::string id;
  AgentType agent_type = AgentType::kOther;
  // Strictly increasing t; gaps represent occlusion.
  std::vector<TrackState> states;
  std::optional<TrackLabel> label;

  const TrackState* state_at(int t) const;
  bool has_range(int t_begin, int t_end) const;  // every step in [t_begin, t_end]
};

struct MapPolygon {
  int id = 0;
  PolygonType ptype = PolygonType::kFreeSpace;
  // >= 2 points; consecutive point pairs define the polygon's polylines.
  std::vector<std::pair<double, double>> points;
};

struct Scenario {
  std::string id;
  int freq_hz = 10;
  std::vector<Track> tracks;
  std::vector<MapPolygon> map;

  // Last covered timestep + 1 over all tracks; 0 when there are no states.
  int length() const;
};

// Throws ValidationError on any invariant violation (duplicate ids,
// non-increasing timesteps, non-finite coordinates, bad freq_hz, ...).
void validate(const Scenario& s);

// One JSON object per line; see README for the exact schema. Parse errors
// name the offending line and field.
std::vector<Scenario> load_scenarios(const std::string& path);
void save_scenarios(const std::vector<Scenario>& scenarios, const std::string& path);

// Generated agent behaviors. The tag is embedded in the track id
// ("..._cv", "..._stop", "..._turn") so evaluation can slice per behavior.
enum class Behavior { kConstantVelocity, kStopAndWait, kCrosswalkTurn };

struct GeneratorConfig {
  int num_scenarios = 100;
  int agents_per_scenario = 8;
  int length_timesteps = 110;  // 11 s at 10 Hz
  // Behavior mix for pedestrians; vehicles fall back to cv/stop.
  double mix_constant_velocity = 0.34;
  double mix_stop_and_wait = 0.33;
  double mix_crosswalk_turn = 0.33;
  // Fraction of non-focal agents with late start, early end, or a mid gap.
  double occlusion_fraction = 0.25;
  // Agent 0 is always a pedestrian; the rest draw their type from this.
  double pedestrian_fraction = 0.6;
};

// Deterministic for fixed (config, seed); scenario i uses stream seed + i,
// so generation may shard across threads without changing the output.
std::vector<Scenario> generate_synthetic(const GeneratorConfig& config,
                                         std::uint64_t seed, int threads = 1);

}  // namespace snapshot
