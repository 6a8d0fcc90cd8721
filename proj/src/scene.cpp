#include "snapshot/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <thread>

#include "snapshot/detail/scene_json.hpp"

namespace snapshot {

using ordered_json = nlohmann::ordered_json;

const TrackState* Track::state_at(int t) const {
  auto it = std::lower_bound(states.begin(), states.end(), t,
                             [](const TrackState& s, int v) { return s.t < v; });
  if (it != states.end() && it->t == t) return &*it;
  return nullptr;
}

bool Track::has_range(int t_begin, int t_end) const {
  for (int t = t_begin; t <= t_end; ++t) {
    if (state_at(t) == nullptr) return false;
  }
  return true;
}

int Scenario::length() const {
  int last = -1;
  for (const auto& track : tracks) {
    if (!track.states.empty()) last = std::max(last, track.states.back().t);
  }
  return last + 1;
}

void validate(const Scenario& s) {
  if (s.id.empty()) throw ValidationError("scenario has empty id");
  if (s.freq_hz != 10)
    throw ValidationError("scenario '" + s.id + "': freq_hz must be 10, got " +
                          std::to_string(s.freq_hz));
  std::set<std::string> track_ids;
  for (const auto& track : s.tracks) {
    if (track.states.empty())
      throw ValidationError("scenario '" + s.id + "': track '" + track.id + "' is empty");
    if (!track_ids.insert(track.id).second)
      throw ValidationError("scenario '" + s.id + "': duplicate track id '" + track.id + "'");
    int prev_t = -1;
    for (const auto& st : track.states) {
      if (st.t <= prev_t)
        throw ValidationError("scenario '" + s.id + "': track '" + track.id +
                              "' has non-increasing timestep " + std::to_string(st.t));
      prev_t = st.t;
      if (!std::isfinite(st.x) || !std::isfinite(st.y))
        throw ValidationError("scenario '" + s.id + "': track '" + track.id +
                              "' has non-finite coordinates at t=" + std::to_string(st.t));
    }
    int code = static_cast<int>(track.agent_type);
    if (code < 1 || code > 4)
      throw ValidationError("scenario '" + s.id + "': track '" + track.id +
                            "' has invalid agent type " + std::to_string(code));
  }
  std::set<int> polygon_ids;
  for (const auto& poly : s.map) {
    if (!polygon_ids.insert(poly.id).second)
      throw ValidationError("scenario '" + s.id + "': duplicate polygon id " +
                            std::to_string(poly.id));
    if (poly.points.size() < 2)
      throw ValidationError("scenario '" + s.id + "': polygon " + std::to_string(poly.id) +
                            " has fewer than 2 points");
    int code = static_cast<int>(poly.ptype);
    if (code < 1 || code > 4)
      throw ValidationError("scenario '" + s.id + "': polygon " + std::to_string(poly.id) +
                            " has invalid type " + std::to_string(code));
    for (const auto& [x, y] : poly.points) {
      if (!std::isfinite(x) || !std::isfinite(y))
        throw ValidationError("scenario '" + s.id + "': polygon " + std::to_string(poly.id) +
                              " has non-finite point");
    }
  }
}

namespace {

// Pulls a field, naming it in the error on absence or wrong type.
template <typename T>
T field(const ordered_json& j, const char* name, const std::string& where) {
  auto it = j.find(name);
  if (it == j.end())
    throw ValidationError(where + ": missing field '" + std::string(name) + "'");
  try {
    return it->template get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(where + ": field '" + std::string(name) + "' has wrong type");
  }
}

}  // namespace

namespace detail {

ordered_json track_to_json(const Track& track) {
  ordered_json jt;
  jt["id"] = track.id;
  jt["type"] = static_cast<int>(track.agent_type);
  if (track.label.has_value()) jt["label"] = static_cast<int>(*track.label);
  ordered_json states = ordered_json::array();
  for (const auto& st : track.states) {
    ordered_json js;
    js["t"] = st.t;
    js["x"] = st.x;
    js["y"] = st.y;
    states.push_back(std::move(js));
  }
  jt["states"] = std::move(states);
  return jt;
}

ordered_json polygon_to_json(const MapPolygon& poly) {
  ordered_json jp;
  jp["id"] = poly.id;
  jp["type"] = static_cast<int>(poly.ptype);
  ordered_json pts = ordered_json::array();
  for (const auto& [x, y] : poly.points) pts.push_back(ordered_json::array({x, y}));
  jp["points"] = std::move(pts);
  return jp;
}

ordered_json scenario_to_json(const Scenario& s) {
  ordered_json j;
  j["id"] = s.id;
  j["freq_hz"] = s.freq_hz;
  ordered_json tracks = ordered_json::array();
  for (const auto& track : s.tracks) tracks.push_back(track_to_json(track));
  j["tracks"] = std::move(tracks);
  ordered_json map = ordered_json::array();
  for (const auto& poly : s.map) map.push_back(polygon_to_json(poly));
  j["map"] = std::move(map);
  return j;
}

Track track_from_json(const ordered_json& jt, const std::string& where, bool allow_label) {
  Track track;
  track.id = field<std::string>(jt, "id", where);
  track.agent_type = static_cast<AgentType>(field<int>(jt, "type", where));
  if (allow_label && jt.contains("label")) {
    int code = field<int>(jt, "label", where);
    if (code < 0 || code > 2)
      throw ValidationError(where + ": field 'label' out of range: " + std::to_string(code));
    track.label = static_cast<TrackLabel>(code);
  }
  auto states = field<ordered_json>(jt, "states", where);
  for (const auto& js : states) {
    TrackState st;
    st.t = field<int>(js, "t", where + " track '" + track.id + "'");
    st.x = field<double>(js, "x", where + " track '" + track.id + "'");
    st.y = field<double>(js, "y", where + " track '" + track.id + "'");
    track.states.push_back(st);
  }
  return track;
}

MapPolygon polygon_from_json(const ordered_json& jp, const std::string& where) {
  MapPolygon poly;
  poly.id = field<int>(jp, "id", where);
  poly.ptype = static_cast<PolygonType>(field<int>(jp, "type", where));
  auto pts = field<ordered_json>(jp, "points", where);
  for (const auto& p : pts) {
    if (!p.is_array() || p.size() != 2)
      throw ValidationError(where + ": field 'points' entry is not an [x, y] pair");
    poly.points.emplace_back(p[0].get<double>(), p[1].get<double>());
  }
  return poly;
}

Scenario scenario_from_json(const ordered_json& j, const std::string& where, bool allow_label) {
  Scenario s;
  s.id = field<std::string>(j, "id", where);
  s.freq_hz = field<int>(j, "freq_hz", where);
  auto tracks = field<ordered_json>(j, "tracks", where);
  for (const auto& jt : tracks) s.tracks.push_back(track_from_json(jt, where, allow_label));
  auto map = field<ordered_json>(j, "map", where);
  for (const auto& jp : map) s.map.push_back(polygon_from_json(jp, where));
  return s;
}

}  // namespace detail

std::vector<Scenario> load_scenarios(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scenario file '" + path + "'");
  std::vector<Scenario> scenarios;
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
    Scenario s = detail::scenario_from_json(j, where, /*allow_label=*/false);
    validate(s);
    scenarios.push_back(std::move(s));
  }
  return scenarios;
}

void save_scenarios(const std::vector<Scenario>& scenarios, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  for (const auto& s : scenarios) out << detail::scenario_to_json(s).dump() << '\n';
  if (!out) throw IoError("write failed for '" + path + "'");
}

namespace {

constexpr double kRoadHalfLength = 80.0;
constexpr double kRoadHalfWidth = 3.5;
constexpr double kSidewalkOuter = 6.5;

MapPolygon rect(int id, PolygonType type, double x0, double x1, double y0, double y1) {
  MapPolygon p;
  p.id = id;
  p.ptype = type;
  p.points = {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}, {x0, y0}};
  return p;
}

std::vector<MapPolygon> build_map(Rng& rng, std::vector<double>& crosswalk_centers) {
  std::vector<MapPolygon> map;
  map.push_back(rect(1, PolygonType::kDrivableArea, -kRoadHalfLength, kRoadHalfLength,
                     -kRoadHalfWidth, kRoadHalfWidth));
  map.push_back(rect(2, PolygonType::kLaneSegment, -kRoadHalfLength, kRoadHalfLength,
                     -kRoadHalfWidth, 0.0));
  map.push_back(rect(3, PolygonType::kLaneSegment, -kRoadHalfLength, kRoadHalfLength, 0.0,
                     kRoadHalfWidth));
  map.push_back(rect(4, PolygonType::kFreeSpace, -kRoadHalfLength, kRoadHalfLength,
                     kRoadHalfWidth, kSidewalkOuter));
  map.push_back(rect(5, PolygonType::kFreeSpace, -kRoadHalfLength, kRoadHalfLength,
                     -kSidewalkOuter, -kRoadHalfWidth));
  int n_crosswalks = static_cast<int>(rng.uniform_int(1, 3));
  for (int i = 0; i < n_crosswalks; ++i) {
    double xc = 0.0;
    bool placed = false;
    for (int attempt = 0; attempt < 20 && !placed; ++attempt) {
      xc = rng.uniform(-40.0, 40.0);
      placed = true;
      for (double other : crosswalk_centers) {
        if (std::abs(xc - other) < 12.0) placed = false;
      }
    }
    if (!placed) continue;
    crosswalk_centers.push_back(xc);
    map.push_back(rect(10 + i, PolygonType::kCrosswalk, xc - 1.5, xc + 1.5, -4.5, 4.5));
  }
  return map;
}

Behavior sample_behavior(Rng& rng, const GeneratorConfig& cfg, bool pedestrian) {
  double w_cv = cfg.mix_constant_velocity;
  double w_stop = cfg.mix_stop_and_wait;
  double w_turn = pedestrian ? cfg.mix_crosswalk_turn : 0.0;
  double total = w_cv + w_stop + w_turn;
  if (total <= 0.0) return Behavior::kConstantVelocity;
  double u = rng.uniform() * total;
  if (u < w_cv) return Behavior::kConstantVelocity;
  if (u < w_cv + w_stop) return Behavior::kStopAndWait;
  return Behavior::kCrosswalkTurn;
}

const char* behavior_tag(Behavior b) {
  switch (b) {
    case Behavior::kConstantVelocity: return "cv";
    case Behavior::kStopAndWait: return "stop";
    case Behavior::kCrosswalkTurn: return "turn";
  }
  return "cv";
}

// Walks the agent forward with a per-step velocity callback.
template <typename VelocityFn>
std::vector<TrackState> roll_out(int length, double x0, double y0, VelocityFn velocity) {
  std::vector<TrackState> states;
  states.reserve(length);
  double x = x0, y = y0;
  for (int t = 0; t < length; ++t) {
    states.push_back({t, x, y});
    auto [vx, vy] = velocity(t, x, y);
    x += vx * kDt;
    y += vy * kDt;
  }
  return states;
}

std::vector<TrackState> make_trajectory(Rng& rng, const GeneratorConfig& cfg, Behavior behavior,
                                        bool pedestrian,
                                        const std::vector<double>& crosswalk_centers) {
  const int length = cfg.length_timesteps;
  const double duration = length * kDt;
  const double dir = rng.uniform() < 0.5 ? 1.0 : -1.0;

  if (!pedestrian) {
    // Vehicles drive in a lane center; the lane sign fixes the heading.
    double lane = rng.uniform() < 0.5 ? -1.75 : 1.75;
    double heading = lane < 0.0 ? 1.0 : -1.0;
    double speed = rng.uniform(4.0, 13.0);
    double x0 = -heading * speed * duration / 2.0 + rng.uniform(-5.0, 5.0);
    if (behavior == Behavior::kStopAndWait) {
      int t_stop = static_cast<int>(rng.uniform_int(20, std::max(21, length - 40)));
      int hold = static_cast<int>(rng.uniform_int(10, 30));
      return roll_out(length, x0, lane, [=](int t, double, double) {
        bool stopped = t >= t_stop && t < t_stop + hold;
        return std::pair{stopped ? 0.0 : heading * speed, 0.0};
      });
    }
    return roll_out(length, x0, lane,
                    [=](int, double, double) { return std::pair{heading * speed, 0.0}; });
  }

  const double side = rng.uniform() < 0.5 ? 1.0 : -1.0;
  const double y0 = side * rng.uniform(4.2, 6.0);
  const double speed = rng.uniform(0.8, 2.0);

  if (behavior == Behavior::kCrosswalkTurn && !crosswalk_centers.empty()) {
    // Walk along the sidewalk, turn onto the crosswalk when its center is
    // reached, cross the road, then resume along the far sidewalk.
    int turn_step = static_cast<int>(rng.uniform_int(30, 80));
    double xc = crosswalk_centers[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(crosswalk_centers.size()) - 1))];
    double x0 = xc - dir * speed * kDt * turn_step;
    double y_target = -y0;
    return roll_out(length, x0, y0, [=](int, double x, double y) {
      bool before_turn = dir > 0 ? x < xc : x > xc;
      if (before_turn) return std::pair{dir * speed, 0.0};
      bool crossing = side > 0 ? y > y_target : y < y_target;
      if (crossing) return std::pair{0.0, -side * speed};
      return std::pair{dir * speed, 0.0};
    });
  }

  double x0 = -dir * speed * duration / 2.0 + rng.uniform(-10.0, 10.0);
  if (behavior == Behavior::kStopAndWait) {
    int t_stop = static_cast<int>(rng.uniform_int(20, std::max(21, length - 40)));
    int hold = static_cast<int>(rng.uniform_int(10, 30));
    return roll_out(length, x0, y0, [=](int t, double, double) {
      bool stopped = t >= t_stop && t < t_stop + hold;
      return std::pair{stopped ? 0.0 : dir * speed, 0.0};
    });
  }
  return roll_out(length, x0, y0,
                  [=](int, double, double) { return std::pair{dir * speed, 0.0}; });
}

// Removes observations from a context track to mimic detection dropouts.
void apply_occlusion(Rng& rng, std::vector<TrackState>& states) {
  int length = static_cast<int>(states.size());
  if (length < 20) return;
  int kind = static_cast<int>(rng.uniform_int(0, 2));
  int cut_begin = 0, cut_end = 0;
  if (kind == 0) {  // late start
    cut_begin = 0;
    cut_end = static_cast<int>(rng.uniform_int(1, length / 3));
  } else if (kind == 1) {  // early end
    cut_begin = static_cast<int>(rng.uniform_int(2 * length / 3, length - 1));
    cut_end = length;
  } else {  // mid gap
    int gap = static_cast<int>(rng.uniform_int(5, 20));
    cut_begin = static_cast<int>(rng.uniform_int(length / 4, length / 2));
    cut_end = std::min(length, cut_begin + gap);
  }
  std::vector<TrackState> kept;
  for (const auto& st : states) {
    if (st.t < cut_begin || st.t >= cut_end) kept.push_back(st);
  }
  if (!kept.empty()) states = std::move(kept);
}

Scenario generate_one(const GeneratorConfig& cfg, std::uint64_t seed, int index) {
  Rng rng(seed + static_cast<std::uint64_t>(index));
  Scenario s;
  s.id = "syn" + std::to_string(seed) + "-" + std::to_string(index);
  s.freq_hz = 10;
  std::vector<double> crosswalk_centers;
  s.map = build_map(rng, crosswalk_centers);

  for (int a = 0; a < cfg.agents_per_scenario; ++a) {
    bool pedestrian = a == 0 ? true : rng.uniform() < cfg.pedestrian_fraction;
    Behavior behavior = sample_behavior(rng, cfg, pedestrian);
    Track track;
    track.agent_type = pedestrian ? AgentType::kPedestrian : AgentType::kVehicle;
    track.id = s.id + "-a" + std::to_string(a) + "_" + behavior_tag(behavior);
    track.states = make_trajectory(rng, cfg, behavior, pedestrian, crosswalk_centers);
    // Agent 0 stays fully observed so every scenario yields predictable windows.
    if (a != 0 && rng.uniform() < cfg.occlusion_fraction) apply_occlusion(rng, track.states);
    s.tracks.push_back(std::move(track));
  }
  validate(s);
  return s;
}

}  // namespace

std::vector<Scenario> generate_synthetic(const GeneratorConfig& cfg, std::uint64_t seed,
                                         int threads) {
  if (cfg.num_scenarios < 0) throw ValidationError("generator: num_scenarios must be >= 0");
  if (cfg.num_scenarios > 0 && cfg.length_timesteps <= 0)
    throw ValidationError("generator: length_timesteps must be positive");
  if (cfg.num_scenarios > 0 && cfg.agents_per_scenario <= 0)
    throw ValidationError("generator: agents_per_scenario must be positive");

  std::vector<Scenario> out(static_cast<std::size_t>(cfg.num_scenarios));
  auto work = [&](int begin, int end) {
    for (int i = begin; i < end; ++i) out[static_cast<std::size_t>(i)] = generate_one(cfg, seed, i);
  };
  if (threads <= 1 || cfg.num_scenarios < 2) {
    work(0, cfg.num_scenarios);
  } else {
    int n_workers = std::min(threads, cfg.num_scenarios);
    std::vector<std::thread> pool;
    int chunk = (cfg.num_scenarios + n_workers - 1) / n_workers;
    for (int w = 0; w < n_workers; ++w) {
      int begin = w * chunk;
      int end = std::min(cfg.num_scenarios, begin + chunk);
      if (begin < end) pool.emplace_back(work, begin, end);
    }
    for (auto& t : pool) t.join();
  }
  return out;
}

}  // namespace snapshot
