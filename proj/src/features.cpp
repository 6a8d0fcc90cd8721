#include "snapshot/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <thread>
#include <tuple>

namespace snapshot {

NeighborCriteria parse_criteria(const std::string& name) {
  if (name == "l2" || name == "L2") return NeighborCriteria::kL2;
  if (name == "risk" || name == "RISK") return NeighborCriteria::kRisk;
  if (name == "none" || name == "NONE") return NeighborCriteria::kNone;
  throw ValidationError("unknown neighbor selection criteria '" + name + "'");
}

const char* criteria_name(NeighborCriteria c) {
  switch (c) {
    case NeighborCriteria::kL2: return "l2";
    case NeighborCriteria::kRisk: return "risk";
    case NeighborCriteria::kNone: return "none";
  }
  return "l2";
}

namespace {

const Track& find_track(const Sample& sample, const std::string& id) {
  for (const auto& track : sample.tracks) {
    if (track.id == id) return track;
  }
  throw ValidationError("sample '" + sample.id + "': no track with id '" + id + "'");
}

// Velocity from the last displacement at or before local t=9; the step gap
// is honored so occluded tracks do not get inflated speeds.
std::array<double, 2> velocity_at_current(const Track& track) {
  const TrackState* last = nullptr;
  const TrackState* prev = nullptr;
  for (const auto& st : track.states) {
    if (st.t > kObservedSteps - 1) break;
    prev = last;
    last = &st;
  }
  if (last == nullptr || prev == nullptr) return {0.0, 0.0};
  double dt = (last->t - prev->t) * kDt;
  return {(last->x - prev->x) / dt, (last->y - prev->y) / dt};
}

}  // namespace

FocalFrame focal_frame(const Sample& sample, const std::string& focal_id) {
  const Track& focal = find_track(sample, focal_id);
  const TrackState* now = focal.state_at(kObservedSteps - 1);
  const TrackState* before = focal.state_at(kObservedSteps - 2);
  if (now == nullptr || before == nullptr)
    throw ValidationError("focal track '" + focal_id + "' lacks states at local t=8 and t=9");

  double hx = now->x - before->x;
  double hy = now->y - before->y;
  if (std::hypot(hx, hy) < 1e-6) {
    // Degenerate heading: fall back to the earliest->latest displacement.
    const TrackState& first = focal.states.front();
    hx = now->x - first.x;
    hy = now->y - first.y;
  }
  FocalFrame frame;
  frame.origin_x = now->x;
  frame.origin_y = now->y;
  frame.rotation = std::hypot(hx, hy) < 1e-6 ? 0.0 : normalize_angle(-std::atan2(hy, hx));
  return frame;
}

std::array<double, 2> ttca_dca(double prx, double pry, double vrx, double vry) {
  double v2 = vrx * vrx + vry * vry;
  if (std::sqrt(v2) < 1e-6) return {0.0, std::hypot(prx, pry)};
  double ttca = std::max(0.0, -(prx * vrx + pry * vry) / v2);
  double dca = std::hypot(prx + vrx * ttca, pry + vry * ttca);
  return {ttca, dca};
}

double bearing_rate(double prx, double pry, double vrx, double vry) {
  double r2 = prx * prx + pry * pry;
  if (std::sqrt(r2) < 1e-6) return 0.0;
  return (prx * vry - pry * vrx) / r2;
}

double collision_risk(double ttca, double dca, double alpha_dot, const RiskParams& params) {
  double a = ttca / params.delta_ttca;
  double b = dca / params.delta_dca;
  double c = alpha_dot / params.delta_alpha_dot;
  return std::exp(-a * a - b * b - c * c);
}

std::vector<std::string> select_neighbors(const Sample& sample, const std::string& focal_id,
                                          NeighborCriteria criteria, int k,
                                          const RiskParams& params) {
  if (criteria == NeighborCriteria::kNone) return {};
  const Track& focal = find_track(sample, focal_id);
  const TrackState* focal_now = focal.state_at(kObservedSteps - 1);
  if (focal_now == nullptr)
    throw ValidationError("focal track '" + focal_id + "' has no state at local t=9");
  auto focal_vel = velocity_at_current(focal);

  struct Candidate {
    double key1;  // primary sort key
    double dist;
    const std::string* id;
  };
  std::vector<Candidate> candidates;
  for (const auto& track : sample.tracks) {
    if (track.id == focal_id) continue;
    const TrackState* now = track.state_at(kObservedSteps - 1);
    if (now == nullptr) continue;
    double dist = std::hypot(now->x - focal_now->x, now->y - focal_now->y);
    if (criteria == NeighborCriteria::kL2) {
      candidates.push_back({dist, dist, &track.id});
    } else {
      auto vel = velocity_at_current(track);
      double prx = now->x - focal_now->x;
      double pry = now->y - focal_now->y;
      double vrx = vel[0] - focal_vel[0];
      double vry = vel[1] - focal_vel[1];
      auto [ttca, dca] = ttca_dca(prx, pry, vrx, vry);
      double adot = bearing_rate(prx, pry, vrx, vry);
      candidates.push_back({-collision_risk(ttca, dca, adot, params), dist, &track.id});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    return std::tie(a.key1, a.dist, *a.id) < std::tie(b.key1, b.dist, *b.id);
  });
  if (static_cast<int>(candidates.size()) > k) candidates.resize(static_cast<std::size_t>(k));
  std::vector<std::string> ids;
  ids.reserve(candidates.size());
  for (const auto& c : candidates) ids.push_back(*c.id);
  return ids;
}

namespace {

// Fills one social row: positions from t=9 down to t=0, frame-transformed;
// missing timesteps stay zero.
void fill_row(SocialMatrix& m, int row, const Track& track, const FocalFrame& frame) {
  m.at(row, 0) = static_cast<double>(track.agent_type);
  for (int j = 0; j < kObservedSteps; ++j) {
    int t = kObservedSteps - 1 - j;
    const TrackState* st = track.state_at(t);
    if (st == nullptr) continue;
    auto [x, y] = frame.apply(st->x, st->y);
    m.at(row, 1 + 2 * j) = x;
    m.at(row, 2 + 2 * j) = y;
  }
}

}  // namespace

SocialMatrix social_matrix(const Sample& sample, const std::string& focal_id,
                           const FocalFrame& frame, NeighborCriteria criteria,
                           const RiskParams& params) {
  SocialMatrix m;
  const Track& focal = find_track(sample, focal_id);
  fill_row(m, 0, focal, frame);
  // The focal current position is the frame origin by construction.
  m.at(0, 1) = 0.0;
  m.at(0, 2) = 0.0;
  auto neighbors = select_neighbors(sample, focal_id, criteria, SocialMatrix::kNeighbors, params);
  for (std::size_t i = 0; i < neighbors.size(); ++i) {
    fill_row(m, static_cast<int>(i) + 1, find_track(sample, neighbors[i]), frame);
  }
  return m;
}

double point_segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  double abx = bx - ax;
  double aby = by - ay;
  double len2 = abx * abx + aby * aby;
  if (len2 < 1e-18) return std::hypot(px - ax, py - ay);
  double s = ((px - ax) * abx + (py - ay) * aby) / len2;
  s = std::clamp(s, 0.0, 1.0);
  return std::hypot(px - (ax + s * abx), py - (ay + s * aby));
}

MapMatrix map_matrix(const std::vector<MapPolygon>& map, const FocalFrame& frame, double radius,
                     int max_lines, int rows) {
  if (max_lines < 0) throw ValidationError("map_matrix: max_lines must be >= 0");
  if (rows < 0) rows = std::max(100, max_lines);
  if (rows < max_lines) throw ValidationError("map_matrix: rows must be >= max_lines");

  struct Segment {
    double dist;
    std::int64_t rank;  // distance quantized to 1 um for stable ordering
    int polygon_id;
    int index;
    int type;
    double ax, ay, bx, by;
  };
  std::vector<Segment> segments;
  for (const auto& poly : map) {
    for (std::size_t i = 0; i + 1 < poly.points.size(); ++i) {
      auto [ax, ay] = poly.points[i];
      auto [bx, by] = poly.points[i + 1];
      double d = point_segment_distance(frame.origin_x, frame.origin_y, ax, ay, bx, by);
      if (d <= radius)
        segments.push_back({d, static_cast<std::int64_t>(std::llround(d * 1e6)), poly.id,
                            static_cast<int>(i), static_cast<int>(poly.ptype), ax, ay, bx, by});
    }
  }
  // Coincident boundary segments of adjacent polygons tie in distance; the
  // quantized rank keeps their order stable under rigid-motion jitter.
  std::sort(segments.begin(), segments.end(), [](const Segment& a, const Segment& b) {
    return std::tie(a.rank, a.polygon_id, a.index) < std::tie(b.rank, b.polygon_id, b.index);
  });
  if (static_cast<int>(segments.size()) > max_lines)
    segments.resize(static_cast<std::size_t>(max_lines));

  MapMatrix m(rows);
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const Segment& seg = segments[i];
    int r = static_cast<int>(i);
    auto [sx, sy] = frame.apply(seg.ax, seg.ay);
    auto [ex, ey] = frame.apply(seg.bx, seg.by);
    m.at(r, 0) = seg.type;
    m.at(r, 1) = seg.polygon_id;
    m.at(r, 2) = sx;
    m.at(r, 3) = sy;
    m.at(r, 4) = ex;
    m.at(r, 5) = ey;
  }
  return m;
}

// The dump is fixed to the standard 8x21 + 100x6 layout: "SNPF", u32
// version, then the two matrices as row-major 64-bit floats.
void dump_features(const std::string& path, const SocialMatrix& social, const MapMatrix& map) {
  if (map.rows != 100)
    throw ValidationError("feature dump supports only the standard 100-row map matrix, got " +
                          std::to_string(map.rows) + " rows");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write("SNPF", 4);
  std::uint32_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  out.write(reinterpret_cast<const char*>(social.v.data()),
            static_cast<std::streamsize>(social.v.size() * sizeof(double)));
  out.write(reinterpret_cast<const char*>(map.v.data()),
            static_cast<std::streamsize>(map.v.size() * sizeof(double)));
  if (!out) throw IoError("write failed for '" + path + "'");
}

namespace {

void extract_into(const Sample& sample, const FeatureConfig& config,
                  std::vector<Example>& out) {
  for (const auto& track : sample.tracks) {
    if (track.label != TrackLabel::kScored) continue;
    Example ex;
    ex.sample_id = sample.id;
    ex.focal_id = track.id;
    FocalFrame frame = focal_frame(sample, track.id);
    ex.social = social_matrix(sample, track.id, frame, config.criteria, config.risk);
    ex.map = sample.map ? map_matrix(*sample.map, frame, config.map_radius,
                                     config.map_max_lines, config.map_rows)
                        : MapMatrix(config.map_rows);
    ex.future.resize(static_cast<std::size_t>(kHorizonSteps) * 2);
    for (int t = kObservedSteps; t < kWindowSteps; ++t) {
      const TrackState* st = track.state_at(t);
      auto [x, y] = frame.apply(st->x, st->y);
      ex.future[static_cast<std::size_t>(t - kObservedSteps) * 2] = x;
      ex.future[static_cast<std::size_t>(t - kObservedSteps) * 2 + 1] = y;
    }
    for (const auto& st : track.states) {
      if (st.t >= kObservedSteps) break;
      auto [x, y] = frame.apply(st.x, st.y);
      ex.observed.push_back({st.t, x, y});
    }
    out.push_back(std::move(ex));
  }
}

}  // namespace

std::vector<Example> extract_examples(const std::vector<Sample>& samples,
                                      const FeatureConfig& config, int threads) {
  std::vector<std::vector<Example>> per_sample(samples.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) extract_into(samples[i], config, per_sample[i]);
  };
  if (threads <= 1 || samples.size() < 2) {
    work(0, samples.size());
  } else {
    std::size_t n_workers = std::min<std::size_t>(static_cast<std::size_t>(threads), samples.size());
    std::size_t chunk = (samples.size() + n_workers - 1) / n_workers;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) {
      std::size_t begin = w * chunk;
      std::size_t end = std::min(samples.size(), begin + chunk);
      if (begin < end) pool.emplace_back(work, begin, end);
    }
    for (auto& t : pool) t.join();
  }
  std::vector<Example> out;
  for (auto& chunk : per_sample) {
    for (auto& ex : chunk) out.push_back(std::move(ex));
  }
  return out;
}

std::pair<SocialMatrix, MapMatrix> read_features(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open feature dump '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "SNPF", 4) != 0)
    throw ValidationError("'" + path + "' is not a feature dump (bad magic)");
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!in || version != 1)
    throw ValidationError("'" + path + "': unsupported feature dump version");
  SocialMatrix social;
  MapMatrix map(100);
  in.read(reinterpret_cast<char*>(social.v.data()),
          static_cast<std::streamsize>(social.v.size() * sizeof(double)));
  in.read(reinterpret_cast<char*>(map.v.data()),
          static_cast<std::streamsize>(map.v.size() * sizeof(double)));
  if (!in) throw ValidationError("'" + path + "': truncated feature dump");
  return {social, map};
}

}  // namespace snapshot
