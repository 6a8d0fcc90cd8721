#pragma once

#include <array>
#include <string>
#include <vector>

#include "snapshot/benchmark.hpp"

namespace snapshot {

// Agent-centric frame: origin at the focal agent's position at local t=9,
// rotated so the focal heading points along +x.
struct FocalFrame {
  double origin_x = 0.0;
  double origin_y = 0.0;
  double rotation = 0.0;  // in (-pi, pi]

  std::array<double, 2> apply(double x, double y) const {
    double dx = x - origin_x;
    double dy = y - origin_y;
    double c = std::cos(rotation);
    double s = std::sin(rotation);
    return {c * dx - s * dy, s * dx + c * dy};
  }
};

// 8 x 21 social input. Row 0 is the focal agent, rows 1..7 the selected
// neighbors. Per row: [type, x9, y9, x8, y8, ..., x0, y0] in the focal
// frame, most recent position first; absent data is zero-filled with
// type = PADDING.
struct SocialMatrix {
  static constexpr int kRows = 8;
  static constexpr int kCols = 21;
  static constexpr int kNeighbors = kRows - 1;

  std::array<double, kRows * kCols> v{};

  double& at(int r, int c) { return v[static_cast<std::size_t>(r * kCols + c)]; }
  double at(int r, int c) const { return v[static_cast<std::size_t>(r * kCols + c)]; }
};

// rows x 6 map input, rows ordered by ascending polyline distance to the
// focal agent. Per row: [polygon type, polygon id, x_start, y_start, x_end,
// y_end] in the focal frame; unused rows zero-filled.
struct MapMatrix {
  static constexpr int kCols = 6;

  int rows = 100;
  std::vector<double> v;

  explicit MapMatrix(int n_rows = 100)
      : rows(n_rows), v(static_cast<std::size_t>(n_rows) * kCols, 0.0) {}

  double& at(int r, int c) { return v[static_cast<std::size_t>(r * kCols + c)]; }
  double at(int r, int c) const { return v[static_cast<std::size_t>(r * kCols + c)]; }
};

// Interaction-risk scales; values from the crowd-simulation lineage.
struct RiskParams {
  double delta_ttca = 1.8;       // s
  double delta_dca = 0.3;        // m
  double delta_alpha_dot = 2.0;  // rad/s
};

enum class NeighborCriteria { kL2, kRisk, kNone };

NeighborCriteria parse_criteria(const std::string& name);  // "l2" | "risk" | "none"
const char* criteria_name(NeighborCriteria c);

// Frame of the SCORED focal track: origin at t=9, heading from the t=8 -> 9
// displacement, falling back to earliest->latest, then to rotation 0.
FocalFrame focal_frame(const Sample& sample, const std::string& focal_id);

// Time- and distance-to-closest-approach under constant relative velocity.
std::array<double, 2> ttca_dca(double prx, double pry, double vrx, double vry);

// Analytic derivative of the atan2 bearing angle.
double bearing_rate(double prx, double pry, double vrx, double vry);

// exp(-(ttca/d1)^2 - (dca/d2)^2 - (adot/d3)^2), in (0, 1].
double collision_risk(double ttca, double dca, double alpha_dot, const RiskParams& params = {});

// Orders the non-focal tracks present at local t=9 by the given criteria and
// returns at most k ids.
std::vector<std::string> select_neighbors(const Sample& sample, const std::string& focal_id,
                                          NeighborCriteria criteria, int k = SocialMatrix::kNeighbors,
                                          const RiskParams& params = {});

SocialMatrix social_matrix(const Sample& sample, const std::string& focal_id,
                           const FocalFrame& frame,
                           NeighborCriteria criteria = NeighborCriteria::kL2,
                           const RiskParams& params = {});

// Decomposes polygons into segments, keeps those within `radius` of the
// focal origin, sorts ascending by distance (ties: polygon id, segment
// index), writes at most max_lines rows. `rows` is the matrix capacity; -1
// means max(100, max_lines).
MapMatrix map_matrix(const std::vector<MapPolygon>& map, const FocalFrame& frame,
                     double radius = 20.0, int max_lines = 100, int rows = -1);

// Distance from point (px, py) to the segment (ax, ay)-(bx, by).
double point_segment_distance(double px, double py, double ax, double ay, double bx, double by);

// Debug dump: "SNPF" magic, u32 version, then the 8x21 and 100x6 matrices as
// row-major 64-bit floats.
void dump_features(const std::string& path, const SocialMatrix& social, const MapMatrix& map);
std::pair<SocialMatrix, MapMatrix> read_features(const std::string& path);

struct FeatureConfig {
  NeighborCriteria criteria = NeighborCriteria::kL2;
  double map_radius = 20.0;
  int map_max_lines = 100;
  int map_rows = 100;
  RiskParams risk;
};

// One training/evaluation unit: features plus focal-frame ground truth.
struct Example {
  SocialMatrix social;
  MapMatrix map;
  std::vector<double> future;        // 60 x 2 row-major, focal frame
  std::vector<TrackState> observed;  // focal states at local t <= 9, focal frame
  std::string sample_id;
  std::string focal_id;
};

// One Example per SCORED pedestrian per sample, in sample order. Feature
// extraction shards across threads; output order is independent of it.
std::vector<Example> extract_examples(const std::vector<Sample>& samples,
                                      const FeatureConfig& config = {}, int threads = 1);

}  // namespace snapshot
