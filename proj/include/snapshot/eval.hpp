#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "snapshot/model.hpp"
#include "snapshot/training.hpp"

namespace snapshot {

struct MetricReport {
  double ade = 0.0;
  double fde = 0.0;
  std::int64_t n_agents = 0;
  // Observed-length breakdown (2..10 steps), filled by the full sweep.
  std::map<int, std::pair<double, double>> sweep;
};

// Exact average displacement error over agents and timesteps; each
// trajectory is a flattened T x 2 row-major vector. No smoothing.
double ade(const std::vector<std::vector<double>>& pred,
           const std::vector<std::vector<double>>& gt);
// Error at the final timestep only.
double fde(const std::vector<std::vector<double>>& pred,
           const std::vector<std::vector<double>>& gt);

// Constant velocity baseline: extrapolates the last observed displacement at
// 10 Hz from the most recent observed position (the focal-frame origin).
// window_average derives the velocity from the mean step displacement instead.
std::vector<double> cvm_predict(const std::vector<TrackState>& observed, int horizon = kHorizonSteps,
                                bool window_average = false);

class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual std::string name() const = 0;
  // keep_steps in [2, 10]: observation truncated to the most recent steps,
  // mirroring dropout_history. Returns (N, 60, 2) row-major.
  virtual std::vector<double> predict(const std::vector<Example>& batch, int keep_steps) const = 0;
};

class SnapshotPredictor : public Predictor {
 public:
  explicit SnapshotPredictor(const Model& model, int batch_size = 256)
      : model_(model), batch_size_(batch_size) {}
  std::string name() const override { return "snapshot"; }
  std::vector<double> predict(const std::vector<Example>& batch, int keep_steps) const override;

 private:
  const Model& model_;
  int batch_size_;
};

class CvmPredictor : public Predictor {
 public:
  explicit CvmPredictor(bool window_average = false) : window_average_(window_average) {}
  std::string name() const override { return window_average_ ? "cvm-avg" : "cvm"; }
  std::vector<double> predict(const std::vector<Example>& batch, int keep_steps) const override;

 private:
  bool window_average_;
};

// Aggregates Eq.2/Eq.3 over all examples at the requested observation
// length; with full_sweep also fills the 2..10 breakdown. Parallelizes over
// deterministic example chunks.
MetricReport evaluate(const Predictor& predictor, const std::vector<Example>& examples,
                      int observed_steps = kObservedSteps, bool full_sweep = false,
                      int threads = 1);

struct AblationCell {
  int map_vectors = 100;
  NeighborCriteria criteria = NeighborCriteria::kL2;
};

struct AblationRow {
  AblationCell cell;
  std::int64_t parameter_count = 0;
  MetricReport report;
};

// Trains one model per cell on the given budget and evaluates it on the test
// samples. Features are re-extracted per cell.
std::vector<AblationRow> run_ablation(const std::vector<Sample>& train_samples,
                                      const std::vector<Sample>& val_samples,
                                      const std::vector<Sample>& test_samples,
                                      const std::vector<AblationCell>& cells,
                                      const TrainConfig& budget);

struct LatencyEntry {
  int batch_size = 0;
  double mean_ms = 0.0;
  double std_ms = 0.0;
  double per_agent_ms = 0.0;
  int reps = 0;
};

struct LatencyReport {
  std::vector<LatencyEntry> entries;  // batch sizes strictly increasing
  int warmup = 10;
  int threads = 1;
  long peak_rss_kb = 0;  // 0 when the platform does not expose it
};

// Wall-clock inference benchmark over precomputed features.
LatencyReport latency_bench(const Model& model, const std::vector<int>& batch_sizes,
                            int reps = 100, int warmup = 10);

// Report serialization.
std::string report_to_json(const MetricReport& report);
std::string report_to_csv(const MetricReport& report);
std::string ablation_to_csv(const std::vector<AblationRow>& rows);
std::string latency_to_json(const LatencyReport& report);
std::string latency_to_csv(const LatencyReport& report);

struct SweepSeries {
  std::string label;
  std::vector<std::pair<int, double>> points;  // (observed steps, ade)
};

// ADE vs observed timesteps, one polyline per series.
void write_sweep_svg(const std::string& path, const std::vector<SweepSeries>& series);

}  // namespace snapshot
