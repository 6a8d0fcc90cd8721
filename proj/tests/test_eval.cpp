#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "metric_reference.hpp"
#include "snapshot/eval.hpp"

using namespace snapshot;
using snapshot::testing::ade_reference;
using snapshot::testing::fde_reference;

namespace {

std::string temp_path(const char* name) {
  auto dir = std::filesystem::temp_directory_path() / "snapshot_eval_tests";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

std::vector<Example> cv_examples(std::uint64_t seed, int n_scenarios = 10) {
  GeneratorConfig cfg;
  cfg.num_scenarios = n_scenarios;
  cfg.agents_per_scenario = 4;
  cfg.mix_constant_velocity = 1.0;
  cfg.mix_stop_and_wait = 0.0;
  cfg.mix_crosswalk_turn = 0.0;
  auto scenarios = generate_synthetic(cfg, seed);
  std::vector<Sample> samples;
  for (const auto& s : scenarios) {
    for (auto& sample : slide_windows(s)) samples.push_back(std::move(sample));
  }
  return extract_examples(samples);
}

}  // namespace

TEST_CASE("ade and fde on exact predictions are zero") {
  std::vector<std::vector<double>> traj{{1, 2, 3, 4, 5, 6}};
  CHECK(ade(traj, traj) == 0.0);
  CHECK(fde(traj, traj) == 0.0);
}

TEST_CASE("uniform offsets produce the offset magnitude") {
  std::vector<std::vector<double>> gt(3, std::vector<double>(120, 0.0));
  auto pred = gt;
  for (auto& traj : pred) {
    for (std::size_t i = 1; i < traj.size(); i += 2) traj[i] += 2.0;  // (0, 2) everywhere
  }
  CHECK(ade(pred, gt) == doctest::Approx(2.0));
  CHECK(fde(pred, gt) == doctest::Approx(2.0));
}

TEST_CASE("final-point offset drives FDE but dilutes ADE by the horizon") {
  std::vector<std::vector<double>> gt(1, std::vector<double>(120, 0.0));
  auto pred = gt;
  pred[0][118] = 3.0;
  pred[0][119] = 4.0;
  CHECK(fde(pred, gt) == doctest::Approx(5.0));
  CHECK(ade(pred, gt) == doctest::Approx(5.0 / 60.0));
}

TEST_CASE("mixed two-agent fixture against a hand computation") {
  // agent 1: constant (1,0) offset -> mean 1; agent 2: exact -> 0; ADE = 0.5
  std::vector<std::vector<double>> gt(2, std::vector<double>(8, 0.0));
  auto pred = gt;
  for (std::size_t i = 0; i < 8; i += 2) pred[0][i] = 1.0;
  CHECK(ade(pred, gt) == doctest::Approx(0.5));
  CHECK(fde(pred, gt) == doctest::Approx(0.5));
}

TEST_CASE("ade/fde agree with the naive reference on random fixtures") {
  Rng rng(60);
  for (int round = 0; round < 100; ++round) {
    int agents = 1 + static_cast<int>(rng.uniform_int(0, 5));
    std::vector<std::vector<double>> pred, gt;
    for (int a = 0; a < agents; ++a) {
      std::vector<double> p(120), g(120);
      for (auto& v : p) v = rng.uniform(-10, 10);
      for (auto& v : g) v = rng.uniform(-10, 10);
      pred.push_back(std::move(p));
      gt.push_back(std::move(g));
    }
    CHECK(std::abs(ade(pred, gt) - ade_reference(pred, gt)) < 1e-9);
    CHECK(std::abs(fde(pred, gt) - fde_reference(pred, gt)) < 1e-9);
  }
}

TEST_CASE("metric shape mismatches are rejected") {
  std::vector<std::vector<double>> a{{1, 2, 3, 4}};
  std::vector<std::vector<double>> b{{1, 2}};
  CHECK_THROWS_AS(ade(a, b), ShapeError);
  CHECK_THROWS_AS(fde(a, {}), ShapeError);
}

TEST_CASE("cvm extrapolates the last displacement") {
  std::vector<TrackState> observed;
  for (int t = 0; t <= 9; ++t) observed.push_back({t, 0.1 * t - 0.9, 0.0});
  auto traj = cvm_predict(observed);
  REQUIRE(traj.size() == 120);
  CHECK(traj[0] == doctest::Approx(0.1));
  CHECK(traj[118] == doctest::Approx(6.0));
  CHECK(traj[119] == doctest::Approx(0.0));
}

TEST_CASE("cvm on a stationary agent predicts staying put") {
  std::vector<TrackState> observed{{8, 0, 0}, {9, 0, 0}};
  auto traj = cvm_predict(observed);
  for (double v : traj) CHECK(v == 0.0);
}

TEST_CASE("cvm with a single observation uses zero velocity") {
  std::vector<TrackState> observed{{9, 2.0, -1.0}};
  auto traj = cvm_predict(observed);
  CHECK(traj[0] == doctest::Approx(2.0));
  CHECK(traj[1] == doctest::Approx(-1.0));
  CHECK(traj[118] == doctest::Approx(2.0));
}

TEST_CASE("cvm rejects an empty observation") {
  CHECK_THROWS_AS(cvm_predict({}), ValidationError);
}

TEST_CASE("cvm bridges occlusion gaps using the actual time difference") {
  // displacement of 0.2 m over 2 steps = 1 m/s
  std::vector<TrackState> observed{{7, 0.0, 0.0}, {9, 0.2, 0.0}};
  auto traj = cvm_predict(observed);
  CHECK(traj[0] == doctest::Approx(0.3));
}

TEST_CASE("cvm is exact on generator tracks flagged constant-velocity") {
  auto examples = cv_examples(61);
  REQUIRE(!examples.empty());
  CvmPredictor cvm;
  auto report = evaluate(cvm, examples);
  CHECK(report.ade < 1e-6);
  CHECK(report.fde < 1e-6);
}

TEST_CASE("window-averaged cvm variant stays exact on constant velocity") {
  auto examples = cv_examples(62, 4);
  CvmPredictor cvm(true);
  CHECK(evaluate(cvm, examples).ade < 1e-6);
}

TEST_CASE("evaluate sweep carries exactly the 2..10 entries") {
  auto examples = cv_examples(63, 4);
  CvmPredictor cvm;
  auto report = evaluate(cvm, examples, kObservedSteps, true);
  REQUIRE(report.sweep.size() == 9);
  CHECK(report.sweep.begin()->first == 2);
  CHECK(report.sweep.rbegin()->first == 10);
  // the length-10 sweep entry equals the headline metrics exactly
  CHECK(report.sweep.at(10).first == report.ade);
  CHECK(report.sweep.at(10).second == report.fde);
}

TEST_CASE("snapshot predictor sweep at full length equals the plain evaluation") {
  auto examples = cv_examples(64, 3);
  auto model = init_model<float>(Hyperparams{}, 64);
  SnapshotPredictor predictor(model, 64);
  auto plain = evaluate(predictor, examples, kObservedSteps, false);
  auto sweep = evaluate(predictor, examples, kObservedSteps, true);
  CHECK(plain.ade == sweep.sweep.at(10).first);
  CHECK(plain.fde == sweep.sweep.at(10).second);
  CHECK(plain.n_agents == static_cast<std::int64_t>(examples.size()));
  for (const auto& [k, metrics] : sweep.sweep) {
    CAPTURE(k);
    CHECK(std::isfinite(metrics.first));
    CHECK(std::isfinite(metrics.second));
  }
}

TEST_CASE("evaluate is independent of the thread count") {
  auto examples = cv_examples(65, 6);
  CvmPredictor cvm;
  auto serial = evaluate(cvm, examples, kObservedSteps, true, 1);
  auto parallel = evaluate(cvm, examples, kObservedSteps, true, 4);
  CHECK(serial.ade == parallel.ade);
  CHECK(serial.fde == parallel.fde);
  CHECK(serial.sweep == parallel.sweep);
}

TEST_CASE("evaluate validates its inputs") {
  auto examples = cv_examples(66, 2);
  CvmPredictor cvm;
  CHECK_THROWS_AS(evaluate(cvm, {}), ValidationError);
  CHECK_THROWS_AS(evaluate(cvm, examples, 1), ValidationError);
  CHECK_THROWS_AS(evaluate(cvm, examples, 11), ValidationError);
}

TEST_CASE("latency bench validates batch sizes") {
  auto model = init_model<float>(Hyperparams{}, 67);
  CHECK_THROWS_AS(latency_bench(model, {}), ValidationError);
  CHECK_THROWS_AS(latency_bench(model, {0, 4}), ValidationError);
  CHECK_THROWS_AS(latency_bench(model, {4, 2}), ValidationError);
}

TEST_CASE("latency bench is stable within a session and amortizes batching") {
  auto model = init_model<float>(Hyperparams{}, 68);
  auto a = latency_bench(model, {1, 8}, 25, 5);
  auto b = latency_bench(model, {1, 8}, 25, 5);
  REQUIRE(a.entries.size() == 2);
  CHECK(a.entries[0].batch_size == 1);
  CHECK(a.entries[1].batch_size == 8);
  CHECK(a.entries[0].per_agent_ms == doctest::Approx(a.entries[0].mean_ms));
  CHECK(a.entries[1].per_agent_ms == doctest::Approx(a.entries[1].mean_ms / 8.0));
  // repeated sessions agree within 3 standard deviations
  double tol = 3.0 * std::max(a.entries[0].std_ms, b.entries[0].std_ms) + 1e-6;
  CHECK(std::abs(a.entries[0].mean_ms - b.entries[0].mean_ms) <= tol);
  // soft amortization check, report-only
  WARN(a.entries[1].per_agent_ms <= a.entries[0].per_agent_ms);
  CHECK(a.peak_rss_kb >= 0);
}

TEST_CASE("ablation of a single cell produces a single row") {
  GeneratorConfig cfg;
  cfg.num_scenarios = 6;
  cfg.agents_per_scenario = 4;
  auto scenarios = generate_synthetic(cfg, 69);
  std::vector<Sample> train_s, val_s, test_s;
  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    auto samples = slide_windows(scenarios[i]);
    auto& bucket = i < 4 ? train_s : (i == 4 ? val_s : test_s);
    for (auto& s : samples) bucket.push_back(std::move(s));
  }
  TrainConfig budget;
  budget.max_epochs = 1;
  budget.batch_size = 64;
  budget.lr = 1e-3;
  auto rows = run_ablation(train_s, val_s, test_s, {{0, NeighborCriteria::kNone}}, budget);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].cell.map_vectors == 0);
  CHECK(std::isfinite(rows[0].report.ade));
  auto csv = ablation_to_csv(rows);
  CHECK(csv.find("map_vectors,selection") == 0);
  CHECK(csv.find("none") != std::string::npos);
}

TEST_CASE("ablation with no neighbors leaves the neighbor rows zero") {
  GeneratorConfig cfg;
  cfg.num_scenarios = 2;
  cfg.agents_per_scenario = 5;
  auto scenarios = generate_synthetic(cfg, 70);
  std::vector<Sample> samples;
  for (const auto& s : scenarios) {
    for (auto& sample : slide_windows(s)) samples.push_back(std::move(sample));
  }
  FeatureConfig fc;
  fc.criteria = NeighborCriteria::kNone;
  fc.map_max_lines = 0;
  auto examples = extract_examples(samples, fc);
  REQUIRE(!examples.empty());
  for (const auto& ex : examples) {
    for (int r = 1; r < SocialMatrix::kRows; ++r) {
      for (int c = 0; c < SocialMatrix::kCols; ++c) CHECK(ex.social.at(r, c) == 0.0);
    }
    for (double v : ex.map.v) CHECK(v == 0.0);
  }
}

TEST_CASE("report serialization includes the sweep") {
  MetricReport report;
  report.ade = 0.5;
  report.fde = 1.25;
  report.n_agents = 42;
  report.sweep[2] = {0.9, 1.9};
  report.sweep[10] = {0.5, 1.25};
  auto json = report_to_json(report);
  CHECK(json.find("\"ade\": 0.5") != std::string::npos);
  CHECK(json.find("\"sweep\"") != std::string::npos);
  auto csv = report_to_csv(report);
  CHECK(csv.find("observed_steps,ade,fde,n_agents") == 0);
  CHECK(csv.find("full,0.5,1.25,42") != std::string::npos);
  CHECK(csv.find("\n2,0.9,1.9,42") != std::string::npos);
}

TEST_CASE("sweep svg is written with one polyline per series") {
  auto path = temp_path("sweep.svg");
  std::vector<SweepSeries> series{
      {"stage1", {{2, 1.4}, {6, 0.9}, {10, 0.6}}},
      {"stage2", {{2, 0.8}, {6, 0.7}, {10, 0.6}}},
  };
  write_sweep_svg(path, series);
  std::ifstream in(path);
  std::string content(std::istreambuf_iterator<char>(in), {});
  CHECK(content.find("<svg") != std::string::npos);
  CHECK(std::count(content.begin(), content.end(), '\n') > 5);
  CHECK(content.find("stage1") != std::string::npos);
  CHECK(content.find("stage2") != std::string::npos);
  CHECK(content.find("polyline") != std::string::npos);
  CHECK(content.find("observed timesteps") != std::string::npos);
}

TEST_CASE("latency report serialization") {
  LatencyReport report;
  report.entries.push_back({1, 3.5, 0.2, 3.5, 100});
  report.entries.push_back({16, 20.0, 0.5, 1.25, 100});
  auto json = latency_to_json(report);
  CHECK(json.find("\"batch_size\": 1") != std::string::npos);
  auto csv = latency_to_csv(report);
  CHECK(csv.find("batch_size,mean_ms,std_ms,per_agent_ms,reps") == 0);
  CHECK(csv.find("\n16,") != std::string::npos);
}
