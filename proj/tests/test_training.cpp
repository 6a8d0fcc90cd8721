#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "helpers.hpp"
#include "snapshot/eval.hpp"
#include "snapshot/training.hpp"

using namespace snapshot;
using ad::Tape;
using ad::Tensor;

namespace {

std::string temp_path(const char* name) {
  auto dir = std::filesystem::temp_directory_path() / "snapshot_training_tests";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

std::vector<Example> synthetic_examples(int n_scenarios, std::uint64_t seed, int threads = 1) {
  GeneratorConfig cfg;
  cfg.num_scenarios = n_scenarios;
  cfg.agents_per_scenario = 5;
  auto scenarios = generate_synthetic(cfg, seed);
  std::vector<Sample> samples;
  for (const auto& s : scenarios) {
    for (auto& sample : slide_windows(s)) samples.push_back(std::move(sample));
  }
  return extract_examples(samples, {}, threads);
}

}  // namespace

TEST_CASE("ade_loss on exact predictions is only the smoothing floor") {
  auto pred = Tensor<double>::from({1, 3, 2}, {1, 2, 3, 4, 5, 6});
  auto gt = Tensor<double>::from({1, 3, 2}, {1, 2, 3, 4, 5, 6});
  Tape<double> tape;
  CHECK(ade_loss(tape, pred, gt).item() <= 1e-6);  // sqrt(1e-12) exactly
}

TEST_CASE("ade_loss of a uniform unit offset is one") {
  std::vector<double> p(2 * 60 * 2, 0.0);
  std::vector<double> g(2 * 60 * 2, 0.0);
  for (size_t i = 0; i < p.size(); i += 2) p[i] += 1.0;  // (1, 0) offset everywhere
  Tape<double> tape;
  auto loss = ade_loss(tape, Tensor<double>::from({2, 60, 2}, std::move(p)),
                       Tensor<double>::from({2, 60, 2}, std::move(g)));
  CHECK(loss.item() == doctest::Approx(1.0));
}

TEST_CASE("ade_loss two-point toy averages the distances") {
  // offsets (0.3, 0.4) and (0.6, 0.8) -> distances 0.5 and 1.0 -> mean 0.75
  auto pred = Tensor<double>::from({1, 2, 2}, {0.3, 0.4, 0.6, 0.8});
  auto gt = Tensor<double>::zeros({1, 2, 2});
  Tape<double> tape;
  CHECK(ade_loss(tape, pred, gt).item() == doctest::Approx(0.75));
}

TEST_CASE("ade_loss gradient matches finite differences on a 4-sample fixture") {
  Rng rng(41);
  std::vector<double> p(4 * 60 * 2), g(4 * 60 * 2);
  for (auto& v : p) v = rng.uniform(-3, 3);
  for (auto& v : g) v = rng.uniform(-3, 3);
  auto pred = Tensor<double>::from({4, 60, 2}, std::move(p), true);
  auto gt = Tensor<double>::from({4, 60, 2}, std::move(g));
  auto f = [&](Tape<double>& tape, const Tensor<double>& x) { return ade_loss(tape, x, gt); };
  CHECK(ad::grad_check(f, pred, 1e-3, 200) < 1e-4);
}

TEST_CASE("adam first step moves by about the learning rate") {
  ParamStore<double> params;
  auto p = params.add("w", {1});
  p.value()[0] = 1.0;
  p.grad()[0] = 1.0;
  AdamOptimizer<double> adam(params);
  adam.step(params, 1e-4, 0.0);
  CHECK(1.0 - p.value()[0] == doctest::Approx(1e-4).epsilon(1e-3));
}

TEST_CASE("adam with zero gradient and zero decay is a no-op") {
  ParamStore<double> params;
  auto p = params.add("w", {3});
  p.value() = {1.0, -2.0, 3.0};
  AdamOptimizer<double> adam(params);
  adam.step(params, 1e-2, 0.0);
  CHECK(p.value() == std::vector<double>{1.0, -2.0, 3.0});
}

TEST_CASE("adam converges on a 1-d quadratic bowl") {
  ParamStore<double> params;
  auto p = params.add("x", {1});
  p.value()[0] = 1.0;
  AdamOptimizer<double> adam(params);
  for (int i = 0; i < 500; ++i) {
    p.grad()[0] = 2.0 * p.value()[0];  // d/dx x^2
    adam.step(params, 5e-3, 0.0);
  }
  CHECK(std::abs(p.value()[0]) < 1e-2);
}

TEST_CASE("decoupled weight decay shrinks parameters before the moment update") {
  ParamStore<double> params;
  auto p = params.add("w", {1});
  p.value()[0] = 2.0;
  p.grad()[0] = 0.0;
  AdamOptimizer<double> adam(params);
  adam.step(params, 0.1, 0.5);  // p *= (1 - 0.05)
  CHECK(p.value()[0] == doctest::Approx(1.9));
}

TEST_CASE("adam demands populated gradients") {
  ParamStore<double> params;
  params.items.emplace_back("w", Tensor<double>::zeros({2}, false));
  AdamOptimizer<double> adam(params);
  CHECK_THROWS_AS(adam.step(params, 1e-3, 0.0), ValidationError);
}

TEST_CASE("plateau scheduler holds on improvement, halves on stagnation") {
  CHECK(plateau_multiplier({1.0, 0.9, 0.8, 0.7, 0.6, 0.5}) == doctest::Approx(1.0));
  // flat history of patience + 1 entries halves once
  CHECK(plateau_multiplier({1.0, 1.0, 1.0, 1.0, 1.0, 1.0}) == doctest::Approx(0.5));
  // an improvement of exactly min_delta over the best does not count
  double at_delta = 1.0 - 1e-4;
  CHECK(plateau_multiplier({1.0, at_delta, at_delta, at_delta, at_delta, at_delta}) ==
        doctest::Approx(0.5));
  double past_delta = 1.0 - 2e-4;
  CHECK(plateau_multiplier({1.0, past_delta, past_delta, past_delta, past_delta, past_delta}) ==
        doctest::Approx(1.0));
}

TEST_CASE("plateau scheduler floors at min_lr and leaves lr zero alone") {
  PlateauScheduler sched(2e-6, 0.5, 1, 1e-4, 1e-6);
  sched.observe(1.0);
  sched.observe(1.0);  // halve: 1e-6
  sched.observe(1.0);  // would halve below the floor
  sched.observe(1.0);
  CHECK(sched.lr() == doctest::Approx(1e-6));
  PlateauScheduler zero(0.0, 0.5, 1, 1e-4, 1e-6);
  zero.observe(1.0);
  zero.observe(1.0);
  CHECK(zero.lr() == 0.0);
}

TEST_CASE("dropout_history keeps the most recent steps and the type column") {
  Rng rng(42);
  SocialMatrix m;
  for (int r = 0; r < 8; ++r) {
    m.at(r, 0) = 1.0;
    for (int c = 1; c < 21; ++c) m.at(r, c) = rng.uniform(1.0, 2.0);
  }
  SUBCASE("keep 10 is the identity") {
    auto out = dropout_history(m, 10);
    CHECK(out.v == m.v);
  }
  SUBCASE("keep 2 zeroes the position pairs for t=0..7") {
    auto out = dropout_history(m, 2);
    for (int r = 0; r < 8; ++r) {
      CHECK(out.at(r, 0) == 1.0);
      for (int j = 0; j < 2; ++j) {
        CHECK(out.at(r, 1 + 2 * j) == m.at(r, 1 + 2 * j));
        CHECK(out.at(r, 2 + 2 * j) == m.at(r, 2 + 2 * j));
      }
      for (int j = 2; j < 10; ++j) {
        CHECK(out.at(r, 1 + 2 * j) == 0.0);
        CHECK(out.at(r, 2 + 2 * j) == 0.0);
      }
    }
  }
  SUBCASE("out-of-range keep counts are rejected") {
    CHECK_THROWS_AS(dropout_history(m, 1), ValidationError);
    CHECK_THROWS_AS(dropout_history(m, 11), ValidationError);
  }
}

TEST_CASE("equal seeds draw equal keep_steps sequences") {
  Rng a(7), b(7);
  for (int i = 0; i < 50; ++i) CHECK(a.uniform_int(2, 10) == b.uniform_int(2, 10));
}

TEST_CASE("add_noise: zero std is the identity, padding stays zero") {
  Rng rng(43);
  std::vector<SocialMatrix> batch(3);
  for (auto& m : batch) {
    for (int r = 0; r < 3; ++r) {
      m.at(r, 0) = 1.0;
      for (int c = 1; c < 21; ++c) m.at(r, c) = rng.uniform(-5, 5);
    }
  }
  auto copy = batch;
  Rng noise_rng(1);
  add_noise(batch, 0.0, noise_rng);
  for (size_t i = 0; i < batch.size(); ++i) CHECK(batch[i].v == copy[i].v);

  add_noise(batch, 0.05, noise_rng);
  for (size_t i = 0; i < batch.size(); ++i) {
    for (int r = 3; r < 8; ++r) {
      for (int c = 0; c < 21; ++c) CHECK(batch[i].at(r, c) == 0.0);
    }
    // the frame origin entry stays exact
    CHECK(batch[i].at(0, 1) == copy[i].at(0, 1));
    CHECK(batch[i].at(0, 2) == copy[i].at(0, 2));
  }
  CHECK_THROWS_AS(add_noise(batch, -0.1, noise_rng), ValidationError);
}

TEST_CASE("add_noise sample deviation matches the configured std") {
  Rng rng(44);
  const int n = 700;
  std::vector<SocialMatrix> batch(n);
  for (auto& m : batch) {
    for (int r = 0; r < 8; ++r) {
      m.at(r, 0) = 1.0;
      for (int c = 1; c < 21; ++c) m.at(r, c) = rng.uniform(1.0, 9.0);
    }
  }
  auto original = batch;
  Rng noise_rng(45);
  add_noise(batch, 0.05, noise_rng);
  double sum = 0.0, sum2 = 0.0;
  std::int64_t count = 0;
  for (int i = 0; i < n; ++i) {
    for (int r = 0; r < 8; ++r) {
      for (int j = 0; j < 10; ++j) {
        if (r == 0 && j == 0) continue;
        for (int c : {1 + 2 * j, 2 + 2 * j}) {
          double d = batch[i].at(r, c) - original[i].at(r, c);
          sum += d;
          sum2 += d * d;
          ++count;
        }
      }
    }
  }
  double mean = sum / count;
  double std_dev = std::sqrt(sum2 / count - mean * mean);
  CHECK(count > 100000);
  CHECK(std_dev == doctest::Approx(0.05).epsilon(0.04));
}

TEST_CASE("extract_examples emits one example per scored pedestrian") {
  GeneratorConfig cfg;
  cfg.num_scenarios = 6;
  cfg.agents_per_scenario = 5;
  auto scenarios = generate_synthetic(cfg, 46);
  std::vector<Sample> samples;
  for (const auto& s : scenarios) {
    for (auto& sample : slide_windows(s)) samples.push_back(std::move(sample));
  }
  std::int64_t scored = 0;
  for (const auto& sample : samples) {
    for (const auto& t : sample.tracks) {
      if (t.label == TrackLabel::kScored) ++scored;
    }
  }
  auto examples = extract_examples(samples);
  CHECK(static_cast<std::int64_t>(examples.size()) == scored);
  for (const auto& ex : examples) {
    CHECK(ex.future.size() == 120);
    CHECK(!ex.observed.empty());
    CHECK(ex.observed.back().t == 9);
    // the observation ends at the frame origin
    CHECK(std::abs(ex.observed.back().x) < 1e-9);
    CHECK(std::abs(ex.observed.back().y) < 1e-9);
  }
  auto threaded = extract_examples(samples, {}, 4);
  REQUIRE(threaded.size() == examples.size());
  for (size_t i = 0; i < examples.size(); ++i) {
    CHECK(threaded[i].focal_id == examples[i].focal_id);
    CHECK(threaded[i].social.v == examples[i].social.v);
  }
}

TEST_CASE("straight-walking focal has a straight focal-frame future") {
  auto sample = snapshot::testing::make_sample(
      {snapshot::testing::make_track("f", AgentType::kPedestrian, 0, 70, 3, -2, 1.0, 0)});
  auto examples = extract_examples({sample});
  REQUIRE(examples.size() == 1);
  for (int k = 0; k < 60; ++k) {
    CHECK(examples[0].future[static_cast<size_t>(2 * k)] ==
          doctest::Approx(0.1 * (k + 1)).epsilon(1e-9));
    CHECK(std::abs(examples[0].future[static_cast<size_t>(2 * k + 1)]) < 1e-9);
  }
}

TEST_CASE("short stage-1 training reduces the loss") {
  auto examples = synthetic_examples(20, 47);
  REQUIRE(examples.size() > 100);
  std::vector<Example> train_set(examples.begin(), examples.end() - 30);
  std::vector<Example> val_set(examples.end() - 30, examples.end());
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.batch_size = 32;
  cfg.max_epochs = 2;
  cfg.seed = 1;
  auto result = train(train_set, val_set, cfg, TrainStage::kStage1);
  REQUIRE(result.log.size() == 2);
  CHECK(result.log.back().train_loss < result.log.front().train_loss);
  CHECK(result.best_epoch >= 1);
}

TEST_CASE("training is deterministic for a fixed seed") {
  auto examples = synthetic_examples(8, 48);
  std::vector<Example> train_set(examples.begin(), examples.end() - 10);
  std::vector<Example> val_set(examples.end() - 10, examples.end());
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.batch_size = 16;
  cfg.max_epochs = 2;
  cfg.seed = 7;
  auto a = train(train_set, val_set, cfg, TrainStage::kBoth);
  auto b = train(train_set, val_set, cfg, TrainStage::kBoth);
  CHECK(metrics_csv_deterministic(a.log) == metrics_csv_deterministic(b.log));
  for (size_t i = 0; i < a.final.params.items.size(); ++i)
    CHECK(a.final.params.items[i].second.value() == b.final.params.items[i].second.value());
}

TEST_CASE("lr zero with zero decay leaves parameters bit-identical") {
  auto examples = synthetic_examples(5, 49);
  std::vector<Example> train_set(examples.begin(), examples.end() - 5);
  std::vector<Example> val_set(examples.end() - 5, examples.end());
  TrainConfig cfg;
  cfg.lr = 0.0;
  cfg.weight_decay = 0.0;
  cfg.batch_size = 32;
  cfg.max_epochs = 2;
  cfg.seed = 3;
  auto init = init_model<float>(Hyperparams{}, 3);
  auto result = train(train_set, val_set, cfg, TrainStage::kStage1, &init);
  for (size_t i = 0; i < init.params.items.size(); ++i)
    CHECK(result.final.params.items[i].second.value() == init.params.items[i].second.value());
}

TEST_CASE("NaN loss aborts naming the batch") {
  auto examples = synthetic_examples(5, 50);
  REQUIRE(examples.size() > 4);
  examples[2].future[10] = std::numeric_limits<double>::quiet_NaN();
  std::vector<Example> val_set{examples[0]};
  TrainConfig cfg;
  cfg.batch_size = 64;
  cfg.max_epochs = 1;
  CHECK_THROWS_WITH_AS(train(examples, val_set, cfg, TrainStage::kStage1),
                       doctest::Contains("batch"), NumericError);
}

TEST_CASE("stage 2 alone requires an initial model") {
  auto examples = synthetic_examples(3, 51);
  TrainConfig cfg;
  cfg.max_epochs = 1;
  CHECK_THROWS_AS(train(examples, examples, cfg, TrainStage::kStage2), ValidationError);
}

TEST_CASE("train state round-trips and resuming reproduces the straight run") {
  auto examples = synthetic_examples(6, 52);
  std::vector<Example> train_set(examples.begin(), examples.end() - 8);
  std::vector<Example> val_set(examples.end() - 8, examples.end());
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.batch_size = 16;
  cfg.max_epochs = 4;
  cfg.seed = 11;
  auto ckpt_dir = std::filesystem::temp_directory_path() / "snapshot_training_tests" / "resume";
  std::filesystem::create_directories(ckpt_dir);

  auto straight = train(train_set, val_set, cfg, TrainStage::kStage1);

  TrainConfig half = cfg;
  half.max_epochs = 2;
  auto first = train(train_set, val_set, half, TrainStage::kStage1, nullptr, nullptr,
                     ckpt_dir.string());
  (void)first;
  auto state = load_train_state((ckpt_dir / "last.ckpt").string());
  CHECK(state.epochs_done == 2);
  CHECK(state.stage == 1);
  auto resumed = train(train_set, val_set, cfg, TrainStage::kStage1, nullptr, &state);
  REQUIRE(resumed.log.size() == 2);
  REQUIRE(straight.log.size() == 4);
  for (size_t i = 0; i < 2; ++i) {
    const auto& a = straight.log[2 + i];
    const auto& b = resumed.log[i];
    CHECK(a.epoch == b.epoch);
    CHECK(a.train_loss == b.train_loss);
    CHECK(a.val_ade == b.val_ade);
    CHECK(a.val_fde == b.val_fde);
    CHECK(a.lr == b.lr);
  }
  for (size_t i = 0; i < straight.final.params.items.size(); ++i)
    CHECK(straight.final.params.items[i].second.value() ==
          resumed.final.params.items[i].second.value());
}

TEST_CASE("metrics csv has the documented columns") {
  EpochLog row;
  row.epoch = 1;
  row.stage = 2;
  row.train_loss = 0.5;
  row.val_ade = 0.4;
  row.val_fde = 0.9;
  row.lr = 1e-4;
  row.seconds = 2.25;
  auto csv = metrics_csv({row});
  CHECK(csv.find("epoch,stage,train_loss,val_ade,val_fde,lr,seconds") == 0);
  CHECK(csv.find("1,2,0.5,0.4,0.9,0.0001,2.250") != std::string::npos);
}
