// Command-line front end for the full pipeline: synthetic data generation,
// benchmark construction, training, evaluation, ablations, latency
// benchmarking, and single-scenario prediction.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "snapshot/benchmark.hpp"
#include "snapshot/eval.hpp"
#include "snapshot/features.hpp"
#include "snapshot/model.hpp"
#include "snapshot/scene.hpp"
#include "snapshot/training.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;
using namespace snapshot;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;
constexpr int kExitNumeric = 3;

// Every run writes its resolved configuration next to its outputs.
void write_resolved_config(const std::string& out_dir, const std::string& command,
                           const ordered_json& values) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  ordered_json j;
  j["command"] = command;
  j["config"] = values;
  std::ofstream out(fs::path(out_dir) / "resolved_config.json");
  if (!out) throw IoError("cannot write resolved config in '" + out_dir + "'");
  out << j.dump(2) << '\n';
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << content;
  if (!out) throw IoError("write failed for '" + path + "'");
}

std::string data_dir_default() {
  const char* env = std::getenv("SNAPSHOT_DATA_DIR");
  return env != nullptr ? env : "";
}

TrainStage parse_stage(const std::string& stage) {
  if (stage == "1") return TrainStage::kStage1;
  if (stage == "2") return TrainStage::kStage2;
  if (stage == "both") return TrainStage::kBoth;
  throw ValidationError("--stage must be one of 1, 2, both; got '" + stage + "'");
}

std::vector<AblationCell> parse_grid(const std::string& grid_spec) {
  std::vector<AblationCell> cells;
  std::size_t begin = 0;
  while (begin <= grid_spec.size()) {
    std::size_t end = grid_spec.find(',', begin);
    if (end == std::string::npos) end = grid_spec.size();
    std::string cell = grid_spec.substr(begin, end - begin);
    if (!cell.empty()) {
      auto colon = cell.find(':');
      if (colon == std::string::npos)
        throw ValidationError("--grid cell '" + cell + "' is not <map_vectors>:<criteria>");
      AblationCell parsed;
      try {
        parsed.map_vectors = std::stoi(cell.substr(0, colon));
      } catch (const std::exception&) {
        throw ValidationError("--grid cell '" + cell + "' has a non-numeric map vector count");
      }
      if (parsed.map_vectors < 0)
        throw ValidationError("--grid cell '" + cell + "' has a negative map vector count");
      parsed.criteria = parse_criteria(cell.substr(colon + 1));
      cells.push_back(parsed);
    }
    begin = end + 1;
  }
  if (cells.empty()) throw ValidationError("--grid contains no cells");
  return cells;
}

std::vector<Sample> load_split(const std::string& data_dir, const std::string& split) {
  return load_samples((fs::path(data_dir) / (split + ".jsonl")).string());
}

std::string manifest_hash(const std::string& data_dir) {
  auto path = fs::path(data_dir) / "manifest.json";
  if (!fs::exists(path)) return "";
  return load_manifest(path.string()).hash;
}

int run(int argc, char** argv) {
  CLI::App app{"Snapshot pedestrian trajectory prediction pipeline"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Read defaults from an INI/TOML file");
  app.allow_config_extras(false);

  // ---- gen-synthetic -----------------------------------------------------
  auto* gen = app.add_subcommand("gen-synthetic", "Generate synthetic scenarios");
  std::string gen_out;
  GeneratorConfig gen_cfg;
  std::uint64_t gen_seed = 0;
  int gen_threads = 1;
  gen->add_option("--out", gen_out, "Output scenario file (.jsonl)")->required();
  gen->add_option("--num", gen_cfg.num_scenarios, "Number of scenarios")
      ->capture_default_str();
  gen->add_option("--agents", gen_cfg.agents_per_scenario, "Agents per scenario")
      ->capture_default_str();
  gen->add_option("--length", gen_cfg.length_timesteps, "Scenario length in timesteps")
      ->capture_default_str();
  gen->add_option("--mix-cv", gen_cfg.mix_constant_velocity, "Constant-velocity mix weight")
      ->capture_default_str();
  gen->add_option("--mix-stop", gen_cfg.mix_stop_and_wait, "Stop-and-wait mix weight")
      ->capture_default_str();
  gen->add_option("--mix-turn", gen_cfg.mix_crosswalk_turn, "Crosswalk-turn mix weight")
      ->capture_default_str();
  gen->add_option("--occlusion", gen_cfg.occlusion_fraction,
                  "Fraction of context agents with occlusions")
      ->capture_default_str();
  gen->add_option("--ped-fraction", gen_cfg.pedestrian_fraction,
                  "Pedestrian share among context agents")
      ->capture_default_str();
  gen->add_option("--seed", gen_seed, "Generator seed")->capture_default_str();
  gen->add_option("--threads", gen_threads, "Worker threads")->capture_default_str();

  // ---- build-benchmark ---------------------------------------------------
  auto* build = app.add_subcommand("build-benchmark", "Window scenarios into samples");
  std::string build_in, build_out;
  int build_window = kWindowSteps, build_stride = 5;
  build->add_option("--in", build_in, "Scenario file")->required();
  build->add_option("--out", build_out, "Output benchmark directory")->required();
  build->add_option("--window", build_window, "Window length in timesteps")
      ->capture_default_str();
  build->add_option("--stride", build_stride, "Sliding stride in timesteps")
      ->capture_default_str();

  // ---- train ---------------------------------------------------------------
  auto* tr = app.add_subcommand("train", "Train the model");
  std::string tr_data = data_dir_default(), tr_out, tr_stage = "1", tr_init, tr_resume;
  std::string tr_criteria = "l2";
  int tr_map_lines = 100;
  TrainConfig tr_cfg;
  tr->add_option("--data", tr_data, "Benchmark directory (or $SNAPSHOT_DATA_DIR)");
  tr->add_option("--out", tr_out, "Output directory")->required();
  tr->add_option("--stage", tr_stage, "Training stage: 1, 2, or both")->capture_default_str();
  tr->add_option("--init", tr_init, "Initial checkpoint (required for --stage 2)");
  tr->add_option("--resume", tr_resume, "Resume from a training-state checkpoint");
  tr->add_option("--epochs", tr_cfg.max_epochs, "Epochs per stage")->capture_default_str();
  tr->add_option("--batch", tr_cfg.batch_size, "Batch size")->capture_default_str();
  tr->add_option("--lr", tr_cfg.lr, "Initial learning rate")->capture_default_str();
  tr->add_option("--wd", tr_cfg.weight_decay, "Weight decay")->capture_default_str();
  tr->add_option("--noise-std", tr_cfg.noise_std, "Gaussian observation noise in meters")
      ->capture_default_str();
  tr->add_option("--seed", tr_cfg.seed, "Training seed")->capture_default_str();
  tr->add_option("--criteria", tr_criteria, "Neighbor selection: l2, risk, none")
      ->capture_default_str();
  tr->add_option("--map-lines", tr_map_lines, "Map polylines per sample")->capture_default_str();
  tr->add_option("--threads", tr_cfg.threads, "Feature extraction threads")
      ->capture_default_str();

  // ---- eval ----------------------------------------------------------------
  auto* ev = app.add_subcommand("eval", "Evaluate a model or baseline");
  std::string ev_model, ev_baseline, ev_data = data_dir_default(), ev_split = "test", ev_out;
  std::string ev_criteria = "l2";
  int ev_map_lines = 100, ev_threads = 1, ev_steps = kObservedSteps, ev_batch = 256;
  bool ev_sweep = false;
  ev->add_option("--model", ev_model, "Model checkpoint");
  ev->add_option("--baseline", ev_baseline, "Baseline instead of a model: cvm or cvm-avg");
  ev->add_option("--data", ev_data, "Benchmark directory (or $SNAPSHOT_DATA_DIR)");
  ev->add_option("--split", ev_split, "Split: train, val, test")->capture_default_str();
  ev->add_option("--out", ev_out, "Report output directory");
  ev->add_option("--observed", ev_steps, "Observed steps in [2, 10]")->capture_default_str();
  ev->add_option("--batch", ev_batch, "Inference batch size")->capture_default_str();
  ev->add_flag("--sweep", ev_sweep, "Evaluate every observation length 2..10");
  ev->add_option("--criteria", ev_criteria, "Neighbor selection: l2, risk, none")
      ->capture_default_str();
  ev->add_option("--map-lines", ev_map_lines, "Map polylines per sample")->capture_default_str();
  ev->add_option("--threads", ev_threads, "Evaluation threads")->capture_default_str();

  // ---- ablate ----------------------------------------------------------------
  auto* ab = app.add_subcommand("ablate", "Train and evaluate a feature ablation grid");
  std::string ab_data = data_dir_default(), ab_out;
  std::string ab_grid = "200:l2,100:l2,50:l2,0:l2,100:risk,100:none";
  TrainConfig ab_cfg;
  ab_cfg.max_epochs = 5;
  ab->add_option("--data", ab_data, "Benchmark directory (or $SNAPSHOT_DATA_DIR)");
  ab->add_option("--out", ab_out, "Output directory")->required();
  ab->add_option("--grid", ab_grid, "Cells as <map_vectors>:<criteria>, comma separated")
      ->capture_default_str();
  ab->add_option("--epochs", ab_cfg.max_epochs, "Training epochs per cell")
      ->capture_default_str();
  ab->add_option("--batch", ab_cfg.batch_size, "Batch size")->capture_default_str();
  ab->add_option("--lr", ab_cfg.lr, "Learning rate")->capture_default_str();
  ab->add_option("--seed", ab_cfg.seed, "Seed")->capture_default_str();
  ab->add_option("--threads", ab_cfg.threads, "Feature extraction threads")
      ->capture_default_str();

  // ---- bench ----------------------------------------------------------------
  auto* be = app.add_subcommand("bench", "Latency benchmark");
  std::string be_model, be_out;
  std::vector<int> be_batches{1, 16, 128, 1024};
  int be_reps = 100, be_warmup = 10;
  be->add_option("--model", be_model, "Model checkpoint")->required();
  be->add_option("--batch-sizes", be_batches, "Strictly increasing batch sizes")
      ->delimiter(',')
      ->capture_default_str();
  be->add_option("--reps", be_reps, "Timed repetitions per batch size")->capture_default_str();
  be->add_option("--warmup", be_warmup, "Warm-up runs per batch size")->capture_default_str();
  be->add_option("--out", be_out, "Report output directory");

  // ---- predict ----------------------------------------------------------------
  auto* pr = app.add_subcommand("predict", "Predict one focal agent in one scenario");
  std::string pr_model, pr_scenario, pr_focal, pr_out, pr_dump;
  int pr_window_start = 0;
  std::string pr_criteria = "l2";
  pr->add_option("--model", pr_model, "Model checkpoint")->required();
  pr->add_option("--scenario", pr_scenario, "Scenario file (first scenario is used)")
      ->required();
  pr->add_option("--focal", pr_focal, "Focal track id")->required();
  pr->add_option("--out", pr_out, "Output JSON file")->required();
  pr->add_option("--window-start", pr_window_start, "Window start timestep")
      ->capture_default_str();
  pr->add_option("--criteria", pr_criteria, "Neighbor selection: l2, risk, none")
      ->capture_default_str();
  pr->add_option("--dump-features", pr_dump, "Also dump the input matrices (SNPF)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);  // prints help or the parse error
    return code == 0 ? kExitOk : kExitValidation;
  }

  if (gen->parsed()) {
    auto scenarios = generate_synthetic(gen_cfg, gen_seed, gen_threads);
    save_scenarios(scenarios, gen_out);
    ordered_json cfg;
    cfg["out"] = gen_out;
    cfg["num"] = gen_cfg.num_scenarios;
    cfg["agents"] = gen_cfg.agents_per_scenario;
    cfg["length"] = gen_cfg.length_timesteps;
    cfg["mix_cv"] = gen_cfg.mix_constant_velocity;
    cfg["mix_stop"] = gen_cfg.mix_stop_and_wait;
    cfg["mix_turn"] = gen_cfg.mix_crosswalk_turn;
    cfg["occlusion"] = gen_cfg.occlusion_fraction;
    cfg["seed"] = gen_seed;
    cfg["threads"] = gen_threads;
    write_resolved_config(fs::path(gen_out).parent_path().string().empty()
                              ? "."
                              : fs::path(gen_out).parent_path().string(),
                          "gen-synthetic", cfg);
    std::cout << "wrote " << scenarios.size() << " scenarios to " << gen_out << "\n";
    return kExitOk;
  }

  if (build->parsed()) {
    auto scenarios = load_scenarios(build_in);
    auto manifest = build_benchmark(scenarios, build_out, build_window, build_stride);
    ordered_json cfg;
    cfg["in"] = build_in;
    cfg["out"] = build_out;
    cfg["window"] = build_window;
    cfg["stride"] = build_stride;
    write_resolved_config(build_out, "build-benchmark", cfg);
    std::cout << "benchmark written to " << build_out << "\n" << manifest.to_json() << "\n";
    return kExitOk;
  }

  if (tr->parsed()) {
    if (tr_data.empty())
      throw ValidationError("--data is required (or set SNAPSHOT_DATA_DIR)");
    FeatureConfig fc;
    fc.criteria = parse_criteria(tr_criteria);
    fc.map_max_lines = tr_map_lines;
    fc.map_rows = std::max(100, tr_map_lines);
    auto train_examples = extract_examples(load_split(tr_data, "train"), fc, tr_cfg.threads);
    auto val_examples = extract_examples(load_split(tr_data, "val"), fc, tr_cfg.threads);

    TrainStage stage = parse_stage(tr_stage);
    std::optional<Model> init;
    if (!tr_init.empty()) init = load_checkpoint(tr_init).model;
    std::optional<TrainState> resume;
    if (!tr_resume.empty()) resume = load_train_state(tr_resume);
    if (!init && !resume && stage != TrainStage::kStage2) {
      Hyperparams hp;
      hp.map_rows = fc.map_rows;
      init = init_model<float>(hp, tr_cfg.seed);
      std::cout << "initialized model with " << init->parameter_count() << " parameters\n";
    }

    fs::create_directories(tr_out);
    auto result = train(train_examples, val_examples, tr_cfg, stage,
                        init ? &*init : nullptr, resume ? &*resume : nullptr, tr_out);

    std::map<std::string, std::string> meta;
    meta["manifest_hash"] = manifest_hash(tr_data);
    meta["stage"] = tr_stage;
    meta["seed"] = std::to_string(tr_cfg.seed);
    meta["best_epoch"] = std::to_string(result.best_epoch);
    save_checkpoint(result.best, (fs::path(tr_out) / "best.ckpt").string(), meta);
    save_checkpoint(result.final, (fs::path(tr_out) / "final.ckpt").string(), meta);
    write_text((fs::path(tr_out) / "metrics.csv").string(), metrics_csv(result.log));

    ordered_json cfg;
    cfg["data"] = tr_data;
    cfg["out"] = tr_out;
    cfg["stage"] = tr_stage;
    cfg["init"] = tr_init;
    cfg["resume"] = tr_resume;
    cfg["epochs"] = tr_cfg.max_epochs;
    cfg["batch"] = tr_cfg.batch_size;
    cfg["lr"] = tr_cfg.lr;
    cfg["wd"] = tr_cfg.weight_decay;
    cfg["noise_std"] = tr_cfg.noise_std;
    cfg["seed"] = tr_cfg.seed;
    cfg["criteria"] = tr_criteria;
    cfg["map_lines"] = tr_map_lines;
    cfg["threads"] = tr_cfg.threads;
    write_resolved_config(tr_out, "train", cfg);
    std::cout << "trained on " << train_examples.size() << " examples; best val ADE "
              << result.best_val_ade << " at epoch " << result.best_epoch << "\n";
    return kExitOk;
  }

  if (ev->parsed()) {
    if (ev_data.empty())
      throw ValidationError("--data is required (or set SNAPSHOT_DATA_DIR)");
    if (ev_model.empty() == ev_baseline.empty())
      throw ValidationError("exactly one of --model or --baseline is required");
    FeatureConfig fc;
    fc.criteria = parse_criteria(ev_criteria);
    fc.map_max_lines = ev_map_lines;
    fc.map_rows = std::max(100, ev_map_lines);
    auto examples = extract_examples(load_split(ev_data, ev_split), fc, ev_threads);

    std::optional<Model> model;
    std::unique_ptr<Predictor> predictor;
    if (!ev_model.empty()) {
      model = load_checkpoint(ev_model).model;
      fc.map_rows = model->hp.map_rows;
      predictor = std::make_unique<SnapshotPredictor>(*model, ev_batch);
    } else if (ev_baseline == "cvm") {
      predictor = std::make_unique<CvmPredictor>();
    } else if (ev_baseline == "cvm-avg") {
      predictor = std::make_unique<CvmPredictor>(true);
    } else {
      throw ValidationError("--baseline must be cvm or cvm-avg, got '" + ev_baseline + "'");
    }

    auto report = evaluate(*predictor, examples, ev_steps, ev_sweep, ev_threads);
    std::cout << predictor->name() << " " << ev_split << ": ADE " << report.ade << " FDE "
              << report.fde << " over " << report.n_agents << " agents\n";
    if (!ev_out.empty()) {
      fs::create_directories(ev_out);
      write_text((fs::path(ev_out) / "report.json").string(), report_to_json(report));
      write_text((fs::path(ev_out) / "report.csv").string(), report_to_csv(report));
      if (ev_sweep) {
        SweepSeries series{predictor->name(), {}};
        for (const auto& [k, metrics] : report.sweep) series.points.emplace_back(k, metrics.first);
        write_sweep_svg((fs::path(ev_out) / "sweep.svg").string(), {series});
      }
      ordered_json cfg;
      cfg["model"] = ev_model;
      cfg["baseline"] = ev_baseline;
      cfg["data"] = ev_data;
      cfg["split"] = ev_split;
      cfg["observed"] = ev_steps;
      cfg["sweep"] = ev_sweep;
      cfg["criteria"] = ev_criteria;
      cfg["map_lines"] = ev_map_lines;
      cfg["threads"] = ev_threads;
      write_resolved_config(ev_out, "eval", cfg);
    }
    return kExitOk;
  }

  if (ab->parsed()) {
    if (ab_data.empty())
      throw ValidationError("--data is required (or set SNAPSHOT_DATA_DIR)");
    auto cells = parse_grid(ab_grid);
    auto train_s = load_split(ab_data, "train");
    auto val_s = load_split(ab_data, "val");
    auto test_s = load_split(ab_data, "test");
    auto rows = run_ablation(train_s, val_s, test_s, cells, ab_cfg);
    fs::create_directories(ab_out);
    write_text((fs::path(ab_out) / "ablation.csv").string(), ablation_to_csv(rows));
    ordered_json cfg;
    cfg["data"] = ab_data;
    cfg["out"] = ab_out;
    cfg["grid"] = ab_grid;
    cfg["epochs"] = ab_cfg.max_epochs;
    cfg["batch"] = ab_cfg.batch_size;
    cfg["lr"] = ab_cfg.lr;
    cfg["seed"] = ab_cfg.seed;
    write_resolved_config(ab_out, "ablate", cfg);
    std::cout << ablation_to_csv(rows);
    return kExitOk;
  }

  if (be->parsed()) {
    auto model = load_checkpoint(be_model).model;
    auto report = latency_bench(model, be_batches, be_reps, be_warmup);
    std::cout << latency_to_csv(report);
    if (report.peak_rss_kb > 0)
      std::cout << "peak rss: " << report.peak_rss_kb << " kB\n";
    if (!be_out.empty()) {
      fs::create_directories(be_out);
      write_text((fs::path(be_out) / "latency.json").string(), latency_to_json(report));
      write_text((fs::path(be_out) / "latency.csv").string(), latency_to_csv(report));
      ordered_json cfg;
      cfg["model"] = be_model;
      cfg["batch_sizes"] = be_batches;
      cfg["reps"] = be_reps;
      cfg["warmup"] = be_warmup;
      write_resolved_config(be_out, "bench", cfg);
    }
    return kExitOk;
  }

  if (pr->parsed()) {
    auto model = load_checkpoint(pr_model).model;
    auto scenarios = load_scenarios(pr_scenario);
    if (scenarios.empty()) throw ValidationError("'" + pr_scenario + "' holds no scenarios");
    const Scenario& scenario = scenarios.front();
    auto samples = slide_windows(scenario);
    const Sample* sample = nullptr;
    for (const auto& s : samples) {
      if (s.window_start == pr_window_start) sample = &s;
    }
    if (sample == nullptr)
      throw ValidationError("no predictable window starts at t=" +
                            std::to_string(pr_window_start) + " in scenario '" + scenario.id +
                            "'");
    auto frame = focal_frame(*sample, pr_focal);
    auto social = social_matrix(*sample, pr_focal, frame, parse_criteria(pr_criteria));
    auto map = map_matrix(*sample->map, frame, 20.0, model.hp.map_rows, model.hp.map_rows);
    auto prediction = predict(model, social, map);
    if (!pr_dump.empty()) dump_features(pr_dump, social, map);

    ordered_json j;
    j["scenario"] = scenario.id;
    j["focal"] = pr_focal;
    j["window_start"] = pr_window_start;
    j["frame"] = {{"origin", {frame.origin_x, frame.origin_y}}, {"rotation", frame.rotation}};
    ordered_json coarse = ordered_json::array();
    for (const auto& p : prediction.coarse) coarse.push_back({p[0], p[1]});
    j["coarse"] = std::move(coarse);
    ordered_json full = ordered_json::array();
    for (const auto& p : prediction.full) full.push_back({p[0], p[1]});
    j["full"] = std::move(full);
    write_text(pr_out, j.dump(2) + "\n");
    std::cout << "prediction for '" << pr_focal << "' written to " << pr_out << "\n";
    return kExitOk;
  }

  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const NumericError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
}
