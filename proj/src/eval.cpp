#include "snapshot/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <thread>

#include "json.hpp"

#if defined(__unix__) || defined(__APPLE__)
#include <sys/resource.h>
#endif

namespace snapshot {

using ordered_json = nlohmann::ordered_json;

namespace {

void check_pair(const std::vector<std::vector<double>>& pred,
                const std::vector<std::vector<double>>& gt, const char* op) {
  if (pred.size() != gt.size())
    throw ShapeError(std::string(op) + ": " + std::to_string(pred.size()) + " predictions vs " +
                     std::to_string(gt.size()) + " ground truths");
  if (pred.empty()) throw ShapeError(std::string(op) + ": no agents");
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].size() != gt[i].size() || pred[i].empty() || pred[i].size() % 2 != 0)
      throw ShapeError(std::string(op) + ": agent " + std::to_string(i) +
                       " trajectory length mismatch (" + std::to_string(pred[i].size()) + " vs " +
                       std::to_string(gt[i].size()) + ")");
  }
}

}  // namespace

double ade(const std::vector<std::vector<double>>& pred,
           const std::vector<std::vector<double>>& gt) {
  check_pair(pred, gt, "ade");
  double sum = 0.0;
  std::int64_t points = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    std::size_t steps = pred[i].size() / 2;
    for (std::size_t t = 0; t < steps; ++t) {
      double dx = pred[i][2 * t] - gt[i][2 * t];
      double dy = pred[i][2 * t + 1] - gt[i][2 * t + 1];
      sum += std::sqrt(dx * dx + dy * dy);
      ++points;
    }
  }
  return sum / static_cast<double>(points);
}

double fde(const std::vector<std::vector<double>>& pred,
           const std::vector<std::vector<double>>& gt) {
  check_pair(pred, gt, "fde");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    std::size_t last = pred[i].size() - 2;
    double dx = pred[i][last] - gt[i][last];
    double dy = pred[i][last + 1] - gt[i][last + 1];
    sum += std::sqrt(dx * dx + dy * dy);
  }
  return sum / static_cast<double>(pred.size());
}

std::vector<double> cvm_predict(const std::vector<TrackState>& observed, int horizon,
                                bool window_average) {
  if (observed.empty()) throw ValidationError("cvm_predict: empty observation");
  double vx = 0.0, vy = 0.0;
  if (observed.size() >= 2) {
    if (window_average) {
      const TrackState& first = observed.front();
      const TrackState& last = observed.back();
      double dt = (last.t - first.t) * kDt;
      vx = (last.x - first.x) / dt;
      vy = (last.y - first.y) / dt;
    } else {
      const TrackState& last = observed[observed.size() - 1];
      const TrackState& prev = observed[observed.size() - 2];
      double dt = (last.t - prev.t) * kDt;
      vx = (last.x - prev.x) / dt;
      vy = (last.y - prev.y) / dt;
    }
  }
  const TrackState& last = observed.back();
  std::vector<double> out(static_cast<std::size_t>(horizon) * 2);
  for (int k = 0; k < horizon; ++k) {
    out[static_cast<std::size_t>(k) * 2] = last.x + vx * kDt * (k + 1);
    out[static_cast<std::size_t>(k) * 2 + 1] = last.y + vy * kDt * (k + 1);
  }
  return out;
}

std::vector<double> SnapshotPredictor::predict(const std::vector<Example>& batch,
                                               int keep_steps) const {
  std::vector<double> out;
  out.reserve(batch.size() * static_cast<std::size_t>(kHorizonSteps) * 2);
  for (std::size_t begin = 0; begin < batch.size();
       begin += static_cast<std::size_t>(batch_size_)) {
    std::size_t end = std::min(batch.size(), begin + static_cast<std::size_t>(batch_size_));
    std::vector<SocialMatrix> social;
    std::vector<MapMatrix> maps;
    for (std::size_t i = begin; i < end; ++i) {
      social.push_back(keep_steps >= kObservedSteps
                           ? batch[i].social
                           : dropout_history(batch[i].social, keep_steps));
      maps.push_back(batch[i].map);
    }
    std::vector<double> flat = predict_batch(model_, social, maps);
    out.insert(out.end(), flat.begin(), flat.end());
  }
  return out;
}

std::vector<double> CvmPredictor::predict(const std::vector<Example>& batch,
                                          int keep_steps) const {
  std::vector<double> out;
  out.reserve(batch.size() * static_cast<std::size_t>(kHorizonSteps) * 2);
  for (const auto& ex : batch) {
    std::vector<TrackState> observed;
    for (const auto& st : ex.observed) {
      if (st.t >= kObservedSteps - keep_steps) observed.push_back(st);
    }
    if (observed.empty()) observed.push_back(ex.observed.back());
    std::vector<double> traj = cvm_predict(observed, kHorizonSteps, window_average_);
    out.insert(out.end(), traj.begin(), traj.end());
  }
  return out;
}

namespace {

// One full pass at a fixed observation length; chunked over threads with a
// deterministic merge order.
std::pair<double, double> evaluate_pass(const Predictor& predictor,
                                        const std::vector<Example>& examples, int keep_steps,
                                        int threads) {
  std::size_t n = examples.size();
  std::size_t n_chunks = threads <= 1 ? 1 : std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  std::size_t chunk = (n + n_chunks - 1) / n_chunks;
  std::vector<std::vector<double>> flat(n_chunks);
  auto work = [&](std::size_t c) {
    std::size_t begin = c * chunk;
    std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) return;
    std::vector<Example> part(examples.begin() + static_cast<std::ptrdiff_t>(begin),
                              examples.begin() + static_cast<std::ptrdiff_t>(end));
    flat[c] = predictor.predict(part, keep_steps);
  };
  if (n_chunks == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t c = 0; c < n_chunks; ++c) pool.emplace_back(work, c);
    for (auto& t : pool) t.join();
  }
  std::vector<std::vector<double>> preds, gts;
  preds.reserve(n);
  gts.reserve(n);
  std::size_t idx = 0;
  for (std::size_t c = 0; c < n_chunks; ++c) {
    for (std::size_t o = 0; o + 120 <= flat[c].size(); o += 120) {
      preds.emplace_back(flat[c].begin() + static_cast<std::ptrdiff_t>(o),
                         flat[c].begin() + static_cast<std::ptrdiff_t>(o + 120));
      gts.push_back(examples[idx].future);
      ++idx;
    }
  }
  return {ade(preds, gts), fde(preds, gts)};
}

}  // namespace

MetricReport evaluate(const Predictor& predictor, const std::vector<Example>& examples,
                      int observed_steps, bool full_sweep, int threads) {
  if (examples.empty()) throw ValidationError("evaluate: empty dataset");
  if (observed_steps < 2 || observed_steps > kObservedSteps)
    throw ValidationError("evaluate: observed_steps " + std::to_string(observed_steps) +
                          " outside [2, " + std::to_string(kObservedSteps) + "]");
  MetricReport report;
  report.n_agents = static_cast<std::int64_t>(examples.size());
  auto [a, f] = evaluate_pass(predictor, examples, observed_steps, threads);
  report.ade = a;
  report.fde = f;
  if (full_sweep) {
    for (int k = 2; k <= kObservedSteps; ++k) {
      if (k == observed_steps) {
        report.sweep[k] = {report.ade, report.fde};
      } else {
        report.sweep[k] = evaluate_pass(predictor, examples, k, threads);
      }
    }
  }
  return report;
}

std::vector<AblationRow> run_ablation(const std::vector<Sample>& train_samples,
                                      const std::vector<Sample>& val_samples,
                                      const std::vector<Sample>& test_samples,
                                      const std::vector<AblationCell>& cells,
                                      const TrainConfig& budget) {
  std::vector<AblationRow> rows;
  for (const auto& cell : cells) {
    FeatureConfig fc;
    fc.criteria = cell.criteria;
    fc.map_max_lines = cell.map_vectors;
    fc.map_rows = std::max(100, cell.map_vectors);
    auto train_examples = extract_examples(train_samples, fc, budget.threads);
    auto val_examples = extract_examples(val_samples, fc, budget.threads);
    auto test_examples = extract_examples(test_samples, fc, budget.threads);

    Hyperparams hp;
    hp.map_rows = fc.map_rows;
    Model model = init_model<float>(hp, budget.seed);
    TrainResult result = train(train_examples, val_examples, budget, TrainStage::kStage1, &model);

    AblationRow row;
    row.cell = cell;
    row.parameter_count = result.best.parameter_count();
    SnapshotPredictor predictor(result.best, budget.batch_size);
    row.report = evaluate(predictor, test_examples, kObservedSteps, false, budget.threads);
    rows.push_back(std::move(row));
  }
  return rows;
}

LatencyReport latency_bench(const Model& model, const std::vector<int>& batch_sizes, int reps,
                            int warmup) {
  if (batch_sizes.empty()) throw ValidationError("latency_bench: no batch sizes");
  for (std::size_t i = 0; i < batch_sizes.size(); ++i) {
    if (batch_sizes[i] < 1)
      throw ValidationError("latency_bench: batch size must be >= 1, got " +
                            std::to_string(batch_sizes[i]));
    if (i > 0 && batch_sizes[i] <= batch_sizes[i - 1])
      throw ValidationError("latency_bench: batch sizes must be strictly increasing");
  }
  if (reps < 1) throw ValidationError("latency_bench: reps must be >= 1");

  // Plausible random features, fixed seed; the content does not matter for
  // timing, only the shapes do.
  Rng rng(1234);
  int max_batch = batch_sizes.back();
  std::vector<SocialMatrix> social(static_cast<std::size_t>(max_batch));
  std::vector<MapMatrix> maps;
  maps.reserve(static_cast<std::size_t>(max_batch));
  for (int b = 0; b < max_batch; ++b) {
    SocialMatrix& m = social[static_cast<std::size_t>(b)];
    int agents = 1 + static_cast<int>(rng.uniform_int(0, SocialMatrix::kNeighbors));
    for (int r = 0; r < agents; ++r) {
      m.at(r, 0) = r == 0 ? 1.0 : static_cast<double>(rng.uniform_int(1, 4));
      double x = r == 0 ? 0.0 : rng.uniform(-15.0, 15.0);
      double y = r == 0 ? 0.0 : rng.uniform(-15.0, 15.0);
      double vx = rng.uniform(-0.2, 0.2);
      double vy = rng.uniform(-0.2, 0.2);
      for (int j = 0; j < kObservedSteps; ++j) {
        if (r == 0 && j == 0) continue;
        m.at(r, 1 + 2 * j) = x - vx * j;
        m.at(r, 2 + 2 * j) = y - vy * j;
      }
    }
    MapMatrix mm(model.hp.map_rows);
    int lines = static_cast<int>(rng.uniform_int(20, model.hp.map_rows));
    for (int r = 0; r < lines; ++r) {
      mm.at(r, 0) = static_cast<double>(rng.uniform_int(1, 4));
      mm.at(r, 1) = static_cast<double>(rng.uniform_int(1, 12));
      mm.at(r, 2) = rng.uniform(-20.0, 20.0);
      mm.at(r, 3) = rng.uniform(-20.0, 20.0);
      mm.at(r, 4) = rng.uniform(-20.0, 20.0);
      mm.at(r, 5) = rng.uniform(-20.0, 20.0);
    }
    maps.push_back(std::move(mm));
  }

  LatencyReport report;
  report.warmup = warmup;
  report.threads = 1;

  // Repetitions rotate through distinct agents (re-timing one cache-hot
  // input would flatter the small batch sizes) and the batch sizes are
  // interleaved so each sees the same thermal/frequency state.
  struct Series {
    int batch;
    std::vector<std::vector<SocialMatrix>> s_slices;
    std::vector<std::vector<MapMatrix>> m_slices;
    std::vector<double> times;
  };
  std::vector<Series> series;
  for (int batch : batch_sizes) {
    Series s;
    s.batch = batch;
    int positions = std::max(1, max_batch / batch);
    for (int p = 0; p < positions; ++p) {
      auto begin = static_cast<std::ptrdiff_t>(p) * batch;
      s.s_slices.emplace_back(social.begin() + begin, social.begin() + begin + batch);
      s.m_slices.emplace_back(maps.begin() + begin, maps.begin() + begin + batch);
    }
    series.push_back(std::move(s));
  }
  for (int i = 0; i < warmup; ++i) {
    for (auto& s : series) {
      std::size_t p = static_cast<std::size_t>(i) % s.s_slices.size();
      predict_batch(model, s.s_slices[p], s.m_slices[p]);
    }
  }
  for (int i = 0; i < reps; ++i) {
    for (auto& s : series) {
      std::size_t p = static_cast<std::size_t>(i) % s.s_slices.size();
      auto t0 = std::chrono::steady_clock::now();
      predict_batch(model, s.s_slices[p], s.m_slices[p]);
      auto t1 = std::chrono::steady_clock::now();
      s.times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
  }
  for (const auto& s : series) {
    double mean = 0.0;
    for (double t : s.times) mean += t;
    mean /= static_cast<double>(s.times.size());
    double var = 0.0;
    for (double t : s.times) var += (t - mean) * (t - mean);
    var /= static_cast<double>(s.times.size());
    report.entries.push_back(
        {s.batch, mean, std::sqrt(var), mean / static_cast<double>(s.batch), reps});
  }
#if defined(__unix__) || defined(__APPLE__)
  struct rusage usage;
  if (getrusage(RUSAGE_SELF, &usage) == 0) report.peak_rss_kb = usage.ru_maxrss;
#endif
  return report;
}

std::string report_to_json(const MetricReport& report) {
  ordered_json j;
  j["ade"] = report.ade;
  j["fde"] = report.fde;
  j["n_agents"] = report.n_agents;
  if (!report.sweep.empty()) {
    ordered_json sweep;
    for (const auto& [k, metrics] : report.sweep) {
      ordered_json entry;
      entry["ade"] = metrics.first;
      entry["fde"] = metrics.second;
      sweep[std::to_string(k)] = std::move(entry);
    }
    j["sweep"] = std::move(sweep);
  }
  return j.dump(2);
}

std::string report_to_csv(const MetricReport& report) {
  std::string out = "observed_steps,ade,fde,n_agents\n";
  char buf[160];
  std::snprintf(buf, sizeof(buf), "full,%.9g,%.9g,%lld\n", report.ade, report.fde,
                static_cast<long long>(report.n_agents));
  out += buf;
  for (const auto& [k, metrics] : report.sweep) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%lld\n", k, metrics.first, metrics.second,
                  static_cast<long long>(report.n_agents));
    out += buf;
  }
  return out;
}

std::string ablation_to_csv(const std::vector<AblationRow>& rows) {
  std::string out = "map_vectors,selection,parameters,ade,fde,n_agents\n";
  char buf[200];
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%s,%lld,%.9g,%.9g,%lld\n", row.cell.map_vectors,
                  criteria_name(row.cell.criteria), static_cast<long long>(row.parameter_count),
                  row.report.ade, row.report.fde, static_cast<long long>(row.report.n_agents));
    out += buf;
  }
  return out;
}

std::string latency_to_json(const LatencyReport& report) {
  ordered_json j;
  ordered_json entries = ordered_json::array();
  for (const auto& e : report.entries) {
    ordered_json je;
    je["batch_size"] = e.batch_size;
    je["mean_ms"] = e.mean_ms;
    je["std_ms"] = e.std_ms;
    je["per_agent_ms"] = e.per_agent_ms;
    je["reps"] = e.reps;
    entries.push_back(std::move(je));
  }
  j["entries"] = std::move(entries);
  j["warmup"] = report.warmup;
  j["threads"] = report.threads;
  j["peak_rss_kb"] = report.peak_rss_kb;
  return j.dump(2);
}

std::string latency_to_csv(const LatencyReport& report) {
  std::string out = "batch_size,mean_ms,std_ms,per_agent_ms,reps\n";
  char buf[160];
  for (const auto& e : report.entries) {
    std::snprintf(buf, sizeof(buf), "%d,%.6g,%.6g,%.6g,%d\n", e.batch_size, e.mean_ms, e.std_ms,
                  e.per_agent_ms, e.reps);
    out += buf;
  }
  return out;
}

void write_sweep_svg(const std::string& path, const std::vector<SweepSeries>& series) {
  const double width = 640, height = 420;
  const double left = 70, right = 30, top = 40, bottom = 60;
  double y_max = 0.0;
  int x_min = 10, x_max = 2;
  for (const auto& s : series) {
    for (const auto& [k, v] : s.points) {
      y_max = std::max(y_max, v);
      x_min = std::min(x_min, k);
      x_max = std::max(x_max, k);
    }
  }
  if (y_max <= 0.0) y_max = 1.0;
  y_max *= 1.15;
  if (x_max <= x_min) x_max = x_min + 1;

  auto xpix = [&](double k) {
    return left + (k - x_min) / static_cast<double>(x_max - x_min) * (width - left - right);
  };
  auto ypix = [&](double v) { return height - bottom - v / y_max * (height - top - bottom); };

  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd"};
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  char buf[512];
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  // axes
  std::snprintf(buf, sizeof(buf),
                "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n",
                left, height - bottom, width - right, height - bottom);
  out << buf;
  std::snprintf(buf, sizeof(buf),
                "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n",
                left, top, left, height - bottom);
  out << buf;
  for (int k = x_min; k <= x_max; ++k) {
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">%d</text>\n", xpix(k),
                  height - bottom + 18, k);
    out << buf;
  }
  for (int i = 0; i <= 4; ++i) {
    double v = y_max * i / 4.0;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\">%.2f</text>\n", left - 8,
                  ypix(v) + 4, v);
    out << buf;
    std::snprintf(
        buf, sizeof(buf),
        "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#dddddd\"/>\n", left,
        ypix(v), width - right, ypix(v));
    out << buf;
  }
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">observed timesteps</text>\n",
                (left + width - right) / 2, height - 20);
  out << buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"18\" y=\"%.1f\" transform=\"rotate(-90 18 %.1f)\" "
                "text-anchor=\"middle\">ADE [m]</text>\n",
                (top + height - bottom) / 2, (top + height - bottom) / 2);
  out << buf;
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = colors[s % 5];
    std::string pts;
    for (const auto& [k, v] : series[s].points) {
      std::snprintf(buf, sizeof(buf), "%.1f,%.1f ", xpix(k), ypix(v));
      pts += buf;
    }
    out << "<polyline points=\"" << pts << "\" fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"2\"/>\n";
    for (const auto& [k, v] : series[s].points) {
      std::snprintf(buf, sizeof(buf), "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"3\" fill=\"%s\"/>\n",
                    xpix(k), ypix(v), color);
      out << buf;
    }
    std::snprintf(buf, sizeof(buf),
                  "<rect x=\"%.1f\" y=\"%.1f\" width=\"12\" height=\"12\" fill=\"%s\"/>"
                  "<text x=\"%.1f\" y=\"%.1f\">%s</text>\n",
                  width - right - 170.0, top + 18.0 * s, color, width - right - 152.0,
                  top + 18.0 * s + 10.0, series[s].label.c_str());
    out << buf;
  }
  out << "</svg>\n";
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace snapshot
