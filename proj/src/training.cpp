#include "snapshot/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "snapshot/eval.hpp"

namespace snapshot {

using ad::Tape;
using ad::Tensor;

void TrainConfig::validate() const {
  if (lr < 0.0) throw ValidationError("train config: lr must be >= 0");
  if (weight_decay < 0.0) throw ValidationError("train config: weight_decay must be >= 0");
  if (batch_size < 1) throw ValidationError("train config: batch_size must be >= 1");
  if (max_epochs < 1) throw ValidationError("train config: max_epochs must be >= 1");
  if (plateau_factor <= 0.0 || plateau_factor >= 1.0)
    throw ValidationError("train config: plateau_factor must be in (0, 1)");
  if (plateau_patience < 1) throw ValidationError("train config: plateau_patience must be >= 1");
  if (noise_std < 0.0) throw ValidationError("train config: noise_std must be >= 0");
}

template <typename T>
Tensor<T> ade_loss(Tape<T>& tape, const Tensor<T>& predicted, const Tensor<T>& ground_truth) {
  if (predicted.shape() != ground_truth.shape())
    throw ShapeError("ade_loss: shape mismatch " + ad::shape_str(predicted.shape()) + " vs " +
                     ad::shape_str(ground_truth.shape()));
  return tape.mean(tape.euclidean(predicted, ground_truth, T(1e-12)));
}

template Tensor<float> ade_loss<float>(Tape<float>&, const Tensor<float>&, const Tensor<float>&);
template Tensor<double> ade_loss<double>(Tape<double>&, const Tensor<double>&,
                                         const Tensor<double>&);

template <typename T>
AdamOptimizer<T>::AdamOptimizer(const ParamStore<T>& params) {
  m_.reserve(params.items.size());
  v_.reserve(params.items.size());
  for (const auto& [name, tensor] : params.items) {
    m_.emplace_back(tensor.value().size(), T(0));
    v_.emplace_back(tensor.value().size(), T(0));
  }
}

template <typename T>
void AdamOptimizer<T>::step(ParamStore<T>& params, double lr, double weight_decay) {
  if (m_.size() != params.items.size())
    throw ValidationError("adam: optimizer state does not match the parameter set");
  ++step_count_;
  double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(step_count_));
  double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(step_count_));
  for (std::size_t p = 0; p < params.items.size(); ++p) {
    auto& tensor = params.items[p].second;
    if (tensor.grad().empty())
      throw ValidationError("adam: parameter '" + params.items[p].first + "' has no gradient");
    auto& value = tensor.value();
    const auto& grad = tensor.grad();
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < value.size(); ++i) {
      value[i] *= static_cast<T>(1.0 - lr * weight_decay);
      double g = static_cast<double>(grad[i]);
      m[i] = static_cast<T>(kBeta1 * static_cast<double>(m[i]) + (1.0 - kBeta1) * g);
      v[i] = static_cast<T>(kBeta2 * static_cast<double>(v[i]) + (1.0 - kBeta2) * g * g);
      double m_hat = static_cast<double>(m[i]) / bc1;
      double v_hat = static_cast<double>(v[i]) / bc2;
      value[i] -= static_cast<T>(lr * m_hat / (std::sqrt(v_hat) + kEps));
    }
  }
}

template class AdamOptimizer<float>;
template class AdamOptimizer<double>;

PlateauScheduler::PlateauScheduler(double lr, double factor, int patience, double min_delta,
                                   double min_lr)
    : lr_(lr), factor_(factor), patience_(patience), min_delta_(min_delta), min_lr_(min_lr),
      best_(std::numeric_limits<double>::infinity()) {}

double PlateauScheduler::observe(double val_metric) {
  if (val_metric < best_ - min_delta_) {
    best_ = val_metric;
    bad_epochs_ = 0;
  } else {
    ++bad_epochs_;
    if (bad_epochs_ >= patience_) {
      if (lr_ > min_lr_) lr_ = std::max(lr_ * factor_, min_lr_);
      bad_epochs_ = 0;
    }
  }
  return lr_;
}

void PlateauScheduler::restore(double lr, double best, int bad_epochs) {
  lr_ = lr;
  best_ = best;
  bad_epochs_ = bad_epochs;
}

double plateau_multiplier(const std::vector<double>& history, double factor, int patience,
                          double min_delta, double min_lr) {
  PlateauScheduler sched(1.0, factor, patience, min_delta, min_lr);
  double lr = 1.0;
  for (double v : history) lr = sched.observe(v);
  return lr;
}

SocialMatrix dropout_history(SocialMatrix m, int keep_steps) {
  if (keep_steps < 2 || keep_steps > kObservedSteps)
    throw ValidationError("dropout_history: keep_steps " + std::to_string(keep_steps) +
                          " outside [2, " + std::to_string(kObservedSteps) + "]");
  for (int r = 0; r < SocialMatrix::kRows; ++r) {
    for (int j = keep_steps; j < kObservedSteps; ++j) {
      m.at(r, 1 + 2 * j) = 0.0;
      m.at(r, 2 + 2 * j) = 0.0;
    }
  }
  return m;
}

void dropout_history(std::vector<SocialMatrix>& batch, int keep_steps) {
  for (auto& m : batch) m = dropout_history(m, keep_steps);
}

void add_noise(std::vector<SocialMatrix>& batch, double std, Rng& rng) {
  if (std < 0.0) throw ValidationError("add_noise: std must be >= 0");
  if (std == 0.0) return;
  for (auto& m : batch) {
    for (int r = 0; r < SocialMatrix::kRows; ++r) {
      if (m.at(r, 0) == static_cast<double>(AgentType::kPadding)) continue;
      for (int j = 0; j < kObservedSteps; ++j) {
        if (r == 0 && j == 0) continue;  // the frame origin stays exact
        double& x = m.at(r, 1 + 2 * j);
        double& y = m.at(r, 2 + 2 * j);
        if (x == 0.0 && y == 0.0) continue;  // zero-filled (unobserved) step
        x += rng.normal(0.0, std);
        y += rng.normal(0.0, std);
      }
    }
  }
}

std::string metrics_csv(const std::vector<EpochLog>& log) {
  std::string out = "epoch,stage,train_loss,val_ade,val_fde,lr,seconds\n";
  char buf[256];
  for (const auto& row : log) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%.9g,%.9g,%.9g,%.9g,%.3f\n", row.epoch, row.stage,
                  row.train_loss, row.val_ade, row.val_fde, row.lr, row.seconds);
    out += buf;
  }
  return out;
}

std::string metrics_csv_deterministic(const std::vector<EpochLog>& log) {
  std::string out = "epoch,stage,train_loss,val_ade,val_fde,lr\n";
  char buf[256];
  for (const auto& row : log) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%.9g,%.9g,%.9g,%.9g\n", row.epoch, row.stage,
                  row.train_loss, row.val_ade, row.val_fde, row.lr);
    out += buf;
  }
  return out;
}

namespace {

// Validation ADE/FDE of the current weights over the full histories.
std::pair<double, double> validate_model(const Model& model, const std::vector<Example>& val,
                                         int batch_size) {
  if (val.empty()) return {0.0, 0.0};
  std::vector<std::vector<double>> preds, gts;
  preds.reserve(val.size());
  gts.reserve(val.size());
  for (std::size_t begin = 0; begin < val.size(); begin += static_cast<std::size_t>(batch_size)) {
    std::size_t end = std::min(val.size(), begin + static_cast<std::size_t>(batch_size));
    std::vector<SocialMatrix> social;
    std::vector<MapMatrix> maps;
    for (std::size_t i = begin; i < end; ++i) {
      social.push_back(val[i].social);
      maps.push_back(val[i].map);
    }
    std::vector<double> flat = predict_batch(model, social, maps);
    for (std::size_t i = begin; i < end; ++i) {
      std::size_t o = (i - begin) * 120;
      preds.emplace_back(flat.begin() + static_cast<std::ptrdiff_t>(o),
                         flat.begin() + static_cast<std::ptrdiff_t>(o + 120));
      gts.push_back(val[i].future);
    }
  }
  return {ade(preds, gts), fde(preds, gts)};
}

Model clone_model(const Model& model) {
  Model copy = build_model<float>(model.hp);
  for (std::size_t i = 0; i < copy.params.items.size(); ++i)
    copy.params.items[i].second.value() = model.params.items[i].second.value();
  return copy;
}

struct StageRunner {
  const std::vector<Example>& train_set;
  const std::vector<Example>& val_set;
  const TrainConfig& config;
  Model& model;
  AdamOptimizer<float>& adam;
  PlateauScheduler& sched;
  Rng& rng;
  std::vector<EpochLog>& log;
  Model& best;
  int& best_epoch;
  double& best_val_ade;
  int global_epoch = 0;
  std::string checkpoint_dir;

  void run(int stage, int epochs_done, int epochs_total) {
    const bool with_dropout = stage == 2;

    for (int epoch = epochs_done; epoch < epochs_total; ++epoch) {
      auto t0 = std::chrono::steady_clock::now();
      // The order is re-shuffled from identity so it depends only on the rng
      // stream position; a resumed run replays the same batches.
      std::vector<std::size_t> order(train_set.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      shuffle(order, rng);
      int keep_steps = kObservedSteps;
      double epoch_loss = 0.0;
      std::int64_t seen = 0;
      int batch_index = 0;
      for (std::size_t begin = 0; begin < order.size();
           begin += static_cast<std::size_t>(config.batch_size), ++batch_index) {
        std::size_t end =
            std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
        std::vector<SocialMatrix> social;
        std::vector<MapMatrix> maps;
        std::vector<double> gt_flat;
        for (std::size_t i = begin; i < end; ++i) {
          const Example& ex = train_set[order[i]];
          social.push_back(ex.social);
          maps.push_back(ex.map);
          gt_flat.insert(gt_flat.end(), ex.future.begin(), ex.future.end());
        }
        if (with_dropout) {
          keep_steps = static_cast<int>(rng.uniform_int(2, kObservedSteps));
          dropout_history(social, keep_steps);
        }
        if (config.noise_std > 0.0) add_noise(social, config.noise_std, rng);

        int b = static_cast<int>(end - begin);
        std::vector<float> gt_f(gt_flat.size());
        for (std::size_t i = 0; i < gt_flat.size(); ++i) gt_f[i] = static_cast<float>(gt_flat[i]);

        Tape<float> tape;
        model.params.zero_grad();
        auto pred = model.forward(tape, pack_social<float>(social),
                                  pack_map<float>(maps, model.hp.map_rows));
        auto gt = Tensor<float>::from({b, kHorizonSteps, 2}, std::move(gt_f));
        auto loss = ade_loss(tape, pred, gt);
        double loss_value = static_cast<double>(loss.item());
        if (!std::isfinite(loss_value))
          throw NumericError("NaN loss at stage " + std::to_string(stage) + " epoch " +
                             std::to_string(global_epoch + 1) + " batch " +
                             std::to_string(batch_index));
        tape.backward(loss);
        adam.step(model.params, sched.lr(), config.weight_decay);
        epoch_loss += loss_value * b;
        seen += b;
      }

      auto [val_ade, val_fde] = validate_model(model, val_set, config.batch_size);
      double lr_used = sched.lr();
      sched.observe(val_ade);
      ++global_epoch;

      EpochLog row;
      row.epoch = global_epoch;
      row.stage = stage;
      row.train_loss = seen > 0 ? epoch_loss / static_cast<double>(seen) : 0.0;
      row.val_ade = val_ade;
      row.val_fde = val_fde;
      row.lr = lr_used;
      row.seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      log.push_back(row);

      if (val_ade < best_val_ade || best_epoch == 0) {
        best_val_ade = val_ade;
        best_epoch = global_epoch;
        best = clone_model(model);
      }

      if (!checkpoint_dir.empty()) {
        TrainState state;
        state.model = clone_model(model);
        state.adam_m.assign(adam.first_moments().begin(), adam.first_moments().end());
        state.adam_v.assign(adam.second_moments().begin(), adam.second_moments().end());
        state.adam_steps = adam.step_count();
        state.lr = sched.lr();
        state.sched_best = sched.best();
        state.sched_bad_epochs = sched.bad_epochs();
        state.rng_state = rng.serialize();
        state.epochs_done = epoch + 1;
        state.stage = stage;
        save_train_state(state,
                         (std::filesystem::path(checkpoint_dir) / "last.ckpt").string());
      }
    }
  }
};

}  // namespace

TrainResult train(const std::vector<Example>& train_set, const std::vector<Example>& val_set,
                  const TrainConfig& config, TrainStage stage, const Model* init,
                  const TrainState* resume, const std::string& checkpoint_dir) {
  config.validate();
  if (train_set.empty()) throw ValidationError("train: empty training set");
  if (stage == TrainStage::kStage2 && init == nullptr && resume == nullptr)
    throw ValidationError("train: stage 2 requires an initial checkpoint");

  Model model = init != nullptr ? clone_model(*init)
                                : init_model<float>(Hyperparams{}, config.seed);
  if (resume != nullptr) model = clone_model(resume->model);

  AdamOptimizer<float> adam(model.params);
  PlateauScheduler sched(config.lr, config.plateau_factor, config.plateau_patience,
                         config.plateau_min_delta, config.plateau_min_lr);
  Rng rng(config.seed + 0x5eedu);
  int epochs_done_in_stage = 0;
  int resume_stage = 0;
  if (resume != nullptr) {
    adam.first_moments() = resume->adam_m;
    adam.second_moments() = resume->adam_v;
    adam.set_step_count(resume->adam_steps);
    sched.restore(resume->lr, resume->sched_best, resume->sched_bad_epochs);
    rng.deserialize(resume->rng_state);
    epochs_done_in_stage = resume->epochs_done;
    resume_stage = resume->stage;
  }

  TrainResult result;
  result.best = clone_model(model);
  result.final = clone_model(model);
  result.best_val_ade = std::numeric_limits<double>::infinity();

  StageRunner runner{train_set, val_set,     config,
                     model,     adam,        sched,
                     rng,       result.log,  result.best,
                     result.best_epoch,      result.best_val_ade,
                     0,         checkpoint_dir};

  if (stage == TrainStage::kStage1) {
    int done = resume_stage == 1 ? epochs_done_in_stage : 0;
    runner.global_epoch = done;
    runner.run(1, done, config.max_epochs);
  } else if (stage == TrainStage::kStage2) {
    int done = resume_stage == 2 ? epochs_done_in_stage : 0;
    runner.global_epoch = done;
    runner.run(2, done, config.max_epochs);
  } else {
    int done1 =
        resume_stage == 2 ? config.max_epochs : (resume_stage == 1 ? epochs_done_in_stage : 0);
    runner.global_epoch = done1;
    runner.run(1, done1, config.max_epochs);
    int done2 = resume_stage == 2 ? epochs_done_in_stage : 0;
    runner.global_epoch = config.max_epochs + done2;
    runner.run(2, done2, config.max_epochs);
  }

  result.final = clone_model(model);
  return result;
}

void save_train_state(const TrainState& state, const std::string& path,
                      const std::map<std::string, std::string>& extra_metadata) {
  std::vector<RawTensor> tensors;
  tensors.reserve(state.model.params.items.size() * 3);
  for (const auto& [name, tensor] : state.model.params.items)
    tensors.push_back({name, tensor.shape(), tensor.value()});
  for (std::size_t i = 0; i < state.model.params.items.size(); ++i) {
    const auto& [name, tensor] = state.model.params.items[i];
    tensors.push_back({"opt.m." + name, tensor.shape(), state.adam_m[i]});
    tensors.push_back({"opt.v." + name, tensor.shape(), state.adam_v[i]});
  }
  std::map<std::string, std::string> meta = extra_metadata;
  meta["train.adam_steps"] = std::to_string(state.adam_steps);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", state.lr);
  meta["train.lr"] = buf;
  std::snprintf(buf, sizeof(buf), "%.17g", state.sched_best);
  meta["train.sched_best"] = buf;
  meta["train.sched_bad_epochs"] = std::to_string(state.sched_bad_epochs);
  meta["train.rng_state"] = state.rng_state;
  meta["train.epochs_done"] = std::to_string(state.epochs_done);
  meta["train.stage"] = std::to_string(state.stage);
  save_raw_checkpoint(path, state.model.hp, tensors, meta);
}

TrainState load_train_state(const std::string& path) {
  RawCheckpoint raw = load_raw_checkpoint(path);
  TrainState state;
  state.model = build_model<float>(raw.hp);
  std::size_t n = state.model.params.items.size();
  if (raw.tensors.size() != 3 * n)
    throw ValidationError("'" + path + "' holds no optimizer state (" +
                          std::to_string(raw.tensors.size()) + " tensors, expected " +
                          std::to_string(3 * n) + ")");
  for (std::size_t i = 0; i < n; ++i) {
    auto& [name, tensor] = state.model.params.items[i];
    if (raw.tensors[i].name != name || raw.tensors[i].shape != tensor.shape())
      throw ValidationError("'" + path + "': tensor '" + raw.tensors[i].name +
                            "' does not match parameter '" + name + "'");
    tensor.value() = std::move(raw.tensors[i].data);
  }
  state.adam_m.resize(n);
  state.adam_v.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& mt = raw.tensors[n + 2 * i];
    const auto& vt = raw.tensors[n + 2 * i + 1];
    if (mt.name != "opt.m." + state.model.params.items[i].first ||
        vt.name != "opt.v." + state.model.params.items[i].first)
      throw ValidationError("'" + path + "': unexpected optimizer tensor order");
    state.adam_m[i] = mt.data;
    state.adam_v[i] = vt.data;
  }
  auto need = [&](const char* key) -> std::string {
    auto it = raw.metadata.find(key);
    if (it == raw.metadata.end())
      throw ValidationError("'" + path + "': missing metadata '" + std::string(key) + "'");
    return it->second;
  };
  state.adam_steps = std::stoll(need("train.adam_steps"));
  state.lr = std::stod(need("train.lr"));
  state.sched_best = std::stod(need("train.sched_best"));
  state.sched_bad_epochs = std::stoi(need("train.sched_bad_epochs"));
  state.rng_state = need("train.rng_state");
  state.epochs_done = std::stoi(need("train.epochs_done"));
  state.stage = std::stoi(need("train.stage"));
  return state;
}

}  // namespace snapshot
