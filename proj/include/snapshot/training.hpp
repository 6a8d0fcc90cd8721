#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "snapshot/model.hpp"

namespace snapshot {

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 5e-4;
  int batch_size = 256;
  int max_epochs = 60;  // per stage
  double plateau_factor = 0.5;
  int plateau_patience = 5;
  double plateau_min_delta = 1e-4;
  double plateau_min_lr = 1e-6;
  double noise_std = 0.0;  // meters; Gaussian augmentation of observations
  std::uint64_t seed = 0;
  int threads = 1;  // feature extraction only; the batch loop stays serial

  void validate() const;
};

enum class TrainStage { kStage1 = 1, kStage2 = 2, kBoth = 3 };

// Mean smoothed Euclidean distance over batch and timesteps; the smoothing
// epsilon sits under the root so the loss stays differentiable at zero error.
template <typename T>
ad::Tensor<T> ade_loss(ad::Tape<T>& tape, const ad::Tensor<T>& predicted,
                       const ad::Tensor<T>& ground_truth);

// Adam with decoupled L2 decay: p *= (1 - lr*wd) before the moment update.
template <typename T>
class AdamOptimizer {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  explicit AdamOptimizer(const ParamStore<T>& params);

  void step(ParamStore<T>& params, double lr, double weight_decay);

  std::int64_t step_count() const { return step_count_; }

  // Moment buffers, exposed for resumable checkpoints.
  std::vector<std::vector<T>>& first_moments() { return m_; }
  std::vector<std::vector<T>>& second_moments() { return v_; }
  void set_step_count(std::int64_t n) { step_count_ = n; }

 private:
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
  std::int64_t step_count_ = 0;
};

// Halves the learning rate after `patience` epochs without an improvement
// greater than min_delta; never reduces below min_lr.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, double factor, int patience, double min_delta, double min_lr);

  double observe(double val_metric);  // returns the lr for the next epoch
  double lr() const { return lr_; }

  // State accessors for resumable checkpoints.
  double best() const { return best_; }
  int bad_epochs() const { return bad_epochs_; }
  void restore(double lr, double best, int bad_epochs);

 private:
  double lr_;
  double factor_;
  int patience_;
  double min_delta_;
  double min_lr_;
  double best_;
  int bad_epochs_ = 0;
};

// Cumulative multiplier after feeding a validation history through the
// scheduler (lr_final / lr_initial).
double plateau_multiplier(const std::vector<double>& history, double factor = 0.5,
                          int patience = 5, double min_delta = 1e-4, double min_lr = 1e-6);

// Zeroes every position pair older than the keep_steps most recent in every
// row; type entries untouched. keep_steps = 10 is the identity.
void dropout_history(std::vector<SocialMatrix>& batch, int keep_steps);
SocialMatrix dropout_history(SocialMatrix m, int keep_steps);

// Adds i.i.d. Gaussian noise to every observed positional entry except row
// 0's current position; padding rows and zero-filled timesteps stay exact.
void add_noise(std::vector<SocialMatrix>& batch, double std, Rng& rng);

struct EpochLog {
  int epoch = 0;  // global epoch index, 1-based
  int stage = 1;
  double train_loss = 0.0;
  double val_ade = 0.0;
  double val_fde = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

// CSV with columns epoch,stage,train_loss,val_ade,val_fde,lr,seconds.
std::string metrics_csv(const std::vector<EpochLog>& log);
// The same rows without the wall-clock column, for determinism comparisons.
std::string metrics_csv_deterministic(const std::vector<EpochLog>& log);

struct TrainResult {
  Model best;
  Model final;
  std::vector<EpochLog> log;
  int best_epoch = 0;
  double best_val_ade = 0.0;
};

struct TrainState;  // resumable snapshot, see below

TrainResult train(const std::vector<Example>& train_set, const std::vector<Example>& val_set,
                  const TrainConfig& config, TrainStage stage, const Model* init = nullptr,
                  const TrainState* resume = nullptr,
                  const std::string& checkpoint_dir = "");

// Mid-training snapshot: optimizer moments, scheduler, rng stream, epoch.
struct TrainState {
  Model model;
  std::vector<std::vector<float>> adam_m;
  std::vector<std::vector<float>> adam_v;
  std::int64_t adam_steps = 0;
  double lr = 0.0;
  double sched_best = 0.0;
  int sched_bad_epochs = 0;
  std::string rng_state;
  int epochs_done = 0;  // within the current stage
  int stage = 1;
};

void save_train_state(const TrainState& state, const std::string& path,
                      const std::map<std::string, std::string>& extra_metadata = {});
TrainState load_train_state(const std::string& path);

}  // namespace snapshot
