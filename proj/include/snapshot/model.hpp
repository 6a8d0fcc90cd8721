#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "snapshot/features.hpp"
#include "snapshot/tensor.hpp"

namespace snapshot {

struct Hyperparams {
  int d_model = 64;
  int n_heads = 4;
  int n_layers_social = 2;
  int n_layers_map = 2;
  int d_ff = 64;
  std::vector<int> decoder_channels = {16, 32};  // 3x3 convs; stride 2 on the last
  double leaky_slope = 0.01;
  int social_rows = SocialMatrix::kRows;
  int social_cols = SocialMatrix::kCols;
  int map_rows = 100;
  int map_cols = MapMatrix::kCols;
  int coarse_steps = 30;
  int grid = 8;  // each encoder emits 1 x grid x grid per sample
  bool neighbor_pos_encoding = true;

  void validate() const;
  std::int64_t head_dim() const { return d_model / n_heads; }
};

// Named parameters in creation order; the checkpoint serializes this order.
template <typename T>
struct ParamStore {
  std::vector<std::pair<std::string, ad::Tensor<T>>> items;

  ad::Tensor<T> add(const std::string& name, ad::Shape shape) {
    auto t = ad::Tensor<T>::zeros(std::move(shape), /*requires_grad=*/true);
    items.emplace_back(name, t);
    return t;
  }

  ad::Tensor<T>& get(const std::string& name) {
    for (auto& [n, t] : items) {
      if (n == name) return t;
    }
    throw ValidationError("no parameter named '" + name + "'");
  }

  const ad::Tensor<T>& get(const std::string& name) const {
    for (const auto& [n, t] : items) {
      if (n == name) return t;
    }
    throw ValidationError("no parameter named '" + name + "'");
  }

  std::int64_t total_size() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : items) n += t.size();
    return n;
  }

  void zero_grad() {
    for (auto& [name, t] : items) t.zero_grad();
  }
};

// 30 coarse waypoints at 0.2 s plus the 60-step upsampled trajectory at
// 0.1 s, both in the focal frame.
struct Prediction {
  std::array<std::array<double, 2>, 30> coarse{};
  std::array<std::array<double, 2>, 60> full{};
};

template <typename T>
struct ModelT {
  Hyperparams hp;
  ParamStore<T> params;

  std::int64_t parameter_count() const { return params.total_size(); }

  // (B, social_rows, social_cols) -> tokens (B, social_rows, d_model) and
  // grid (B, 1, grid, grid). Zero-type rows are masked out of attention keys.
  struct Encoded {
    ad::Tensor<T> tokens;
    ad::Tensor<T> grid;
  };

  Encoded encode_social(ad::Tape<T>& tape, const ad::Tensor<T>& social) const;
  Encoded encode_map(ad::Tape<T>& tape, const ad::Tensor<T>& map,
                     const ad::Tensor<T>& social_tokens) const;
  // Two (B,1,grid,grid) embeddings -> coarse displacements (B, coarse_steps, 2).
  ad::Tensor<T> decode(ad::Tape<T>& tape, const ad::Tensor<T>& social_grid,
                       const ad::Tensor<T>& map_grid) const;
  // (B,30,2) -> (B,60,2); odd indices are the coarse points, even indices
  // midpoints, with the frame origin before the first point.
  ad::Tensor<T> upsample(ad::Tape<T>& tape, const ad::Tensor<T>& coarse) const;

  // Full composition: features in, upsampled trajectory out.
  ad::Tensor<T> forward(ad::Tape<T>& tape, const ad::Tensor<T>& social,
                        const ad::Tensor<T>& map) const;
};

// Builds the parameter set (zeros) for the given hyperparameters.
template <typename T>
ModelT<T> build_model(const Hyperparams& hp);

// Deterministic init: uniform fan-in scaling for linear/conv weights, zero
// biases, unit layer-norm gains. Enforces the trainable-parameter budget
// [120k, 160k] and throws a configuration error naming the count otherwise.
template <typename T>
ModelT<T> init_model(const Hyperparams& hp, std::uint64_t seed);

using Model = ModelT<float>;

// Packs a batch of feature matrices into model input tensors.
template <typename T>
ad::Tensor<T> pack_social(const std::vector<SocialMatrix>& batch);
template <typename T>
ad::Tensor<T> pack_map(const std::vector<MapMatrix>& batch, int map_rows);

// Inference helpers (no gradient recording).
Prediction predict(const Model& model, const SocialMatrix& social, const MapMatrix& map);
// Returns (B, 60, 2) row-major.
std::vector<double> predict_batch(const Model& model, const std::vector<SocialMatrix>& social,
                                  const std::vector<MapMatrix>& map);

// Checkpoint format: magic "SNAP", u32 version = 1, u32 JSON header length,
// JSON header (hyperparams, named tensor list with shapes, metadata), then
// each tensor as little-endian 32-bit floats in header order.
void save_checkpoint(const Model& model, const std::string& path,
                     const std::map<std::string, std::string>& metadata = {});
struct Checkpoint {
  Model model;
  std::map<std::string, std::string> metadata;
};
Checkpoint load_checkpoint(const std::string& path);

// Same container without the model interpretation; used for optimizer state.
struct RawTensor {
  std::string name;
  ad::Shape shape;
  std::vector<float> data;
};
struct RawCheckpoint {
  Hyperparams hp;
  std::vector<RawTensor> tensors;
  std::map<std::string, std::string> metadata;
};
void save_raw_checkpoint(const std::string& path, const Hyperparams& hp,
                         const std::vector<RawTensor>& tensors,
                         const std::map<std::string, std::string>& metadata);
RawCheckpoint load_raw_checkpoint(const std::string& path);

}  // namespace snapshot
