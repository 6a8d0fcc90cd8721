#include "snapshot/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace snapshot {

using ad::Shape;
using ad::Tensor;
using ad::Tape;
using ordered_json = nlohmann::ordered_json;

void Hyperparams::validate() const {
  if (d_model <= 0 || n_heads <= 0)
    throw ValidationError("hyperparams: d_model and n_heads must be positive");
  if (d_model % n_heads != 0)
    throw ValidationError("hyperparams: d_model " + std::to_string(d_model) +
                          " not divisible by n_heads " + std::to_string(n_heads));
  if (n_layers_social <= 0 || n_layers_map <= 0)
    throw ValidationError("hyperparams: encoder depths must be positive");
  if (d_ff <= 0) throw ValidationError("hyperparams: d_ff must be positive");
  if (decoder_channels.empty())
    throw ValidationError("hyperparams: decoder channel plan is empty");
  if (social_rows != grid)
    throw ValidationError("hyperparams: social_rows must equal grid for the token projection");
  if (map_rows <= 0 || coarse_steps <= 0)
    throw ValidationError("hyperparams: map_rows and coarse_steps must be positive");
}

namespace {

// Side length after the decoder convolutions (3x3, pad 1; stride 2 on the last).
int decoder_out_side(const Hyperparams& hp) {
  int side = hp.grid;
  for (std::size_t i = 0; i < hp.decoder_channels.size(); ++i) {
    int stride = i + 1 == hp.decoder_channels.size() ? 2 : 1;
    side = (side + 2 - 3) / stride + 1;
  }
  return side;
}

template <typename T>
void add_block_params(ParamStore<T>& params, const std::string& prefix, const Hyperparams& hp) {
  int hd = static_cast<int>(hp.head_dim());
  for (int h = 0; h < hp.n_heads; ++h) {
    std::string head = prefix + ".h" + std::to_string(h);
    params.add(head + ".wq", {hp.d_model, hd});
    params.add(head + ".bq", {hd});
    params.add(head + ".wk", {hp.d_model, hd});
    params.add(head + ".bk", {hd});
    params.add(head + ".wv", {hp.d_model, hd});
    params.add(head + ".bv", {hd});
  }
  params.add(prefix + ".wo", {hp.d_model, hp.d_model});
  params.add(prefix + ".bo", {hp.d_model});
  params.add(prefix + ".ln1.g", {hp.d_model});
  params.add(prefix + ".ln1.b", {hp.d_model});
  params.add(prefix + ".ff.w1", {hp.d_model, hp.d_ff});
  params.add(prefix + ".ff.b1", {hp.d_ff});
  params.add(prefix + ".ff.w2", {hp.d_ff, hp.d_model});
  params.add(prefix + ".ff.b2", {hp.d_model});
  params.add(prefix + ".ln2.g", {hp.d_model});
  params.add(prefix + ".ln2.b", {hp.d_model});
}

// Additive attention bias: -1e9 on keys whose type entry (column 0) is
// PADDING, so masked rows never receive weight.
template <typename T>
Tensor<T> key_mask_bias(const Tensor<T>& tokens_input, int n_query) {
  int batch = tokens_input.shape()[0];
  int n_key = tokens_input.shape()[1];
  int cols = tokens_input.shape()[2];
  std::vector<T> bias(static_cast<std::size_t>(batch) * n_query * n_key, T(0));
  for (int b = 0; b < batch; ++b) {
    for (int k = 0; k < n_key; ++k) {
      bool padded =
          tokens_input.value()[(static_cast<std::size_t>(b) * n_key + k) * cols] == T(0);
      if (!padded) continue;
      for (int q = 0; q < n_query; ++q) {
        bias[(static_cast<std::size_t>(b) * n_query + q) * n_key + k] = T(-1e9);
      }
    }
  }
  return Tensor<T>::from({batch, n_query, n_key}, std::move(bias));
}

// One transformer block: multi-head attention (self when kv == q), residual
// + layer norm, feed-forward with leaky relu, residual + layer norm.
template <typename T>
Tensor<T> attention_block(Tape<T>& tape, const ModelT<T>& model, const std::string& prefix,
                          const Tensor<T>& q_tokens, const Tensor<T>& kv_tokens,
                          const Tensor<T>& bias) {
  const ParamStore<T>& params = model.params;
  const Hyperparams& hp = model.hp;
  T inv_sqrt = T(1) / std::sqrt(static_cast<T>(hp.head_dim()));
  std::vector<Tensor<T>> heads;
  heads.reserve(static_cast<std::size_t>(hp.n_heads));
  for (int h = 0; h < hp.n_heads; ++h) {
    std::string head = prefix + ".h" + std::to_string(h);
    auto q = tape.linear(q_tokens, params.get(head + ".wq"), params.get(head + ".bq"));
    auto k = tape.linear(kv_tokens, params.get(head + ".wk"), params.get(head + ".bk"));
    auto v = tape.linear(kv_tokens, params.get(head + ".wv"), params.get(head + ".bv"));
    auto scores = tape.scale(tape.bmm(q, k, false, true), inv_sqrt);
    auto probs = tape.softmax(tape.add(scores, bias));
    heads.push_back(tape.bmm(probs, v));
  }
  auto attn = tape.linear(tape.concat(heads, 2), params.get(prefix + ".wo"),
                          params.get(prefix + ".bo"));
  auto x = tape.layer_norm(tape.add(q_tokens, attn), params.get(prefix + ".ln1.g"),
                           params.get(prefix + ".ln1.b"));
  auto f = tape.linear(x, params.get(prefix + ".ff.w1"), params.get(prefix + ".ff.b1"));
  f = tape.leaky_relu(f, static_cast<T>(hp.leaky_slope));
  f = tape.linear(f, params.get(prefix + ".ff.w2"), params.get(prefix + ".ff.b2"));
  return tape.layer_norm(tape.add(x, f), params.get(prefix + ".ln2.g"),
                         params.get(prefix + ".ln2.b"));
}

}  // namespace

template <typename T>
typename ModelT<T>::Encoded ModelT<T>::encode_social(Tape<T>& tape,
                                                     const Tensor<T>& social) const {
  if (social.shape().size() != 3 || social.shape()[1] != hp.social_rows ||
      social.shape()[2] != hp.social_cols)
    throw ShapeError("encode_social: expected (B," + std::to_string(hp.social_rows) + "," +
                     std::to_string(hp.social_cols) + "), got " + ad::shape_str(social.shape()));
  const ParamStore<T>& p = params;
  int batch = social.shape()[0];
  auto tokens = tape.linear(social, p.get("social.embed.w"), p.get("social.embed.b"));
  auto pos = p.get("social.pos");
  if (hp.neighbor_pos_encoding) {
    tokens = tape.add_bias(tokens, pos);
  } else {
    // Positional encoding restricted to the focal row; neighbor rows stay
    // position-free so the encoder is permutation-invariant over them.
    auto focal_pos = tape.slice(pos, 0, 0, 1);
    auto rest = Tensor<T>::zeros({hp.social_rows - 1, hp.d_model});
    tokens = tape.add_bias(tokens, tape.concat({focal_pos, rest}, 0));
  }
  auto bias = key_mask_bias<T>(social, hp.social_rows);
  for (int i = 0; i < hp.n_layers_social; ++i) {
    tokens = attention_block(tape, *this, "social.blk" + std::to_string(i), tokens, tokens, bias);
  }
  auto grid = tape.linear(tokens, p.get("social.proj.w"), p.get("social.proj.b"));
  return {tokens, tape.reshape(grid, {batch, 1, hp.grid, hp.grid})};
}

template <typename T>
typename ModelT<T>::Encoded ModelT<T>::encode_map(Tape<T>& tape, const Tensor<T>& map,
                                                  const Tensor<T>& social_tokens) const {
  if (map.shape().size() != 3 || map.shape()[1] != hp.map_rows || map.shape()[2] != hp.map_cols)
    throw ShapeError("encode_map: expected (B," + std::to_string(hp.map_rows) + "," +
                     std::to_string(hp.map_cols) + "), got " + ad::shape_str(map.shape()));
  const ParamStore<T>& p = params;
  int batch = map.shape()[0];
  auto map_tokens = tape.linear(map, p.get("map.embed.w"), p.get("map.embed.b"));
  map_tokens = tape.add_bias(map_tokens, p.get("map.pos"));
  auto bias = key_mask_bias<T>(map, hp.social_rows);
  auto tokens = social_tokens;
  for (int i = 0; i < hp.n_layers_map; ++i) {
    tokens =
        attention_block(tape, *this, "map.blk" + std::to_string(i), tokens, map_tokens, bias);
  }
  auto grid = tape.linear(tokens, p.get("map.proj.w"), p.get("map.proj.b"));
  return {tokens, tape.reshape(grid, {batch, 1, hp.grid, hp.grid})};
}

template <typename T>
Tensor<T> ModelT<T>::decode(Tape<T>& tape, const Tensor<T>& social_grid,
                            const Tensor<T>& map_grid) const {
  const ParamStore<T>& p = params;
  int batch = social_grid.shape()[0];
  auto x = tape.concat({social_grid, map_grid}, 1);  // (B, 2, g, g)
  for (std::size_t i = 0; i < hp.decoder_channels.size(); ++i) {
    int stride = i + 1 == hp.decoder_channels.size() ? 2 : 1;
    std::string name = "dec.conv" + std::to_string(i);
    x = tape.conv2d(x, p.get(name + ".w"), p.get(name + ".b"), stride, 1);
    x = tape.leaky_relu(x, static_cast<T>(hp.leaky_slope));
  }
  int side = decoder_out_side(hp);
  int flat = hp.decoder_channels.back() * side * side;
  x = tape.reshape(x, {batch, flat});
  auto head = tape.linear(x, p.get("dec.head.w"), p.get("dec.head.b"));
  return tape.reshape(head, {batch, hp.coarse_steps, 2});
}

template <typename T>
Tensor<T> ModelT<T>::upsample(Tape<T>& tape, const Tensor<T>& coarse) const {
  int batch = coarse.shape()[0];
  int n = coarse.shape()[1];
  // previous waypoint per step, with the frame origin before the first
  auto origin = Tensor<T>::zeros({batch, 1, 2});
  auto prev = tape.concat({origin, tape.slice(coarse, 1, 0, n - 1)}, 1);
  auto even = tape.scale(tape.add(prev, coarse), T(0.5));
  auto even4 = tape.reshape(even, {batch, n, 1, 2});
  auto odd4 = tape.reshape(coarse, {batch, n, 1, 2});
  auto interleaved = tape.concat({even4, odd4}, 2);  // (B, n, 2, 2)
  return tape.reshape(interleaved, {batch, 2 * n, 2});
}

template <typename T>
Tensor<T> ModelT<T>::forward(Tape<T>& tape, const Tensor<T>& social,
                             const Tensor<T>& map) const {
  auto enc_social = encode_social(tape, social);
  auto enc_map = encode_map(tape, map, enc_social.tokens);
  auto coarse = decode(tape, enc_social.grid, enc_map.grid);
  return upsample(tape, coarse);
}

template <typename T>
ModelT<T> build_model(const Hyperparams& hp) {
  hp.validate();
  ModelT<T> model;
  model.hp = hp;
  auto& params = model.params;
  params.add("social.embed.w", {hp.social_cols, hp.d_model});
  params.add("social.embed.b", {hp.d_model});
  params.add("social.pos", {hp.social_rows, hp.d_model});
  for (int i = 0; i < hp.n_layers_social; ++i)
    add_block_params(params, "social.blk" + std::to_string(i), hp);
  params.add("social.proj.w", {hp.d_model, hp.grid});
  params.add("social.proj.b", {hp.grid});
  params.add("map.embed.w", {hp.map_cols, hp.d_model});
  params.add("map.embed.b", {hp.d_model});
  params.add("map.pos", {hp.map_rows, hp.d_model});
  for (int i = 0; i < hp.n_layers_map; ++i)
    add_block_params(params, "map.blk" + std::to_string(i), hp);
  params.add("map.proj.w", {hp.d_model, hp.grid});
  params.add("map.proj.b", {hp.grid});
  int cin = 2;
  for (std::size_t i = 0; i < hp.decoder_channels.size(); ++i) {
    int cout = hp.decoder_channels[i];
    params.add("dec.conv" + std::to_string(i) + ".w", {cout, cin, 3, 3});
    params.add("dec.conv" + std::to_string(i) + ".b", {cout});
    cin = cout;
  }
  int side = decoder_out_side(hp);
  params.add("dec.head.w", {hp.decoder_channels.back() * side * side, 2 * hp.coarse_steps});
  params.add("dec.head.b", {2 * hp.coarse_steps});
  return model;
}

template <typename T>
ModelT<T> init_model(const Hyperparams& hp, std::uint64_t seed) {
  ModelT<T> model = build_model<T>(hp);
  Rng rng(seed);
  for (auto& [name, tensor] : model.params.items) {
    const Shape& shape = tensor.shape();
    if (shape.size() == 1) {
      // Gains are the only rank-1 parameters initialized to one.
      bool is_gain = name.size() >= 2 && name.compare(name.size() - 2, 2, ".g") == 0;
      std::fill(tensor.value().begin(), tensor.value().end(), is_gain ? T(1) : T(0));
      continue;
    }
    std::int64_t fan_in;
    if (shape.size() == 4) {
      fan_in = static_cast<std::int64_t>(shape[1]) * shape[2] * shape[3];
    } else if (name.size() >= 4 && name.compare(name.size() - 4, 4, ".pos") == 0) {
      fan_in = shape[1];
    } else {
      fan_in = shape[0];
    }
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : tensor.value()) v = static_cast<T>(rng.uniform(-bound, bound));
  }
  std::int64_t count = model.parameter_count();
  if (count < 120000 || count > 160000)
    throw ValidationError("model configuration yields " + std::to_string(count) +
                          " trainable parameters, outside [120000, 160000]");
  return model;
}

template <typename T>
Tensor<T> pack_social(const std::vector<SocialMatrix>& batch) {
  int b = static_cast<int>(batch.size());
  std::vector<T> data;
  data.reserve(static_cast<std::size_t>(b) * SocialMatrix::kRows * SocialMatrix::kCols);
  for (const auto& m : batch) {
    for (double v : m.v) data.push_back(static_cast<T>(v));
  }
  return Tensor<T>::from({b, SocialMatrix::kRows, SocialMatrix::kCols}, std::move(data));
}

template <typename T>
Tensor<T> pack_map(const std::vector<MapMatrix>& batch, int map_rows) {
  int b = static_cast<int>(batch.size());
  std::vector<T> data;
  data.reserve(static_cast<std::size_t>(b) * map_rows * MapMatrix::kCols);
  for (const auto& m : batch) {
    if (m.rows != map_rows)
      throw ShapeError("pack_map: matrix has " + std::to_string(m.rows) + " rows, model expects " +
                       std::to_string(map_rows));
    for (double v : m.v) data.push_back(static_cast<T>(v));
  }
  return Tensor<T>::from({b, map_rows, MapMatrix::kCols}, std::move(data));
}

Prediction predict(const Model& model, const SocialMatrix& social, const MapMatrix& map) {
  Tape<float> tape(false);
  auto social_t = pack_social<float>({social});
  auto map_t = pack_map<float>({map}, model.hp.map_rows);
  auto enc_social = model.encode_social(tape, social_t);
  auto enc_map = model.encode_map(tape, map_t, enc_social.tokens);
  auto coarse = model.decode(tape, enc_social.grid, enc_map.grid);
  auto full = model.upsample(tape, coarse);
  Prediction pred;
  for (int i = 0; i < model.hp.coarse_steps; ++i) {
    pred.coarse[static_cast<std::size_t>(i)] = {
        static_cast<double>(coarse.value()[static_cast<std::size_t>(2 * i)]),
        static_cast<double>(coarse.value()[static_cast<std::size_t>(2 * i + 1)])};
  }
  for (int i = 0; i < 2 * model.hp.coarse_steps; ++i) {
    pred.full[static_cast<std::size_t>(i)] = {
        static_cast<double>(full.value()[static_cast<std::size_t>(2 * i)]),
        static_cast<double>(full.value()[static_cast<std::size_t>(2 * i + 1)])};
  }
  return pred;
}

std::vector<double> predict_batch(const Model& model, const std::vector<SocialMatrix>& social,
                                  const std::vector<MapMatrix>& map) {
  if (social.size() != map.size())
    throw ShapeError("predict_batch: social and map batch sizes differ");
  if (social.empty()) return {};
  // Tiled so large batches keep their cross-attention activations
  // cache-resident; per-agent cost stays flat from tile size upward.
  constexpr std::size_t kTile = 4;
  std::vector<double> out;
  out.reserve(social.size() * 2 * static_cast<std::size_t>(model.hp.coarse_steps) * 2);
  for (std::size_t begin = 0; begin < social.size(); begin += kTile) {
    std::size_t end = std::min(social.size(), begin + kTile);
    std::vector<SocialMatrix> social_tile(social.begin() + static_cast<std::ptrdiff_t>(begin),
                                          social.begin() + static_cast<std::ptrdiff_t>(end));
    std::vector<MapMatrix> map_tile(map.begin() + static_cast<std::ptrdiff_t>(begin),
                                    map.begin() + static_cast<std::ptrdiff_t>(end));
    Tape<float> tape(false);
    auto full = model.forward(tape, pack_social<float>(social_tile),
                              pack_map<float>(map_tile, model.hp.map_rows));
    for (float v : full.value()) out.push_back(static_cast<double>(v));
  }
  return out;
}

namespace {

ordered_json hyperparams_to_json(const Hyperparams& hp) {
  ordered_json j;
  j["d_model"] = hp.d_model;
  j["n_heads"] = hp.n_heads;
  j["n_layers_social"] = hp.n_layers_social;
  j["n_layers_map"] = hp.n_layers_map;
  j["d_ff"] = hp.d_ff;
  j["decoder_channels"] = hp.decoder_channels;
  j["leaky_slope"] = hp.leaky_slope;
  j["social_rows"] = hp.social_rows;
  j["social_cols"] = hp.social_cols;
  j["map_rows"] = hp.map_rows;
  j["map_cols"] = hp.map_cols;
  j["coarse_steps"] = hp.coarse_steps;
  j["grid"] = hp.grid;
  j["neighbor_pos_encoding"] = hp.neighbor_pos_encoding;
  return j;
}

Hyperparams hyperparams_from_json(const ordered_json& j) {
  Hyperparams hp;
  hp.d_model = j.at("d_model").get<int>();
  hp.n_heads = j.at("n_heads").get<int>();
  hp.n_layers_social = j.at("n_layers_social").get<int>();
  hp.n_layers_map = j.at("n_layers_map").get<int>();
  hp.d_ff = j.at("d_ff").get<int>();
  hp.decoder_channels = j.at("decoder_channels").get<std::vector<int>>();
  hp.leaky_slope = j.at("leaky_slope").get<double>();
  hp.social_rows = j.at("social_rows").get<int>();
  hp.social_cols = j.at("social_cols").get<int>();
  hp.map_rows = j.at("map_rows").get<int>();
  hp.map_cols = j.at("map_cols").get<int>();
  hp.coarse_steps = j.at("coarse_steps").get<int>();
  hp.grid = j.at("grid").get<int>();
  hp.neighbor_pos_encoding = j.at("neighbor_pos_encoding").get<bool>();
  return hp;
}

}  // namespace

void save_raw_checkpoint(const std::string& path, const Hyperparams& hp,
                         const std::vector<RawTensor>& tensors,
                         const std::map<std::string, std::string>& metadata) {
  ordered_json header;
  header["hyperparams"] = hyperparams_to_json(hp);
  ordered_json jtensors = ordered_json::array();
  for (const auto& t : tensors) {
    if (static_cast<std::int64_t>(t.data.size()) != ad::numel(t.shape))
      throw ValidationError("checkpoint tensor '" + t.name + "' data does not match its shape");
    ordered_json jt;
    jt["name"] = t.name;
    jt["shape"] = t.shape;
    jtensors.push_back(std::move(jt));
  }
  header["tensors"] = std::move(jtensors);
  ordered_json meta;
  for (const auto& [k, v] : metadata) meta[k] = v;
  header["metadata"] = std::move(meta);
  std::string header_str = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint '" + path + "' for writing");
  out.write("SNAP", 4);
  std::uint32_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  std::uint32_t header_len = static_cast<std::uint32_t>(header_str.size());
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const auto& t : tensors) {
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }
  if (!out) throw IoError("write failed for checkpoint '" + path + "'");
}

RawCheckpoint load_raw_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "SNAP", 4) != 0)
    throw ValidationError("'" + path + "' is not a checkpoint (bad magic)");
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!in || version != 1)
    throw ValidationError("'" + path + "': unsupported checkpoint version " +
                          std::to_string(version));
  std::uint32_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (!in) throw ValidationError("'" + path + "': truncated checkpoint header");
  std::string header_str(header_len, '\0');
  in.read(header_str.data(), header_len);
  if (!in) throw ValidationError("'" + path + "': truncated checkpoint header");
  ordered_json header;
  try {
    header = ordered_json::parse(header_str);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("'" + path + "': corrupt checkpoint header: " + e.what());
  }

  RawCheckpoint raw;
  raw.hp = hyperparams_from_json(header.at("hyperparams"));
  if (header.contains("metadata")) {
    for (auto& [k, v] : header["metadata"].items()) raw.metadata[k] = v.get<std::string>();
  }

  // Validate the full payload length up front so a truncated file never
  // yields a partial result.
  std::int64_t expected_floats = 0;
  for (const auto& jt : header.at("tensors"))
    expected_floats += ad::numel(jt.at("shape").get<Shape>());
  auto data_begin = in.tellg();
  in.seekg(0, std::ios::end);
  std::int64_t available = static_cast<std::int64_t>(in.tellg() - data_begin);
  if (available != expected_floats * static_cast<std::int64_t>(sizeof(float)))
    throw ValidationError("'" + path + "': corrupt checkpoint: expected " +
                          std::to_string(expected_floats * sizeof(float)) +
                          " payload bytes, found " + std::to_string(available));
  in.seekg(data_begin);

  for (const auto& jt : header.at("tensors")) {
    RawTensor t;
    t.name = jt.at("name").get<std::string>();
    t.shape = jt.at("shape").get<Shape>();
    t.data.resize(static_cast<std::size_t>(ad::numel(t.shape)));
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!in) throw ValidationError("'" + path + "': truncated checkpoint payload");
    raw.tensors.push_back(std::move(t));
  }
  return raw;
}

void save_checkpoint(const Model& model, const std::string& path,
                     const std::map<std::string, std::string>& metadata) {
  std::vector<RawTensor> tensors;
  tensors.reserve(model.params.items.size());
  for (const auto& [name, tensor] : model.params.items)
    tensors.push_back({name, tensor.shape(), tensor.value()});
  save_raw_checkpoint(path, model.hp, tensors, metadata);
}

Checkpoint load_checkpoint(const std::string& path) {
  RawCheckpoint raw = load_raw_checkpoint(path);
  Checkpoint ckpt;
  ckpt.model = build_model<float>(raw.hp);
  ckpt.metadata = std::move(raw.metadata);
  if (raw.tensors.size() != ckpt.model.params.items.size())
    throw ValidationError("'" + path + "': checkpoint lists " +
                          std::to_string(raw.tensors.size()) + " tensors, model has " +
                          std::to_string(ckpt.model.params.items.size()));
  for (std::size_t i = 0; i < ckpt.model.params.items.size(); ++i) {
    auto& [name, tensor] = ckpt.model.params.items[i];
    RawTensor& t = raw.tensors[i];
    if (t.name != name || t.shape != tensor.shape())
      throw ValidationError("'" + path + "': corrupt checkpoint: tensor " + std::to_string(i) +
                            " is '" + t.name + "' " + ad::shape_str(t.shape) +
                            ", model expects '" + name + "' " + ad::shape_str(tensor.shape()));
    tensor.value() = std::move(t.data);
  }
  return ckpt;
}

template struct ModelT<float>;
template struct ModelT<double>;
template ModelT<float> build_model<float>(const Hyperparams&);
template ModelT<double> build_model<double>(const Hyperparams&);
template ModelT<float> init_model<float>(const Hyperparams&, std::uint64_t);
template ModelT<double> init_model<double>(const Hyperparams&, std::uint64_t);
template ad::Tensor<float> pack_social<float>(const std::vector<SocialMatrix>&);
template ad::Tensor<double> pack_social<double>(const std::vector<SocialMatrix>&);
template ad::Tensor<float> pack_map<float>(const std::vector<MapMatrix>&, int);
template ad::Tensor<double> pack_map<double>(const std::vector<MapMatrix>&, int);

}  // namespace snapshot
