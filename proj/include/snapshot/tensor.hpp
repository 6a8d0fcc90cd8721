#pragma once

// Dense n-dimensional tensors with reverse-mode automatic differentiation.
// A Tape records executed operations in order; backward() replays the
// recorded closures in exact reverse. The scalar type is a template
// parameter: float for training/inference, double for gradient checking.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "snapshot/common.hpp"

namespace snapshot::ad {

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int e : shape) n *= e;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

template <typename T>
struct TensorData {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // same length as value when requires_grad
  bool requires_grad = false;
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto node = std::make_shared<TensorData<T>>();
    node->value.assign(static_cast<std::size_t>(numel(shape)), T(0));
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    if (requires_grad) node->grad.assign(node->value.size(), T(0));
    return Tensor(std::move(node));
  }

  static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (static_cast<std::int64_t>(data.size()) != numel(shape))
      throw ShapeError("tensor: data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    auto node = std::make_shared<TensorData<T>>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    if (requires_grad) node->grad.assign(node->value.size(), T(0));
    return Tensor(std::move(node));
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t size() const { return static_cast<std::int64_t>(node_->value.size()); }
  bool requires_grad() const { return node_->requires_grad; }

  std::vector<T>& value() { return node_->value; }
  const std::vector<T>& value() const { return node_->value; }
  std::vector<T>& grad() { return node_->grad; }
  const std::vector<T>& grad() const { return node_->grad; }

  T item() const {
    if (size() != 1) throw ShapeError("item: tensor is not scalar, shape " + shape_str(shape()));
    return node_->value[0];
  }

  void zero_grad() {
    if (node_->requires_grad) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  std::shared_ptr<TensorData<T>> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<TensorData<T>> node) : node_(std::move(node)) {}
  std::shared_ptr<TensorData<T>> node_;

  template <typename U>
  friend class Tape;
};

// C (m,n) = or += op_a(A) * op_b(B) where op transposes when flagged.
// A is (m,k) untransposed or (k,m) transposed; B is (k,n) or (n,k).
template <typename T>
void gemm(const T* a, const T* b, T* c, int m, int k, int n, bool trans_a, bool trans_b,
          bool accumulate) {
  if (!accumulate) std::fill(c, c + static_cast<std::size_t>(m) * n, T(0));
  if (!trans_a && !trans_b) {
    for (int i = 0; i < m; ++i) {
      const T* ai = a + static_cast<std::size_t>(i) * k;
      T* ci = c + static_cast<std::size_t>(i) * n;
      for (int p = 0; p < k; ++p) {
        T av = ai[p];
        const T* bp = b + static_cast<std::size_t>(p) * n;
        for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
      }
    }
  } else if (!trans_a && trans_b) {
    for (int i = 0; i < m; ++i) {
      const T* ai = a + static_cast<std::size_t>(i) * k;
      T* ci = c + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        const T* bj = b + static_cast<std::size_t>(j) * k;
        T acc = T(0);
        for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
        ci[j] += acc;
      }
    }
  } else if (trans_a && !trans_b) {
    for (int p = 0; p < k; ++p) {
      const T* ap = a + static_cast<std::size_t>(p) * m;
      const T* bp = b + static_cast<std::size_t>(p) * n;
      for (int i = 0; i < m; ++i) {
        T av = ap[i];
        T* ci = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
      }
    }
  } else {
    for (int i = 0; i < m; ++i) {
      T* ci = c + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        const T* bj = b + static_cast<std::size_t>(j) * k;
        T acc = T(0);
        for (int p = 0; p < k; ++p) acc += a[static_cast<std::size_t>(p) * m + i] * bj[p];
        ci[j] += acc;
      }
    }
  }
}

template <typename T>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  std::size_t size() const { return ops_.size(); }

  void clear() {
    ops_.clear();
    outputs_.clear();
  }

  // All recorded op outputs are finite (fuzz-test hook).
  bool all_finite() const {
    for (const auto& out : outputs_) {
      for (T v : out->value) {
        if (!std::isfinite(static_cast<double>(v))) return false;
      }
    }
    return true;
  }

  // ---- forward operations ------------------------------------------------

  Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false,
                   bool trans_b = false) {
    if (a.shape().size() != 2 || b.shape().size() != 2)
      throw ShapeError("matmul: expected 2-d tensors, got " + shape_str(a.shape()) + " x " +
                       shape_str(b.shape()));
    int m = trans_a ? a.shape()[1] : a.shape()[0];
    int k = trans_a ? a.shape()[0] : a.shape()[1];
    int kb = trans_b ? b.shape()[1] : b.shape()[0];
    int n = trans_b ? b.shape()[0] : b.shape()[1];
    if (k != kb)
      throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                       shape_str(b.shape()));
    Tensor<T> out = make_output({m, n}, {a, b});
    gemm(a.value().data(), b.value().data(), out.value().data(), m, k, n, trans_a, trans_b,
         false);
    if (out.requires_grad()) {
      record([a, b, out, m, k, n, trans_a, trans_b]() {
        matmul_backward(a, b, out, m, k, n, trans_a, trans_b);
      });
    }
    track(out);
    return out;
  }

  // Batched matmul over the leading axis: (B,m,k) x (B,k,n) -> (B,m,n).
  Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false,
                bool trans_b = false) {
    if (a.shape().size() != 3 || b.shape().size() != 3 || a.shape()[0] != b.shape()[0])
      throw ShapeError("bmm: expected matching 3-d tensors, got " + shape_str(a.shape()) +
                       " x " + shape_str(b.shape()));
    int batch = a.shape()[0];
    int m = trans_a ? a.shape()[2] : a.shape()[1];
    int k = trans_a ? a.shape()[1] : a.shape()[2];
    int kb = trans_b ? b.shape()[2] : b.shape()[1];
    int n = trans_b ? b.shape()[1] : b.shape()[2];
    if (k != kb)
      throw ShapeError("bmm: incompatible shapes " + shape_str(a.shape()) + " x " +
                       shape_str(b.shape()));
    Tensor<T> out = make_output({batch, m, n}, {a, b});
    std::int64_t sa = static_cast<std::int64_t>(a.shape()[1]) * a.shape()[2];
    std::int64_t sb = static_cast<std::int64_t>(b.shape()[1]) * b.shape()[2];
    std::int64_t so = static_cast<std::int64_t>(m) * n;
    for (int i = 0; i < batch; ++i) {
      gemm(a.value().data() + i * sa, b.value().data() + i * sb, out.value().data() + i * so, m,
           k, n, trans_a, trans_b, false);
    }
    if (out.requires_grad()) {
      record([a, b, out, batch, m, k, n, sa, sb, so, trans_a, trans_b]() {
        for (int i = 0; i < batch; ++i) {
          matmul_backward_raw(a.value().data() + i * sa, b.value().data() + i * sb,
                              out.grad().data() + i * so,
                              a.requires_grad() ? a.node()->grad.data() + i * sa : nullptr,
                              b.requires_grad() ? b.node()->grad.data() + i * sb : nullptr, m, k,
                              n, trans_a, trans_b);
        }
      });
    }
    track(out);
    return out;
  }

  Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
      throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
    Tensor<T> out = make_output(a.shape(), {a, b});
    const auto& av = a.value();
    const auto& bv = b.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    if (out.requires_grad()) {
      record([a, b, out]() {
        const auto& g = out.grad();
        if (a.requires_grad()) {
          auto& ga = a.node()->grad;
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (b.requires_grad()) {
          auto& gb = b.node()->grad;
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
      });
    }
    track(out);
    return out;
  }

  // Adds `b` broadcast over the leading axes of `x`; b's shape must be a
  // suffix of x's shape (the bias-add case).
  Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b) {
    const Shape& xs = x.shape();
    const Shape& bs = b.shape();
    if (bs.size() > xs.size() ||
        !std::equal(bs.begin(), bs.end(), xs.end() - static_cast<std::ptrdiff_t>(bs.size())))
      throw ShapeError("add_bias: " + shape_str(bs) + " is not a suffix of " + shape_str(xs));
    Tensor<T> out = make_output(xs, {x, b});
    std::size_t bn = b.value().size();
    const auto& xv = x.value();
    const auto& bv = b.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] + bv[i % bn];
    if (out.requires_grad()) {
      record([x, b, out, bn]() {
        const auto& g = out.grad();
        if (x.requires_grad()) {
          auto& gx = x.node()->grad;
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
        if (b.requires_grad()) {
          auto& gb = b.node()->grad;
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % bn] += g[i];
        }
      });
    }
    track(out);
    return out;
  }

  Tensor<T> scale(const Tensor<T>& a, T factor) {
    Tensor<T> out = make_output(a.shape(), {a});
    const auto& av = a.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * factor;
    if (out.requires_grad()) {
      record([a, out, factor]() {
        if (!a.requires_grad()) return;
        const auto& g = out.grad();
        auto& ga = a.node()->grad;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
      });
    }
    track(out);
    return out;
  }

  Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& base = parts[0].shape();
    if (axis < 0 || axis >= static_cast<int>(base.size()))
      throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " +
                       shape_str(base));
    Shape out_shape = base;
    out_shape[static_cast<std::size_t>(axis)] = 0;
    for (const auto& p : parts) {
      Shape s = p.shape();
      if (s.size() != base.size())
        throw ShapeError("concat: rank mismatch " + shape_str(s) + " vs " + shape_str(base));
      for (std::size_t d = 0; d < s.size(); ++d) {
        if (d != static_cast<std::size_t>(axis) && s[d] != base[d])
          throw ShapeError("concat: shape mismatch " + shape_str(s) + " vs " + shape_str(base));
      }
      out_shape[static_cast<std::size_t>(axis)] += s[static_cast<std::size_t>(axis)];
    }
    Tensor<T> out = make_output(out_shape, parts);
    std::int64_t outer = 1;
    for (int d = 0; d < axis; ++d) outer *= base[static_cast<std::size_t>(d)];
    std::int64_t inner = 1;
    for (std::size_t d = static_cast<std::size_t>(axis) + 1; d < base.size(); ++d)
      inner *= base[d];
    std::int64_t out_block = out_shape[static_cast<std::size_t>(axis)] * inner;
    std::int64_t offset = 0;
    for (const auto& p : parts) {
      std::int64_t block = p.shape()[static_cast<std::size_t>(axis)] * inner;
      for (std::int64_t o = 0; o < outer; ++o) {
        std::copy_n(p.value().data() + o * block, block,
                    out.value().data() + o * out_block + offset);
      }
      offset += block;
    }
    if (out.requires_grad()) {
      std::vector<std::int64_t> blocks;
      blocks.reserve(parts.size());
      for (const auto& p : parts)
        blocks.push_back(p.shape()[static_cast<std::size_t>(axis)] * inner);
      record([parts, out, outer, out_block, blocks = std::move(blocks)]() {
        std::int64_t offset = 0;
        for (std::size_t pi = 0; pi < parts.size(); ++pi) {
          const auto& p = parts[pi];
          std::int64_t block = blocks[pi];
          if (p.requires_grad()) {
            auto& gp = p.node()->grad;
            for (std::int64_t o = 0; o < outer; ++o) {
              const T* src = out.grad().data() + o * out_block + offset;
              T* dst = gp.data() + o * block;
              for (std::int64_t i = 0; i < block; ++i) dst[i] += src[i];
            }
          }
          offset += block;
        }
      });
    }
    track(out);
    return out;
  }

  Tensor<T> slice(const Tensor<T>& a, int axis, int start, int len) {
    const Shape& s = a.shape();
    if (axis < 0 || axis >= static_cast<int>(s.size()))
      throw ShapeError("slice: axis " + std::to_string(axis) + " out of range for " +
                       shape_str(s));
    if (start < 0 || len <= 0 || start + len > s[static_cast<std::size_t>(axis)])
      throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                       std::to_string(start + len) + ") out of bounds for " + shape_str(s));
    Shape out_shape = s;
    out_shape[static_cast<std::size_t>(axis)] = len;
    Tensor<T> out = make_output(out_shape, {a});
    std::int64_t outer = 1;
    for (int d = 0; d < axis; ++d) outer *= s[static_cast<std::size_t>(d)];
    std::int64_t inner = 1;
    for (std::size_t d = static_cast<std::size_t>(axis) + 1; d < s.size(); ++d) inner *= s[d];
    std::int64_t in_block = s[static_cast<std::size_t>(axis)] * inner;
    std::int64_t out_block = len * inner;
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy_n(a.value().data() + o * in_block + start * inner, out_block,
                  out.value().data() + o * out_block);
    }
    if (out.requires_grad()) {
      record([a, out, outer, inner, in_block, out_block, start]() {
        if (!a.requires_grad()) return;
        auto& ga = a.node()->grad;
        for (std::int64_t o = 0; o < outer; ++o) {
          const T* src = out.grad().data() + o * out_block;
          T* dst = ga.data() + o * in_block + start * inner;
          for (std::int64_t i = 0; i < out_block; ++i) dst[i] += src[i];
        }
      });
    }
    track(out);
    return out;
  }

  // x (..., in) * w (in, out) + b (out).
  Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    const Shape& xs = x.shape();
    if (w.shape().size() != 2 || xs.empty() || xs.back() != w.shape()[0])
      throw ShapeError("linear: incompatible shapes " + shape_str(xs) + " x " +
                       shape_str(w.shape()));
    int in = w.shape()[0];
    int out_dim = w.shape()[1];
    if (b.shape() != Shape{out_dim})
      throw ShapeError("linear: bias shape " + shape_str(b.shape()) + " does not match " +
                       std::to_string(out_dim));
    int rows = static_cast<int>(x.size() / in);
    Shape out_shape = xs;
    out_shape.back() = out_dim;
    Tensor<T> out = make_output(out_shape, {x, w, b});
    gemm(x.value().data(), w.value().data(), out.value().data(), rows, in, out_dim, false,
         false, false);
    {
      auto& ov = out.value();
      const auto& bv = b.value();
      for (int r = 0; r < rows; ++r) {
        T* row = ov.data() + static_cast<std::size_t>(r) * out_dim;
        for (int j = 0; j < out_dim; ++j) row[j] += bv[static_cast<std::size_t>(j)];
      }
    }
    if (out.requires_grad()) {
      record([x, w, b, out, rows, in, out_dim]() {
        const T* g = out.grad().data();
        if (x.requires_grad())
          gemm(g, w.value().data(), x.node()->grad.data(), rows, out_dim, in, false, true, true);
        if (w.requires_grad())
          gemm(x.value().data(), g, w.node()->grad.data(), in, rows, out_dim, true, false, true);
        if (b.requires_grad()) {
          auto& gb = b.node()->grad;
          for (int r = 0; r < rows; ++r) {
            const T* row = g + static_cast<std::size_t>(r) * out_dim;
            for (int j = 0; j < out_dim; ++j) gb[static_cast<std::size_t>(j)] += row[j];
          }
        }
      });
    }
    track(out);
    return out;
  }

  // Softmax over the last axis.
  Tensor<T> softmax(const Tensor<T>& a) {
    const Shape& s = a.shape();
    if (s.empty()) throw ShapeError("softmax: scalar input");
    int d = s.back();
    int rows = static_cast<int>(a.size() / d);
    Tensor<T> out = make_output(s, {a});
    for (int r = 0; r < rows; ++r) {
      const T* xin = a.value().data() + static_cast<std::size_t>(r) * d;
      T* y = out.value().data() + static_cast<std::size_t>(r) * d;
      T mx = xin[0];
      for (int j = 1; j < d; ++j) mx = std::max(mx, xin[j]);
      T sum = T(0);
      for (int j = 0; j < d; ++j) {
        y[j] = std::exp(xin[j] - mx);
        sum += y[j];
      }
      for (int j = 0; j < d; ++j) y[j] /= sum;
    }
    if (out.requires_grad()) {
      record([a, out, rows, d]() {
        if (!a.requires_grad()) return;
        for (int r = 0; r < rows; ++r) {
          const T* y = out.value().data() + static_cast<std::size_t>(r) * d;
          const T* gy = out.grad().data() + static_cast<std::size_t>(r) * d;
          T* gx = a.node()->grad.data() + static_cast<std::size_t>(r) * d;
          T dot = T(0);
          for (int j = 0; j < d; ++j) dot += y[j] * gy[j];
          for (int j = 0; j < d; ++j) gx[j] += y[j] * (gy[j] - dot);
        }
      });
    }
    track(out);
    return out;
  }

  // Layer normalization over the last axis with learned gain and bias.
  Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                       T eps = T(1e-5)) {
    const Shape& s = x.shape();
    if (s.empty()) throw ShapeError("layer_norm: scalar input");
    int d = s.back();
    if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
      throw ShapeError("layer_norm: gain/bias must have shape (" + std::to_string(d) + ")");
    int rows = static_cast<int>(x.size() / d);
    Tensor<T> out = make_output(s, {x, gain, bias});
    // Normalized values are re-derived in backward from (value - bias) / gain;
    // storing x_hat would be cheaper but this keeps the node layout uniform.
    std::vector<T> inv_sigma(static_cast<std::size_t>(rows));
    for (int r = 0; r < rows; ++r) {
      const T* xin = x.value().data() + static_cast<std::size_t>(r) * d;
      T* y = out.value().data() + static_cast<std::size_t>(r) * d;
      T mu = T(0);
      for (int j = 0; j < d; ++j) mu += xin[j];
      mu /= d;
      T var = T(0);
      for (int j = 0; j < d; ++j) var += (xin[j] - mu) * (xin[j] - mu);
      var /= d;
      T inv = T(1) / std::sqrt(var + eps);
      inv_sigma[static_cast<std::size_t>(r)] = inv;
      for (int j = 0; j < d; ++j)
        y[j] = (xin[j] - mu) * inv * gain.value()[static_cast<std::size_t>(j)] +
               bias.value()[static_cast<std::size_t>(j)];
    }
    if (out.requires_grad()) {
      record([x, gain, bias, out, rows, d, inv_sigma = std::move(inv_sigma)]() {
        for (int r = 0; r < rows; ++r) {
          const T* xin = x.value().data() + static_cast<std::size_t>(r) * d;
          const T* gy = out.grad().data() + static_cast<std::size_t>(r) * d;
          T inv = inv_sigma[static_cast<std::size_t>(r)];
          T mu = T(0);
          for (int j = 0; j < d; ++j) mu += xin[j];
          mu /= d;
          T mean_h = T(0), mean_hx = T(0);
          for (int j = 0; j < d; ++j) {
            T xhat = (xin[j] - mu) * inv;
            T h = gain.value()[static_cast<std::size_t>(j)] * gy[j];
            mean_h += h;
            mean_hx += h * xhat;
          }
          mean_h /= d;
          mean_hx /= d;
          for (int j = 0; j < d; ++j) {
            T xhat = (xin[j] - mu) * inv;
            if (x.requires_grad()) {
              T h = gain.value()[static_cast<std::size_t>(j)] * gy[j];
              x.node()->grad[static_cast<std::size_t>(r) * d + static_cast<std::size_t>(j)] +=
                  (h - mean_h - xhat * mean_hx) * inv;
            }
            if (gain.requires_grad())
              gain.node()->grad[static_cast<std::size_t>(j)] += gy[j] * xhat;
            if (bias.requires_grad()) bias.node()->grad[static_cast<std::size_t>(j)] += gy[j];
          }
        }
      });
    }
    track(out);
    return out;
  }

  Tensor<T> leaky_relu(const Tensor<T>& a, T slope = T(0.01)) {
    Tensor<T> out = make_output(a.shape(), {a});
    const auto& av = a.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] > T(0) ? av[i] : slope * av[i];
    if (out.requires_grad()) {
      record([a, out, slope]() {
        if (!a.requires_grad()) return;
        const auto& g = out.grad();
        const auto& av = a.value();
        auto& ga = a.node()->grad;
        for (std::size_t i = 0; i < g.size(); ++i)
          ga[i] += g[i] * (av[i] > T(0) ? T(1) : slope);
      });
    }
    track(out);
    return out;
  }

  // x (B,Cin,H,W) * w (Cout,Cin,kh,kw) + b (Cout), zero padding.
  Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride = 1,
                   int pad = 0) {
    if (x.shape().size() != 4 || w.shape().size() != 4)
      throw ShapeError("conv2d: expected 4-d input and kernel, got " + shape_str(x.shape()) +
                       " and " + shape_str(w.shape()));
    if (stride <= 0) throw ValidationError("conv2d: stride must be positive");
    int batch = x.shape()[0], cin = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
    int cout = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
    if (w.shape()[1] != cin)
      throw ShapeError("conv2d: channel mismatch " + shape_str(x.shape()) + " vs " +
                       shape_str(w.shape()));
    if (b.shape() != Shape{cout})
      throw ShapeError("conv2d: bias shape " + shape_str(b.shape()) + " does not match " +
                       std::to_string(cout));
    int oh = (h + 2 * pad - kh) / stride + 1;
    int ow = (wd + 2 * pad - kw) / stride + 1;
    if (oh <= 0 || ow <= 0)
      throw ShapeError("conv2d: kernel " + shape_str(w.shape()) + " too large for input " +
                       shape_str(x.shape()));
    Tensor<T> out = make_output({batch, cout, oh, ow}, {x, w, b});
    auto x_at = [&](int n, int c, int i, int j) -> T {
      return x.value()[((static_cast<std::size_t>(n) * cin + c) * h + i) * wd + j];
    };
    for (int n = 0; n < batch; ++n) {
      for (int co = 0; co < cout; ++co) {
        for (int i = 0; i < oh; ++i) {
          for (int j = 0; j < ow; ++j) {
            T acc = b.value()[static_cast<std::size_t>(co)];
            for (int ci = 0; ci < cin; ++ci) {
              for (int u = 0; u < kh; ++u) {
                int ii = i * stride - pad + u;
                if (ii < 0 || ii >= h) continue;
                for (int v = 0; v < kw; ++v) {
                  int jj = j * stride - pad + v;
                  if (jj < 0 || jj >= wd) continue;
                  acc += x_at(n, ci, ii, jj) *
                         w.value()[((static_cast<std::size_t>(co) * cin + ci) * kh + u) * kw + v];
                }
              }
            }
            out.value()[((static_cast<std::size_t>(n) * cout + co) * oh + i) * ow + j] = acc;
          }
        }
      }
    }
    if (out.requires_grad()) {
      record([x, w, b, out, batch, cin, h, wd, cout, kh, kw, oh, ow, stride, pad]() {
        for (int n = 0; n < batch; ++n) {
          for (int co = 0; co < cout; ++co) {
            for (int i = 0; i < oh; ++i) {
              for (int j = 0; j < ow; ++j) {
                T g = out.grad()[((static_cast<std::size_t>(n) * cout + co) * oh + i) * ow + j];
                if (b.requires_grad()) b.node()->grad[static_cast<std::size_t>(co)] += g;
                for (int ci = 0; ci < cin; ++ci) {
                  for (int u = 0; u < kh; ++u) {
                    int ii = i * stride - pad + u;
                    if (ii < 0 || ii >= h) continue;
                    for (int v = 0; v < kw; ++v) {
                      int jj = j * stride - pad + v;
                      if (jj < 0 || jj >= wd) continue;
                      std::size_t xi =
                          ((static_cast<std::size_t>(n) * cin + ci) * h + ii) * wd + jj;
                      std::size_t wi =
                          ((static_cast<std::size_t>(co) * cin + ci) * kh + u) * kw + v;
                      if (x.requires_grad()) x.node()->grad[xi] += g * w.value()[wi];
                      if (w.requires_grad()) w.node()->grad[wi] += g * x.value()[xi];
                    }
                  }
                }
              }
            }
          }
        }
      });
    }
    track(out);
    return out;
  }

  Tensor<T> reshape(const Tensor<T>& a, Shape new_shape) {
    if (numel(new_shape) != a.size())
      throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                       shape_str(new_shape));
    Tensor<T> out = make_output(new_shape, {a});
    out.value() = a.value();
    if (out.requires_grad()) {
      record([a, out]() {
        if (!a.requires_grad()) return;
        const auto& g = out.grad();
        auto& ga = a.node()->grad;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      });
    }
    track(out);
    return out;
  }

  // Mean over all elements -> scalar.
  Tensor<T> mean(const Tensor<T>& a) {
    if (a.size() == 0) throw ShapeError("mean: empty tensor");
    Tensor<T> out = make_output({1}, {a});
    T acc = T(0);
    for (T v : a.value()) acc += v;
    out.value()[0] = acc / static_cast<T>(a.size());
    if (out.requires_grad()) {
      record([a, out]() {
        if (!a.requires_grad()) return;
        T g = out.grad()[0] / static_cast<T>(a.size());
        auto& ga = a.node()->grad;
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
      });
    }
    track(out);
    return out;
  }

  // Elementwise (a - b)^2.
  Tensor<T> squared_error(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
      throw ShapeError("squared_error: shape mismatch " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
    Tensor<T> out = make_output(a.shape(), {a, b});
    const auto& av = a.value();
    const auto& bv = b.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < ov.size(); ++i) {
      T d = av[i] - bv[i];
      ov[i] = d * d;
    }
    if (out.requires_grad()) {
      record([a, b, out]() {
        const auto& g = out.grad();
        const auto& av = a.value();
        const auto& bv = b.value();
        for (std::size_t i = 0; i < g.size(); ++i) {
          T d = T(2) * (av[i] - bv[i]) * g[i];
          if (a.requires_grad()) a.node()->grad[i] += d;
          if (b.requires_grad()) b.node()->grad[i] -= d;
        }
      });
    }
    track(out);
    return out;
  }

  // Smoothed Euclidean distance over the last axis:
  // out = sqrt(sum_d (a - b)^2 + eps), shape = input shape minus last axis.
  Tensor<T> euclidean(const Tensor<T>& a, const Tensor<T>& b, T eps = T(1e-12)) {
    if (a.shape() != b.shape())
      throw ShapeError("euclidean: shape mismatch " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
    const Shape& s = a.shape();
    if (s.empty()) throw ShapeError("euclidean: scalar input");
    int d = s.back();
    int rows = static_cast<int>(a.size() / d);
    Shape out_shape(s.begin(), s.end() - 1);
    if (out_shape.empty()) out_shape = {1};
    Tensor<T> out = make_output(out_shape, {a, b});
    for (int r = 0; r < rows; ++r) {
      const T* ar = a.value().data() + static_cast<std::size_t>(r) * d;
      const T* br = b.value().data() + static_cast<std::size_t>(r) * d;
      T acc = eps;
      for (int j = 0; j < d; ++j) acc += (ar[j] - br[j]) * (ar[j] - br[j]);
      out.value()[static_cast<std::size_t>(r)] = std::sqrt(acc);
    }
    if (out.requires_grad()) {
      record([a, b, out, rows, d]() {
        for (int r = 0; r < rows; ++r) {
          T dist = out.value()[static_cast<std::size_t>(r)];
          T g = out.grad()[static_cast<std::size_t>(r)];
          if (dist <= T(0)) continue;
          const T* ar = a.value().data() + static_cast<std::size_t>(r) * d;
          const T* br = b.value().data() + static_cast<std::size_t>(r) * d;
          for (int j = 0; j < d; ++j) {
            T dv = g * (ar[j] - br[j]) / dist;
            if (a.requires_grad())
              a.node()->grad[static_cast<std::size_t>(r) * d + static_cast<std::size_t>(j)] += dv;
            if (b.requires_grad())
              b.node()->grad[static_cast<std::size_t>(r) * d + static_cast<std::size_t>(j)] -= dv;
          }
        }
      });
    }
    track(out);
    return out;
  }

  // Populates grads of every requires_grad tensor reachable from `loss`.
  void backward(Tensor<T>& loss) {
    if (loss.size() != 1)
      throw ValidationError("backward: loss must be scalar, got shape " +
                            shape_str(loss.shape()));
    if (!loss.requires_grad())
      throw ValidationError("backward: loss does not require gradients (empty tape?)");
    loss.grad()[0] = T(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

 private:
  template <typename Container>
  Tensor<T> make_output(Shape shape, const Container& inputs) {
    bool rg = false;
    if (recording_) {
      for (const auto& in : inputs) rg = rg || in.requires_grad();
    }
    return Tensor<T>::zeros(std::move(shape), rg);
  }

  Tensor<T> make_output(Shape shape, std::initializer_list<Tensor<T>> inputs) {
    return make_output<std::initializer_list<Tensor<T>>>(std::move(shape), inputs);
  }

  void record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }

  void track(const Tensor<T>& out) { outputs_.push_back(out.node()); }

  static void matmul_backward_raw(const T* a, const T* b, const T* gc, T* ga, T* gb, int m,
                                  int k, int n, bool trans_a, bool trans_b) {
    if (!trans_a && !trans_b) {
      if (ga) gemm(gc, b, ga, m, n, k, false, true, true);
      if (gb) gemm(a, gc, gb, k, m, n, true, false, true);
    } else if (!trans_a && trans_b) {
      if (ga) gemm(gc, b, ga, m, n, k, false, false, true);
      if (gb) gemm(gc, a, gb, n, m, k, true, false, true);
    } else if (trans_a && !trans_b) {
      if (ga) gemm(b, gc, ga, k, n, m, false, true, true);
      if (gb) gemm(a, gc, gb, k, m, n, false, false, true);
    } else {
      if (ga) gemm(b, gc, ga, k, n, m, true, true, true);
      if (gb) gemm(gc, a, gb, n, m, k, true, true, true);
    }
  }

  static void matmul_backward(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& out,
                              int m, int k, int n, bool trans_a, bool trans_b) {
    matmul_backward_raw(a.value().data(), b.value().data(), out.grad().data(),
                        a.requires_grad() ? a.node()->grad.data() : nullptr,
                        b.requires_grad() ? b.node()->grad.data() : nullptr, m, k, n, trans_a,
                        trans_b);
  }

  bool recording_;
  std::vector<std::function<void()>> ops_;
  std::vector<std::shared_ptr<TensorData<T>>> outputs_;
};

// Compares the tape gradient of a scalar-valued function against central
// finite differences; returns the max relative error with denominator
// max(|analytic|, |numeric|, 1e-8). When max_checks > 0 only a subset of
// entries is probed: a deterministic stride by default, the largest-gradient
// components with select_largest. skip_nonsmooth discards probes whose
// difference quotients disagree between eps and eps/2 (the probe straddles a
// kink of a piecewise-linear activation, where central differences estimate
// neither one-sided derivative).
template <typename F>
double grad_check(F f, Tensor<double> x, double eps = 1e-3, int max_checks = -1,
                  bool select_largest = false, bool skip_nonsmooth = false) {
  Tape<double> tape;
  Tensor<double> loss = f(tape, x);
  if (loss.size() != 1) throw ValidationError("grad_check: function must return a scalar");
  x.zero_grad();
  // A loss with no gradient path (constant function) leaves all-zero grads.
  if (loss.requires_grad()) tape.backward(loss);
  std::vector<double> analytic = x.grad();

  std::int64_t n = x.size();
  std::int64_t checks = max_checks > 0 ? std::min<std::int64_t>(max_checks, n) : n;
  std::vector<std::int64_t> candidates;
  if (checks >= n) {
    for (std::int64_t i = 0; i < n; ++i) candidates.push_back(i);
  } else if (select_largest) {
    candidates.resize(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) candidates[static_cast<std::size_t>(i)] = i;
    std::sort(candidates.begin(), candidates.end(), [&](std::int64_t a, std::int64_t b) {
      return std::abs(analytic[static_cast<std::size_t>(a)]) >
             std::abs(analytic[static_cast<std::size_t>(b)]);
    });
  } else {
    std::int64_t stride = std::max<std::int64_t>(1, n / checks);
    for (std::int64_t i = 0; i < n; i += stride) candidates.push_back(i);
  }

  auto central = [&](std::int64_t idx, double h) {
    double saved = x.value()[static_cast<std::size_t>(idx)];
    Tape<double> fwd(false);
    x.value()[static_cast<std::size_t>(idx)] = saved + h;
    double up = f(fwd, x).item();
    x.value()[static_cast<std::size_t>(idx)] = saved - h;
    double down = f(fwd, x).item();
    x.value()[static_cast<std::size_t>(idx)] = saved;
    return (up - down) / (2.0 * h);
  };

  double max_err = 0.0;
  std::int64_t accepted = 0;
  for (std::int64_t idx : candidates) {
    if (accepted >= checks) break;
    double numeric = central(idx, eps);
    if (skip_nonsmooth) {
      double finer = central(idx, eps / 2.0);
      if (std::abs(numeric - finer) >
          1e-3 * std::max({std::abs(numeric), std::abs(finer), 1e-8}))
        continue;
    }
    ++accepted;
    double a = analytic[static_cast<std::size_t>(idx)];
    double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
    max_err = std::max(max_err, err);
  }
  return max_err;
}

}  // namespace snapshot::ad
