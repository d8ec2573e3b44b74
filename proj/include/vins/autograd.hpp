#pragma once

// Minimal reverse-mode automatic differentiation over dense double tensors.
//
// A Var is a handle to a graph node. Ops build the graph eagerly; calling
// backward() on a scalar root accumulates gradients into every reachable
// node created with requires_grad. Graph construction is skipped entirely
// while a NoGradGuard is alive.

#include <array>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "vins/tensor.hpp"

namespace vins::ag {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  /// Gradient buffer, zero-initialised on first use.
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  /// Direct access for optimisers; never call on an interior graph node.
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  void zero_grad() { node_->grad = Tensor(); }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  /// Value of a one-element tensor.
  double item() const;
  Node* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const noexcept { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

Var constant(Tensor t);
Var parameter(Tensor t);
/// Same value, cut from the graph.
Var detach(const Var& v);

/// Back-propagates from a one-element root. Interior gradients are released
/// afterwards; leaf gradients accumulate across calls.
void backward(const Var& root);

// Elementwise.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var abs(const Var& a);
Var square(const Var& a);
Var softplus(const Var& a);
Var sigmoid(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var relu(const Var& a);

// Reductions.
Var sum(const Var& a);
Var mean(const Var& a);
/// Mean over every axis but the first: (C, ...) -> (C).
Var channel_mean(const Var& a);

// Shape.
Var reshape(const Var& a, Shape shape);
/// Concatenation along axis 0; trailing dimensions must agree.
Var concat(std::span<const Var> parts);
/// Stacks (C, H, W) frames into a (C, T, H, W) clip.
Var stack_time(std::span<const Var> frames);
/// (E) -> (E, h, w) with every location holding a copy.
Var tile(const Var& e, int h, int w);
/// Sum_n weights[n] * parts[n].
Var weighted_sum(std::span<const Var> parts, std::span<const double> weights);

struct ConvOpts {
  std::array<int, 3> stride{1, 1, 1};  // depth, height, width
  std::array<int, 3> pad{0, 0, 0};
};

inline ConvOpts conv2d_opts(int stride, int pad) { return {{1, stride, stride}, {0, pad, pad}}; }

/// Cross-correlation. x: (C, H, W) with w: (O, C, kh, kw), or
/// x: (C, D, H, W) with w: (O, C, kd, kh, kw). bias: (O) or undefined.
Var conv(const Var& x, const Var& w, const Var& bias, const ConvOpts& opts);

/// Adjoint of conv. x: (Ci, [D,] H, W), w: (Ci, Co, [kd,] kh, kw).
Var conv_transpose(const Var& x, const Var& w, const Var& bias, const ConvOpts& opts);

/// conv() applied to an input that is constant over space: e is (C) for a
/// (C, H, W) input or (C, D) for a (C, D, H, W) input. Equivalent to tiling
/// e and convolving with w, without materialising the tiled tensor.
Var tiled_conv(const Var& e, const Var& w, std::span<const int> input_spatial,
               const ConvOpts& opts);

/// Per-channel normalisation over all remaining axes, no affine part.
Var instance_norm(const Var& x, double eps = 1e-5);

/// x: (C), w: (O, C), b: (O).
Var linear(const Var& x, const Var& w, const Var& b);

}  // namespace vins::ag
