#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "comofusion/tensor.hpp"

// Minimal reverse-mode differentiation over NCHW tensors: just the operators
// the consistency and fusion networks are built from.
namespace comofusion::ag {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into inputs' grads.
  std::function<void(Node&)> backward;

  /// Zero-initialised gradient buffer matching value's shape.
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient accumulated by backward(); empty when none flowed here.
  const Tensor& grad() const { return node_->grad; }
  void zero_grad() { node_->grad = Tensor(); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Back-propagates `seed` (shaped like root) through the recorded graph.
/// Leaf gradients accumulate; intermediate buffers are released.
void backward(const Var& root, const Tensor& seed);

Var constant(Tensor value);

/// 2-D cross-correlation with zero padding. weight is (Cout, Cin, k, k),
/// bias is (1, Cout, 1, 1).
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding);
/// x (N, In, 1, 1), weight (Out, In, 1, 1), bias (1, Out, 1, 1).
Var linear(const Var& x, const Var& weight, const Var& bias);

Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
/// a * x + b * y
Var axpby(double a, const Var& x, double b, const Var& y);

Var relu(const Var& x);
Var silu(const Var& x);
Var sigmoid(const Var& x);
Var tanh(const Var& x);

/// h * (1 + scale) + shift with (scale, shift) the two halves of the channel
/// axis of `scale_shift` (N, 2C, 1, 1).
Var modulate(const Var& h, const Var& scale_shift);

Var concat_channels(const Var& a, const Var& b);
Var upsample_nearest2x(const Var& x);
/// (N, C, H, W) -> (N, C, 1, 1)
Var global_avg_pool(const Var& x);
/// u * s broadcast over space; s is (N, C, 1, 1).
Var scale_channels(const Var& u, const Var& s);
/// u * q broadcast over channels; q is (N, 1, H, W).
Var scale_spatial(const Var& u, const Var& q);

}  // namespace comofusion::ag
