#pragma once

#include <functional>
#include <memory>
#include <random>
#include <type_traits>
#include <vector>

#include "smg/tensor.hpp"

/**
 * Minimal reverse-mode differentiation over NCHW tensors.
 *
 * Every operation returns a Var holding its forward value. When gradient
 * recording is enabled and at least one input requires a gradient, the Var
 * also keeps the closure that propagates its gradient to the inputs.
 * Parameters are leaf Vars whose gradients accumulate until cleared.
 */
namespace smg::ad {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  /// Gradient storage for accumulation, zero-initialised on first use.
  Tensor<T>& grad_buffer() {
    if (grad.shape() != value.shape() || grad.size() != value.size()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

bool grad_enabled() noexcept;

/// Disables graph recording for its lifetime (inference passes).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var parameter(Tensor<T> value) { return Var(std::move(value), true); }

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& grad_buffer() { return node_->grad_buffer(); }
  const Shape& shape() const { return node_->value.shape(); }
  int dim(int i) const { return node_->value.dim(i); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  const std::shared_ptr<Node<T>>& node() const noexcept { return node_; }

  T item() const {
    if (node_->value.size() != 1) throw ShapeError("item() on non-scalar " + shape_string(shape()));
    return node_->value[0];
  }

  void zero_grad() {
    if (node_) node_->grad = Tensor<T>();
  }

  /// Back-propagates from this scalar into every reachable leaf.
  void backward() const;

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Wraps `value` as the output of an operation over `inputs`.
template <typename T>
Var<T> make_op(Tensor<T> value, const std::vector<Var<T>>& inputs,
               std::type_identity_t<std::function<void(Node<T>&)>> fn);

enum class Padding { zero, reflect };

struct ConvOptions {
  int stride = 1;
  int pad = 0;
  Padding padding = Padding::zero;
};

/// Mirror index without edge repetition, valid for arbitrarily distant i.
inline int reflect_index(int i, int n) noexcept {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

/// x: [N,Cin,H,W], weight: [Cout,Cin,k,k], bias: [Cout] or undefined.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, ConvOptions opt);

template <typename T>
Var<T> instance_norm(const Var<T>& x, double eps = 1e-5);

template <typename T>
Var<T> relu(const Var<T>& x);

template <typename T>
Var<T> leaky_relu(const Var<T>& x, double slope);

template <typename T>
Var<T> tanh(const Var<T>& x);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> scale(const Var<T>& a, double s);

/// Elementwise product with a constant tensor of the same shape.
template <typename T>
Var<T> mul_const(const Var<T>& a, const Tensor<T>& m);

template <typename T>
Var<T> upsample_nearest2x(const Var<T>& x);

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts);

/// Inverted dropout; `rate` is the drop probability.
template <typename T>
Var<T> dropout(const Var<T>& x, double rate, std::mt19937_64& rng);

template <typename T>
Var<T> max_pool2x2(const Var<T>& x);

/// [N,C,H,W] -> [N,C,C], normalised by C*H*W.
template <typename T>
Var<T> gram(const Var<T>& x);

template <typename T>
Var<T> detach(const Var<T>& x);

template <typename T>
Var<T> mean_abs_diff(const Var<T>& a, const Var<T>& b);

/// mean |(a - b) * w| with w a constant of the same shape.
template <typename T>
Var<T> weighted_mean_abs_diff(const Var<T>& a, const Var<T>& b, const Tensor<T>& w);

template <typename T>
Var<T> mean_square_to(const Var<T>& x, double target);

template <typename T>
Var<T> mean_square_diff(const Var<T>& a, const Var<T>& b);

/// sum(x * w) with w a constant of the same shape.
template <typename T>
Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& w);

template <typename T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) {
  return add(a, b);
}

template <typename T>
Var<T> operator-(const Var<T>& a, const Var<T>& b) {
  return sub(a, b);
}

template <typename T>
Var<T> operator*(double s, const Var<T>& a) {
  return scale(a, s);
}

}  // namespace smg::ad
