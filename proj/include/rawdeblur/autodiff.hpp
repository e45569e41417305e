#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rawdeblur/errors.hpp"
#include "rawdeblur/raw_core.hpp"

// Reverse-mode differentiation over NCHW tensors. Every op records a closure
// that pushes the output gradient to its parents; backward() replays them in
// reverse topological order. All kernels are single-threaded and accumulate
// in a fixed order, so results are bitwise reproducible.
namespace rawdeblur::ad {

/// Rank 0 (scalar) or rank 4 (N, C, H, W).
struct Shape {
  std::array<int, 4> dims{1, 1, 1, 1};
  int rank = 0;

  static Shape scalar() { return {}; }
  static Shape nchw(int n, int c, int h, int w) { return Shape{{n, c, h, w}, 4}; }

  int n() const { return dims[0]; }
  int c() const { return dims[1]; }
  int h() const { return dims[2]; }
  int w() const { return dims[3]; }
  std::size_t numel() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2] * dims[3];
  }
  std::string str() const;

  friend bool operator==(const Shape& a, const Shape& b) = default;
};

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  ///< empty until something is accumulated into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  const char* op = "leaf";

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <typename T>
class Tensor {
 public:
  using Scalar = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(const Shape& shape, bool requires_grad = false) { return full(shape, T(0), requires_grad); }
  static Tensor full(const Shape& shape, T value, bool requires_grad = false);
  static Tensor from(const Shape& shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false) { return full(Shape::scalar(), value, requires_grad); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->value.size(); }

  std::span<T> data() { return node_->value; }
  std::span<const T> data() const { return node_->value; }
  /// Empty span when no gradient has been accumulated.
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> grad() { return node_->grad; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }
  bool is_leaf() const { return !node_->backward_fn; }

  /// Value of a single-element tensor.
  T item() const;
  /// Fresh leaf holding a copy of the values (no graph links).
  Tensor detach() const { return from(shape(), node_->value, false); }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Disables graph recording on the current thread while alive.
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

/// Enables NaN/Inf detection on the current thread while alive. Every op
/// output and every gradient produced by backward() is scanned.
class CheckedModeGuard {
 public:
  explicit CheckedModeGuard(bool on = true);
  ~CheckedModeGuard();
  CheckedModeGuard(const CheckedModeGuard&) = delete;
  CheckedModeGuard& operator=(const CheckedModeGuard&) = delete;

 private:
  bool previous_;
};
bool checked_mode();

/// Accumulates d(loss)/d(leaf) into every leaf that requires a gradient.
/// Leaf gradients add up across calls; interior gradients are recomputed.
template <typename T>
void backward(const Tensor<T>& loss);

// Element-wise arithmetic. Operands must have identical shapes.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T offset);

template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T> Tensor<T> tanh(const Tensor<T>& x);
/// Gradient passes where lo <= x <= hi.
template <typename T> Tensor<T> clamp(const Tensor<T>& x, T lo, T hi);

template <typename T> Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);

/// Top-left window of the spatial extent.
template <typename T> Tensor<T> crop(const Tensor<T>& x, int height, int width);
/// Extends the bottom and right edges by reflection (edge sample not repeated).
/// Even amounts keep the CFA phase of a mosaic.
template <typename T> Tensor<T> reflect_pad(const Tensor<T>& x, int bottom, int right);

/// N x 1 x H x W mosaic to N x 4 x H/2 x W/2 planes in (R, G0, B, G1) order.
template <typename T> Tensor<T> pack_planes(const Tensor<T>& x, const raw::CfaPattern& cfa);
/// Inverse of pack_planes.
template <typename T> Tensor<T> unpack_planes(const Tensor<T>& x, const raw::CfaPattern& cfa);

/// Per-channel separable filter with reflect padding (edge sample not repeated).
/// `taps` must have odd length smaller than twice the spatial extent.
template <typename T> Tensor<T> separable_filter(const Tensor<T>& x, std::span<const double> taps);

struct ConvOptions {
  int stride = 1;
  int padding = 0;
  int output_padding = 0;  ///< transposed convolution only
};

/// Cross-correlation. weight: (Cout, Cin, K, K); bias: (1, Cout, 1, 1) or undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, ConvOptions opt);

/// Adjoint of conv2d in its data argument. weight: (Cin, Cout, K, K); bias: (1, Cout, 1, 1) or undefined.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, ConvOptions opt);

int conv_output_extent(int in, int kernel, int stride, int padding);
int conv_transpose_output_extent(int in, int kernel, int stride, int padding, int output_padding);

template <typename T>
struct BatchNormState {
  Tensor<T> gamma;  ///< (1, C, 1, 1)
  Tensor<T> beta;   ///< (1, C, 1, 1)
  std::vector<T> running_mean;
  std::vector<T> running_var;
  double momentum = 0.1;
  double eps = 1e-5;
  bool training = true;

  explicit BatchNormState(int channels);
  int channels() const { return static_cast<int>(running_mean.size()); }
};

/// Train mode normalizes with batch statistics and updates the running
/// estimates (unbiased variance); eval mode uses the running estimates.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, BatchNormState<T>& state);

}  // namespace rawdeblur::ad
