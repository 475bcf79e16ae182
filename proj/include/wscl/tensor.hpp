#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace wscl {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape) noexcept;
std::string shape_string(const Shape& shape);

/// Per-class inclusion flags for masked losses (1 = class participates).
using ClassMask = std::vector<std::uint8_t>;

namespace detail {

struct Node {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty when absent
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;
};

}  // namespace detail

/// Dense row-major float tensor with an optional gradient.
///
/// Tensor is a shared handle: copying a Tensor aliases the same storage, which
/// is what the recorded computation graph needs. Use clone() for a deep,
/// detached copy. Operations on tensors that require gradients record a
/// backward closure; backward() replays them in reverse topological order.
class Tensor {
public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<float> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const float> data() const;
  std::span<float> mutable_data();
  float item() const;

  bool requires_grad() const;
  void set_requires_grad(bool value);

  bool has_grad() const;
  std::span<const float> grad() const;
  std::span<float> mutable_grad();
  /// Allocates (or overwrites) the gradient with zeros.
  void zero_grad();
  void clear_grad();

  /// Deep copy of the values; the copy is a leaf with no gradient.
  Tensor clone() const;

  /// Identity of the underlying storage (for optimizer state lookup).
  const void* id() const noexcept { return node_.get(); }

  // Graph construction, used by the op implementations.
  static Tensor from_node(std::shared_ptr<detail::Node> node);
  const std::shared_ptr<detail::Node>& node() const noexcept { return node_; }

private:
  std::shared_ptr<detail::Node> node_;
};

/// While alive, operations do not record a backward graph on this thread.
class NoGradGuard {
public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
  bool previous_;
};

bool grad_mode_enabled() noexcept;

bool all_finite(std::span<const float> values) noexcept;

// ---------------------------------------------------------------------------
// Differentiable operations
// ---------------------------------------------------------------------------

/// [n x k] * [k x m] -> [n x m]
Tensor matmul(const Tensor& a, const Tensor& b);
/// Adds bias[c] along axis 1 of a [B x C x ...] tensor.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float factor);
Tensor relu(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
/// Stride-1 convolution with zero "same" padding. x [B,C,H,W], w [O,C,K,K]
/// with odd K, bias [O].
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias);
/// Non-overlapping max pooling; trailing rows/columns that do not fill a
/// window are dropped.
Tensor max_pool2d(const Tensor& x, std::size_t window);

/// Mean over the batch of -log softmax(logits)[label], where the softmax only
/// runs over classes enabled in class_mask (all classes when the mask is
/// empty). Accumulates in double.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels,
                             std::span<const std::uint8_t> class_mask = {});

/// Mean squared difference; gradient flows only into logits.
Tensor mse_logits(const Tensor& logits, const Tensor& stored);

/// Softmax of one row, computed in double.
std::vector<double> softmax(std::span<const float> row);

/// Populates grad on every tensor that requires it and feeds into loss.
/// Gradients accumulate across calls; reset them explicitly between steps.
void backward(const Tensor& loss);

}  // namespace wscl
