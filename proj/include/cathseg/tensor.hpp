#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

// Minimal reverse-mode autodiff over dense row-major arrays. Every op records
// its inputs and a backward closure when gradients are enabled and at least one
// input requires a gradient; otherwise results are plain values.
//
// "Convolution" is cross-correlation throughout. All kernels accumulate each
// output element in a fixed order (bias first, then input channel, then kernel
// offsets in row-major order), so results are reproducible bit-for-bit.
namespace cathseg::nn {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class TensorError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<T> values() { return node_->value; }
  std::span<const T> values() const { return node_->value; }
  T operator[](std::size_t i) const { return node_->value[i]; }
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  // Empty span when no gradient has been accumulated.
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  // Fresh leaf sharing no graph or storage.
  Tensor detach() const;
  bool is_same(const Tensor& other) const { return node_ == other.node_; }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Disables graph recording on this thread for the guard's lifetime.
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

// Digest of every branch taken by relu and maxpool on this thread while the
// recorder is alive. Two evaluations with equal digests lie on the same
// smooth piece of a piecewise-smooth function.
class BranchRecorder {
 public:
  BranchRecorder();
  ~BranchRecorder();
  BranchRecorder(const BranchRecorder&) = delete;
  BranchRecorder& operator=(const BranchRecorder&) = delete;

  std::uint64_t digest() const { return digest_; }
  void fold(std::uint64_t word);

 private:
  std::uint64_t digest_ = 0;
  BranchRecorder* previous_;
};
BranchRecorder* active_branch_recorder();

// Records a custom differentiable op. `backward` reads self.grad and
// accumulates into self.inputs[i]->ensure_grad() for inputs that require grad.
template <typename T>
Tensor<T> make_op(Shape shape, std::vector<T> value, const std::vector<Tensor<T>>& inputs,
                  std::function<void(Node<T>&)> backward);

// Reverse pass from a scalar. Gradients accumulate into every leaf that
// requires them; intermediate gradients are released afterwards.
template <typename T>
void backward(const Tensor<T>& loss);

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> relu(const Tensor<T>& x);

// Inverted dropout: survivors are scaled by 1/(1-p_drop); identity when not
// training or when p_drop is zero.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p_drop, bool training, std::uint64_t seed);

// input [Cin,H,W], kernel [Cout,Cin,kh,kw], bias [Cout].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 std::size_t stride = 1, bool same_pad = true);

// input [Cin,D,H,W], kernel [Cout,Cin,kd,kh,kw], bias [Cout]; stride 1.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 bool same_pad = true);

// Transposed convolution. input [Cin,H,W], kernel [Cin,Cout,k,k]; output
// [Cout,H*stride,W*stride]. Kernels wider than the stride are centred by
// cropping floor((k-stride)/2) leading rows/columns.
template <typename T>
Tensor<T> deconv2d(const Tensor<T>& input, const Tensor<T>& kernel, std::size_t stride);

template <typename T>
struct PoolResult {
  Tensor<T> output;
  std::vector<std::uint32_t> argmax;  // flat input index per output element
};

// 2x2 window, stride 2. Ties resolve to the first element in row-major window
// order, which is also where the gradient goes.
template <typename T>
PoolResult<T> maxpool2d(const Tensor<T>& input);

template <typename T>
struct SoftmaxCE {
  Tensor<T> loss;   // scalar, mean negative log-likelihood over voxels
  Tensor<T> probs;  // same shape as logits, not differentiable
};

// Two-class softmax cross-entropy. logits [2, ...spatial]; target holds one
// {0,1} label per spatial element in row-major order.
template <typename T>
SoftmaxCE<T> softmax_ce(const Tensor<T>& logits, std::span<const std::uint8_t> target);

// Channel softmax of [2, ...spatial] logits, without recording.
template <typename T>
Tensor<T> softmax2(const Tensor<T>& logits);

// Glorot-uniform initialisation in +-sqrt(6/(fan_in+fan_out)).
template <typename T>
void init_glorot_uniform(Tensor<T>& t, std::size_t fan_in, std::size_t fan_out, std::uint64_t seed);

}  // namespace cathseg::nn
