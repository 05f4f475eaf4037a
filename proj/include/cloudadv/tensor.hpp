#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cloudadv/random.hpp"

// Small dense tensor library with tape-based reverse-mode differentiation.
// It covers exactly what the grid generator/discriminator and the linear toy
// classifier need: no general broadcasting, no dynamic graphs beyond the tape.
// Instantiated for float (training) and double (gradient checks).
namespace cloudadv::tensor {

using Shape = std::vector<std::size_t>;

// Storage starts on a fixed boundary so vectorized kernels split their work
// the same way on every run; otherwise float results drift with addresses.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <typename U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept {
    return true;
  }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::size_t shape_size(const Shape& shape) noexcept;
std::string shape_string(const Shape& shape);

// Output side length of a strided cross-correlation.
std::size_t conv_output_size(std::size_t input, std::size_t kernel, std::size_t stride, std::size_t padding);
// Output side length of the transposed convolution (no output padding).
std::size_t deconv_output_size(std::size_t input, std::size_t kernel, std::size_t stride, std::size_t padding);

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  Buffer<T> data_;
};

// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
};

// Records operations in execution order; backward() replays them in exact
// reverse order and accumulates gradients additively at fan-out. Inputs are
// never mutated. A tape is single-threaded.
template <typename T>
class Tape {
 public:
  Var leaf(Tensor<T> value, bool requires_grad = false);

  const Tensor<T>& value(Var v) const;
  // Zero tensor when no gradient reached `v`.
  Tensor<T> grad(Var v) const;
  bool requires_grad(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  // x [B, in], w [in, out], b [out] -> x w + b.
  Var fully_connected(Var x, Var w, Var b);
  // x [B, Cin, H, W], kernel [Cout, Cin, k, k], bias [Cout].
  Var conv2d(Var x, Var kernel, Var bias, std::size_t stride, std::size_t padding);
  // x [B, Cin, H, W], kernel [Cin, Cout, k, k], bias [Cout].
  Var deconv2d(Var x, Var kernel, Var bias, std::size_t stride, std::size_t padding);

  // The subgradient at 0 is `slope`.
  Var leaky_relu(Var x, T slope = T(0.2));
  Var tanh(Var x);
  Var sigmoid(Var x);

  // Join/split along dimension 1; trailing dimensions must match.
  Var concat_channels(Var a, Var b);
  Var slice_channels(Var x, std::size_t begin, std::size_t end);
  Var reshape(Var x, Shape shape);

  Var add(Var a, Var b);
  Var scale(Var x, T factor);

  // Mean binary cross-entropy against a constant 0/1 target; predictions are
  // clamped to [1e-7, 1 - 1e-7].
  Var bce_loss(Var pred, T target);
  // Same loss computed from pre-sigmoid logits without clamping, so the
  // gradient sigmoid(l) - target never vanishes on confident mistakes.
  Var bce_with_logits(Var logits, T target);
  // Mean over the batch of -log softmax(logits)[label]; logits [B, m].
  Var softmax_cross_entropy(Var logits, std::span<const std::size_t> labels);

  // `loss` must hold exactly one element.
  void backward(Var loss);

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::function<void(Tape&, std::size_t)> backward;
  };

  Var push(Tensor<T> value, bool requires_grad, std::function<void(Tape&, std::size_t)> backward);
  const Node& node(Var v) const;
  Tensor<T>& grad_ref(std::size_t id);
  const Tensor<T>& upstream(std::size_t id) const { return nodes_[id].grad; }

  std::vector<Node> nodes_;
};

template <typename T>
struct AdamState {
  T lr = T(2e-4);
  T beta1 = T(0.5);
  T beta2 = T(0.999);
  T eps = T(1e-8);
  std::size_t step = 0;
  std::vector<Tensor<T>> first_moment;
  std::vector<Tensor<T>> second_moment;
};

// One bias-corrected Adam update. Moments are created on the first call.
template <typename T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads, AdamState<T>& state);

// Uniform(-sqrt(1/fan_in), sqrt(1/fan_in)).
template <typename T>
Tensor<T> uniform_init(Shape shape, std::size_t fan_in, Rng& rng);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace cloudadv::tensor
