// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors with reverse-mode gradient tape participation.
//
// A Tensor is a cheap handle onto a shared Node. Nodes produced by an op keep
// references to their inputs only when at least one input requires a
// gradient, so forward passes through frozen sub-networks do not retain a
// graph. backward() orders the reachable nodes topologically and runs each
// node's backward closure exactly once.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <new>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace burnlora::diffcore {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

enum class DType { f32, f64 };

// Tensor storage starts on a 64-byte boundary. Vectorised reductions split
// their work by pointer alignment, so a fixed alignment keeps results
// bit-identical from run to run.
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
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::f32; }
template <>
constexpr DType dtype_of<double>() { return DType::f64; }

const char* dtype_name(DType dtype);

template <typename T>
struct Node {
  Shape shape;
  Buffer<T> value;
  Buffer<T> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
  }
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  int ndim() const { return static_cast<int>(shape().size()); }
  // Negative axes count from the end.
  std::int64_t dim(int axis) const;
  std::int64_t numel() const;
  static constexpr DType dtype() { return dtype_of<T>(); }

  std::span<const T> data() const;
  // Direct write access; reserved for optimizers, initializers and checks.
  std::span<T> mutable_data();
  bool has_grad() const;
  std::span<const T> grad() const;
  std::span<T> mutable_grad();
  void zero_grad();

  bool requires_grad() const;
  void set_requires_grad(bool value);

  T item() const;
  // Copy of the value with no gradient history.
  Tensor detach() const;

  // Requires a single-element tensor; seeds d(self)/d(self) = 1.
  void backward() const;

  const std::shared_ptr<Node<T>>& node() const { return node_; }
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Builds an op result. The backward closure and input links are dropped when
// no input requires a gradient. Throws NumericError on non-finite values.
template <typename T>
Tensor<T> make_result(Shape shape, Buffer<T> value,
                      std::vector<std::shared_ptr<Node<T>>> inputs,
                      std::function<void(Node<T>&)> backward_fn,
                      const char* op_name);

// Accumulates `grad` into `node` if the node participates in the tape.
template <typename T>
void accumulate(Node<T>& node, std::span<const T> grad);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace burnlora::diffcore
