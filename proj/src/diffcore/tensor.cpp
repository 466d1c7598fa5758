// SPDX-License-Identifier: Apache-2.0

#include "burnlora/diffcore/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "burnlora/errors.hpp"

namespace burnlora::diffcore {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

const char* dtype_name(DType dtype) {
  return dtype == DType::f32 ? "float32" : "float64";
}

namespace {

void check_shape(const Shape& shape, std::size_t n) {
  for (auto d : shape) {
    if (d <= 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (static_cast<std::size_t>(numel(shape)) != n) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " + std::to_string(n) +
                         " elements");
  }
}

}  // namespace

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const auto n = static_cast<std::size_t>(diffcore::numel(shape));
  return from(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> data, bool requires_grad) {
  check_shape(shape, data.size());
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value.assign(data.begin(), data.end());
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->shape;
}

template <typename T>
std::int64_t Tensor<T>::dim(int axis) const {
  const int n = ndim();
  const int a = axis < 0 ? axis + n : axis;
  if (a < 0 || a >= n) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  }
  return node_->shape[static_cast<std::size_t>(a)];
}

template <typename T>
std::int64_t Tensor<T>::numel() const {
  return static_cast<std::int64_t>(node_ ? node_->value.size() : 0);
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->value;
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->value;
}

template <typename T>
bool Tensor<T>::has_grad() const {
  return node_ && !node_->grad.empty();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient");
  return node_->grad;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
  if (!node_) throw ContractError("use of undefined tensor");
  node_->ensure_grad();
  return node_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (node_) node_->grad.clear();
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return node_ && node_->requires_grad;
}

template <typename T>
void Tensor<T>::set_requires_grad(bool value) {
  if (!node_) throw ContractError("use of undefined tensor");
  if (node_->backward_fn) throw ContractError("requires_grad can only be set on leaf tensors");
  node_->requires_grad = value;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ContractError("item() needs a single-element tensor, got " + shape_str(shape()));
  return node_->value[0];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  auto node = std::make_shared<Node<T>>();
  node->shape = shape();
  node->value = node_->value;
  return Tensor(std::move(node));
}

template <typename T>
void Tensor<T>::backward() const {
  if (!node_) throw ContractError("backward on undefined tensor");
  if (node_->value.size() != 1) {
    throw ContractError("backward needs a scalar output, got " + shape_str(node_->shape));
  }
  if (!node_->requires_grad) throw ContractError("backward on a tensor that does not require grad");

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->ensure_grad();
  node_->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

template <typename T>
Tensor<T> make_result(Shape shape, Buffer<T> value,
                      std::vector<std::shared_ptr<Node<T>>> inputs,
                      std::function<void(Node<T>&)> backward_fn, const char* op_name) {
  for (const T v : value) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op_name);
  }
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [](const auto& in) { return in && in->requires_grad; });
  if (needs) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
void accumulate(Node<T>& node, std::span<const T> grad) {
  if (!node.requires_grad) return;
  node.ensure_grad();
  T* dst = node.grad.data();
  const std::size_t n = grad.size();
  for (std::size_t i = 0; i < n; ++i) dst[i] += grad[i];
}

template class Tensor<float>;
template class Tensor<double>;

template Tensor<float> make_result(Shape, Buffer<float>, std::vector<std::shared_ptr<Node<float>>>,
                                   std::function<void(Node<float>&)>, const char*);
template Tensor<double> make_result(Shape, Buffer<double>,
                                    std::vector<std::shared_ptr<Node<double>>>,
                                    std::function<void(Node<double>&)>, const char*);
template void accumulate(Node<float>&, std::span<const float>);
template void accumulate(Node<double>&, std::span<const double>);

}  // namespace burnlora::diffcore
