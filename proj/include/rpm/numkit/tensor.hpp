#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rpm/error.hpp"

namespace rpm::nk {

// Up to 4 dimension sizes.
using Shape = std::vector<int>;

std::size_t numel(const Shape& s);
std::string to_string(const Shape& s);

template <typename T>
class Tape;

// Handle to a node recorded on a tape.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, int id) : tape_(tape), id_(id) {}

  int id() const { return id_; }
  Tape<T>& tape() const { return *tape_; }
  const Shape& shape() const;
  int dim(int axis) const { return shape()[axis]; }
  int rank() const { return static_cast<int>(shape().size()); }
  std::size_t size() const { return numel(shape()); }
  std::span<const T> value() const;
  T item() const { return value()[0]; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  int id_ = -1;
};

// Records operations in creation order, which is a topological order, so
// backward walks node ids in reverse and visits each node once.
template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Input that never receives gradient; values are copied.
  Var<T> constant(Shape shape, std::vector<T> values);
  // Leaf that owns its values and accumulates gradient.
  Var<T> variable(Shape shape, std::vector<T> values);
  // Leaf viewing external storage; the storage must outlive the tape.
  Var<T> external(Shape shape, const T* data, bool needs_grad);

  // Records an op result. `backward` runs only when some parent needs grad.
  Var<T> record(Shape shape, std::vector<T> value, std::initializer_list<int> parents, Backward backward);
  Var<T> record(Shape shape, std::vector<T> value, const std::vector<int>& parents, Backward backward);

  // Seeds d(loss)/d(loss) = 1 and propagates. Throws kNonScalarLoss.
  void backward(Var<T> loss);

  const Shape& shape(int id) const { return nodes_[id].shape; }
  std::span<const T> value(int id) const {
    const auto& n = nodes_[id];
    return n.external ? std::span<const T>(n.external, numel(n.shape)) : std::span<const T>(n.owned);
  }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  // Gradient buffer of a node (allocated on first use); empty when the node
  // does not need grad.
  std::span<T> grad(int id);
  // Read-only gradient; empty if none was accumulated.
  std::span<const T> grad_view(int id) const { return nodes_[id].grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Shape shape;
    std::vector<T> owned;
    const T* external = nullptr;
    std::vector<T> grad;
    bool needs_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

template <typename T>
const Shape& Var<T>::shape() const {
  return tape_->shape(id_);
}

template <typename T>
std::span<const T> Var<T>::value() const {
  return tape_->value(id_);
}

template <typename T>
Var<T> Tape<T>::constant(Shape shape, std::vector<T> values) {
  if (values.size() != numel(shape)) {
    throw Error(ErrorCode::kShapeMismatch, "constant: " + std::to_string(values.size()) +
                                               " values for shape " + to_string(shape));
  }
  Node n;
  n.shape = std::move(shape);
  n.owned = std::move(values);
  nodes_.push_back(std::move(n));
  return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
}

template <typename T>
Var<T> Tape<T>::variable(Shape shape, std::vector<T> values) {
  auto v = constant(std::move(shape), std::move(values));
  nodes_[v.id()].needs_grad = true;
  return v;
}

template <typename T>
Var<T> Tape<T>::external(Shape shape, const T* data, bool needs_grad) {
  Node n;
  n.shape = std::move(shape);
  n.external = data;
  n.needs_grad = needs_grad;
  nodes_.push_back(std::move(n));
  return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
}

template <typename T>
Var<T> Tape<T>::record(Shape shape, std::vector<T> value, const std::vector<int>& parents,
                       Backward backward) {
  Node n;
  n.shape = std::move(shape);
  n.owned = std::move(value);
  for (int p : parents) n.needs_grad = n.needs_grad || nodes_[p].needs_grad;
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
}

template <typename T>
Var<T> Tape<T>::record(Shape shape, std::vector<T> value, std::initializer_list<int> parents,
                       Backward backward) {
  return record(std::move(shape), std::move(value), std::vector<int>(parents), std::move(backward));
}

template <typename T>
std::span<T> Tape<T>::grad(int id) {
  auto& n = nodes_[id];
  if (!n.needs_grad) return {};
  if (n.grad.empty()) n.grad.assign(numel(n.shape), T(0));
  return n.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (numel(shape(loss.id())) != 1) {
    throw Error(ErrorCode::kNonScalarLoss, "backward: loss has shape " + to_string(shape(loss.id())));
  }
  auto g = grad(loss.id());
  if (g.empty()) return;
  g[0] += T(1);
  for (int id = loss.id(); id >= 0; --id) {
    auto& n = nodes_[id];
    if (n.backward && !n.grad.empty()) n.backward(*this, id);
  }
}

}  // namespace rpm::nk
