#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "kale/error.hpp"

namespace kale {

template <typename S>
using MatrixX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<MatrixX<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const MatrixX<S>>;

inline std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::int64_t shape_numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

// Disables graph recording within a scope. Forward passes still run; no
// backward closures are kept, so frozen/eval encoders allocate nothing
// beyond their outputs.
class NoGradGuard {
 public:
  NoGradGuard() { depth()++; }
  ~NoGradGuard() { depth()--; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
  static bool active() { return depth() > 0; }

 private:
  static int& depth() {
    thread_local int d = 0;
    return d;
  }
};

template <typename S>
struct TensorNode {
  std::vector<int> shape;
  std::vector<S> value;
  std::vector<S> grad;  // empty until backward touches this node
  bool requires_grad = false;
  std::uint64_t seq = 0;  // creation order; doubles as a topological order
  bool visit_mark = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;

  std::vector<S>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), S(0));
    return grad;
  }
};

// A dense row-major tensor handle with reverse-mode autodiff recorded on a
// dynamic tape. Copies are shallow (shared node), matching how parameters
// are threaded through a model.
template <typename S>
class Tensor {
 public:
  using Node = TensorNode<S>;

  Tensor() = default;

  static Tensor from(std::vector<S> data, std::vector<int> shape,
                     bool requires_grad = false) {
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
      throw DimensionError("tensor data size " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    for (int d : shape)
      if (d <= 0) throw DimensionError("non-positive dimension in " + shape_str(shape));
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(data);
    t.node_->requires_grad = requires_grad;
    t.node_->seq = next_seq();
    return t;
  }

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    std::vector<S> data(static_cast<std::size_t>(shape_numel(shape)), S(0));
    return from(std::move(data), std::move(shape), requires_grad);
  }

  static Tensor full(std::vector<int> shape, S v, bool requires_grad = false) {
    std::vector<S> data(static_cast<std::size_t>(shape_numel(shape)), v);
    return from(std::move(data), std::move(shape), requires_grad);
  }

  static Tensor scalar(S v, bool requires_grad = false) {
    return from({v}, {1}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }

  std::vector<S>& value() { return node_->value; }
  const std::vector<S>& value() const { return node_->value; }
  S item() const {
    if (numel() != 1) throw DimensionError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::vector<S>& grad() { return node_->grad_buffer(); }
  const std::vector<S>& grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  // Deep copy of values only; the copy is a fresh leaf.
  Tensor clone(bool requires_grad = false) const {
    return from(node_->value, node_->shape, requires_grad);
  }

  // Rows/cols for the common rank-1/rank-2 cases. A vector is one row.
  int rows() const { return rank() == 1 ? 1 : dim(0); }
  int cols() const { return rank() == 1 ? dim(0) : dim(rank() - 1); }

  MatMap<S> mat() { return MatMap<S>(node_->value.data(), rows(), cols()); }
  ConstMatMap<S> mat() const {
    return ConstMatMap<S>(node_->value.data(), rows(), cols());
  }
  MatMap<S> grad_mat() {
    return MatMap<S>(node_->grad_buffer().data(), rows(), cols());
  }

  std::shared_ptr<Node> node() const { return node_; }

  // Reverse sweep from a scalar output. Creation order is a valid
  // topological order for a dynamically recorded graph, so we sort the
  // reachable set by sequence number instead of doing an explicit
  // toposort.
  void backward() {
    if (numel() != 1)
      throw DimensionError("backward() requires a scalar output, got " + shape_str(shape()));
    if (!node_->requires_grad)
      throw ParameterError("backward() on a tensor that does not require grad");
    std::vector<Node*> order;
    std::vector<Node*> stack{node_.get()};
    while (!stack.empty()) {
      Node* n = stack.back();
      stack.pop_back();
      if (n->visit_mark) continue;
      n->visit_mark = true;
      order.push_back(n);
      for (auto& p : n->parents)
        if (p->requires_grad && !p->visit_mark) stack.push_back(p.get());
    }
    std::sort(order.begin(), order.end(),
              [](const Node* a, const Node* b) { return a->seq > b->seq; });
    node_->grad_buffer()[0] += S(1);
    for (Node* n : order) {
      n->visit_mark = false;
      if (n->backprop && !n->grad.empty()) n->backprop(*n);
    }
  }

 private:
  static std::uint64_t next_seq() {
    static std::uint64_t counter = 0;
    return ++counter;
  }

  std::shared_ptr<Node> node_;
};

namespace detail {

// Builds an op result node. The backprop closure is recorded only when the
// tape is live and some parent participates in differentiation.
template <typename S>
Tensor<S> make_op(std::vector<S> value, std::vector<int> shape,
                  std::vector<Tensor<S>> parents,
                  std::function<void(TensorNode<S>&)> backprop) {
  Tensor<S> out = Tensor<S>::from(std::move(value), std::move(shape));
  bool track = false;
  if (!NoGradGuard::active())
    for (const auto& p : parents) track = track || p.requires_grad();
  if (track) {
    out.set_requires_grad(true);
    auto node = out.node();
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backprop = std::move(backprop);
  }
  return out;
}

}  // namespace detail

}  // namespace kale
