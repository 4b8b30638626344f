#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace cvip::nn {

// Reverse-mode tape node. Ops allocate one node per result; the backward
// closure reads this node's grad and accumulates into the parents' grads.
template <class S>
struct Node {
  std::vector<int> shape;
  std::vector<S> value;
  std::vector<S> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  int64_t numel() const {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
  }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), S(0));
  }
};

template <class S>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<S>> n) : node_(std::move(n)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    return full(std::move(shape), S(0), requires_grad);
  }

  static Tensor full(std::vector<int> shape, S v, bool requires_grad = false) {
    auto n = std::make_shared<Node<S>>();
    n->shape = std::move(shape);
    check_shape(n->shape);
    n->value.assign(size_t(n->numel()), v);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor from_data(std::vector<int> shape, std::vector<S> data,
                          bool requires_grad = false) {
    auto n = std::make_shared<Node<S>>();
    n->shape = std::move(shape);
    check_shape(n->shape);
    if (int64_t(data.size()) != n->numel())
      throw std::invalid_argument("from_data: size does not match shape");
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(S v, bool requires_grad = false) {
    return from_data({1}, {v}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int dim(size_t i) const { return node_->shape[i]; }
  size_t rank() const { return node_->shape.size(); }
  int64_t numel() const { return node_->numel(); }

  std::vector<S>& data() { return node_->value; }
  const std::vector<S>& data() const { return node_->value; }

  std::vector<S>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  const std::vector<S>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) {
    if (rg && !node_->is_leaf)
      throw std::invalid_argument("requires_grad can only be enabled on leaves");
    node_->requires_grad = rg;
  }
  bool is_leaf() const { return node_->is_leaf; }

  void zero_grad() { node_->grad.assign(node_->value.size(), S(0)); }

  S item() const {
    if (numel() != 1) throw std::invalid_argument("item: tensor is not scalar");
    return node_->value[0];
  }

  // Copy of the value with no tape history.
  Tensor detach() const {
    auto n = std::make_shared<Node<S>>();
    n->shape = node_->shape;
    n->value = node_->value;
    n->requires_grad = false;
    return Tensor(std::move(n));
  }

  std::shared_ptr<Node<S>> node() const { return node_; }

  bool same_shape(const Tensor& o) const { return node_->shape == o.node_->shape; }

 private:
  static void check_shape(const std::vector<int>& shape) {
    if (shape.empty()) throw std::invalid_argument("empty shape");
    for (int d : shape)
      if (d <= 0) throw std::invalid_argument("shape dims must be positive");
  }

  std::shared_ptr<Node<S>> node_;
};

// Builds a tracked result node. The backward closure is only attached when a
// parent participates in the tape.
template <class S>
Tensor<S> make_result(std::vector<int> shape, std::vector<S> value,
                      const std::vector<Tensor<S>>& inputs,
                      std::function<void(Node<S>&)> backward_fn) {
  auto n = std::make_shared<Node<S>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool track = false;
  for (const auto& in : inputs) track = track || in.requires_grad();
  n->requires_grad = track;
  n->is_leaf = !track;
  if (track) {
    for (const auto& in : inputs) n->parents.push_back(in.node());
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor<S>(std::move(n));
}

// Reverse-mode sweep from a scalar loss. Gradients accumulate, so callers
// zero them between steps.
template <class S>
void backward(const Tensor<S>& loss) {
  if (loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be a scalar");
  if (!loss.requires_grad())
    throw std::invalid_argument("backward: loss is not on the tape");

  // Iterative post-order DFS; gray marks detect cycles.
  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> done, gray;
  struct Item {
    Node<S>* n;
    size_t next_parent;
  };
  std::vector<Item> stack{{loss.node().get(), 0}};
  gray.insert(loss.node().get());
  while (!stack.empty()) {
    Item& top = stack.back();
    if (top.next_parent < top.n->parents.size()) {
      Node<S>* p = top.n->parents[top.next_parent++].get();
      if (done.count(p)) continue;
      if (gray.count(p)) throw std::runtime_error("backward: graph cycle");
      if (!p->requires_grad) continue;
      gray.insert(p);
      stack.push_back({p, 0});
    } else {
      gray.erase(top.n);
      done.insert(top.n);
      order.push_back(top.n);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad();
  loss.node()->grad[0] += S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<S>* n = *it;
    if (n->backward_fn) {
      n->ensure_grad();
      n->backward_fn(*n);
    }
  }
}

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace cvip::nn
