#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "pldnet/error.hpp"

// Dense real tensors with reverse-mode automatic differentiation.
//
// Every op returns a new Tensor whose node remembers its parents and a
// backward closure. Tensor::backward() on a scalar walks the graph in reverse
// topological order and accumulates gradients into every node that requires
// them. Canonical 4-D layout is [batch, channels, frequency, time], time
// fastest.
namespace pldnet::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until something is accumulated
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

inline bool grad_enabled() { return grad_mode_flag(); }

// Disables graph construction in its scope (inference, finite differences).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(grad_mode_flag()) { grad_mode_flag() = false; }
  ~NoGradGuard() { grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  static Tensor zeros(Shape s, bool requires_grad = false) {
    return full(std::move(s), 0.0, requires_grad);
  }
  static Tensor full(Shape s, double v, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->data.assign(nn::numel(s), v);
    n->shape = std::move(s);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }
  static Tensor from_data(Shape s, std::vector<double> d, bool requires_grad = false) {
    if (nn::numel(s) != d.size()) {
      throw ShapeError("tensor data size " + std::to_string(d.size()) + " does not match shape " +
                       shape_str(s));
    }
    auto n = std::make_shared<Node>();
    n->shape = std::move(s);
    n->data = std::move(d);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }
  static Tensor scalar(double v) { return from_data({1}, {v}); }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  std::size_t ndim() const { return n_->shape.size(); }
  std::size_t dim(std::size_t i) const { return n_->shape.at(i); }
  std::size_t numel() const { return n_->data.size(); }

  std::span<double> data() { return n_->data; }
  std::span<const double> data() const { return n_->data; }
  std::vector<double>& vec() { return n_->data; }
  const std::vector<double>& vec() const { return n_->data; }

  bool has_grad() const { return !n_->grad.empty(); }
  // Zero-filled view when nothing has been accumulated yet.
  std::span<double> grad() { return n_->ensure_grad(); }
  std::span<const double> grad() const { return n_->ensure_grad(); }

  bool requires_grad() const { return n_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    n_->requires_grad = v;
    return *this;
  }
  void zero_grad() { n_->grad.clear(); }

  double item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return n_->data[0];
  }

  // Copy without graph history.
  Tensor detach() const { return from_data(shape(), n_->data); }

  Node* node() const { return n_.get(); }
  const std::shared_ptr<Node>& impl() const { return n_; }

  void backward(bool retain_graph = false) const;

 private:
  std::shared_ptr<Node> n_;
};

#if defined(PLDNET_CHECK_FINITE) || !defined(NDEBUG)
inline constexpr bool kCheckFinite = true;
#else
inline constexpr bool kCheckFinite = false;
#endif

// Wraps an op result; records parents and backward only when needed.
inline Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                          std::function<void(Node&)> backward_fn) {
  if (kCheckFinite) {
    for (double v : data) {
      if (!std::isfinite(v)) throw NumericError("non-finite value produced by tensor op");
    }
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& p : parents) needs |= p.requires_grad();
  }
  if (needs) {
    n->requires_grad = true;
    for (auto& p : parents) n->parents.push_back(p.impl());
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(n));
}

inline void Tensor::backward(bool retain_graph) const {
  if (numel() != 1) throw InvalidInput("backward() needs a scalar loss, got " + shape_str(shape()));
  if (!std::isfinite(n_->data[0])) throw InvalidInput("backward() on a non-finite loss");
  if (!n_->requires_grad) return;
  // Iterative post-order DFS for a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{n_.get(), 0}};
  seen.insert(n_.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  n_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
  if (!retain_graph) {
    for (Node* node : order) {
      if (node->backward_fn) {
        node->backward_fn = nullptr;
        node->parents.clear();
      }
    }
  }
}

}  // namespace pldnet::nn
