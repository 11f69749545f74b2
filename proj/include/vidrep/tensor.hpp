#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "vidrep/rng.hpp"

namespace vidrep {

using Shape = std::vector<int>;

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // sized lazily on first backward touch
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Pulls this->grad into the parents' grads. Set only on interior nodes.
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

// Dense float64 tensor participating in a reverse-mode computation graph.
// Copies are shallow handles onto the same node; the underlying buffers are
// owned by the graph. A graph must stay confined to one thread during
// backward; independent graphs may run on different threads.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = std::make_shared<detail::Node>();
    n->data.assign(static_cast<size_t>(numel(shape)), 0.0);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (double& v : t.node_->data) v = value;
    return t;
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return full({1}, value, requires_grad);
  }

  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false) {
    if (static_cast<int64_t>(data.size()) != numel(shape))
      throw std::invalid_argument("from_data: " + std::to_string(data.size()) +
                                  " values for shape " + shape_str(shape));
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  // Gaussian init, the standard leaf constructor for parameters.
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = true) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (double& v : t.node_->data) v = stddev * rng.normal();
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int64_t size() const { return static_cast<int64_t>(node_->data.size()); }
  bool requires_grad() const { return node_->requires_grad; }

  double* data() { return node_->data.data(); }
  const double* data() const { return node_->data.data(); }
  std::vector<double>& vec() { return node_->data; }
  const std::vector<double>& vec() const { return node_->data; }

  double value() const {
    if (size() != 1) throw std::logic_error("value(): tensor " + shape_str(shape()) + " is not scalar");
    return node_->data[0];
  }

  double* grad() { return node_->grad.data(); }
  const std::vector<double>& grad_vec() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }

  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
  }

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

  // Graph construction helper used by the op library.
  static Tensor make_op(Shape shape, std::vector<Tensor> parents,
                        std::function<void(detail::Node&)> backward_fn) {
    auto n = std::make_shared<detail::Node>();
    n->data.assign(static_cast<size_t>(numel(shape)), 0.0);
    n->shape = std::move(shape);
    for (const Tensor& p : parents) {
      n->requires_grad = n->requires_grad || p.requires_grad();
      n->parents.push_back(p.node_);
    }
    if (n->requires_grad) n->backward_fn = std::move(backward_fn);
    return Tensor(std::move(n));
  }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;
};

// Reverse-mode sweep from a scalar loss. Every reachable node is visited
// exactly once, in reverse topological order. Gradients accumulate
// additively, so leaves shared by several losses sum their contributions.
// Returns the number of nodes whose backward hook ran.
inline int backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return 0;

  // Iterative post-order DFS; recursion would overflow on long chains.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  seen.insert(loss.node());
  while (!stack.empty()) {
    detail::Node* node = stack.back().first;
    bool descended = false;
    while (stack.back().second < node->parents.size()) {
      detail::Node* p = node->parents[stack.back().second++].get();
      if (p->requires_grad && seen.insert(p).second) {
        stack.emplace_back(p, 0);
        descended = true;
        break;
      }
    }
    if (!descended) {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0;

  int visited = 0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward_fn) {
      n->backward_fn(*n);
      ++visited;
    }
  }
  return visited;
}

}  // namespace vidrep
