#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace contfuse {

using Real = double;
using Shape = std::vector<std::size_t>;

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct IndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

// One vertex of the reverse-mode tape. Leaves own parameters; interior nodes
// keep their parents alive until backward() releases them.
struct Node {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

inline thread_local int no_grad_depth = 0;

}  // namespace detail

/// Disables tape recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

/// Dense row-major f64 array with an optional tape node. Copies share storage
/// (handle semantics); use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, Real fill = 0.0) : node_(std::make_shared<detail::Node>()) {
    node_->data.assign(contfuse::numel(shape), fill);
    node_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<Real> data) : node_(std::make_shared<detail::Node>()) {
    if (contfuse::numel(shape) != data.size())
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + contfuse::to_string(shape));
    node_->shape = std::move(shape);
    node_->data = std::move(data);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor scalar(Real v) { return Tensor(Shape{}, std::vector<Real>{v}); }
  static Tensor from_rows(const std::vector<std::vector<Real>>& rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.front().size() : 0;
    std::vector<Real> flat;
    flat.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged rows");
      flat.insert(flat.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(flat));
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<Real> data() { return node_->data; }
  std::span<const Real> data() const { return node_->data; }
  std::vector<Real>& values() { return node_->data; }
  const std::vector<Real>& values() const { return node_->data; }

  Real item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
    return node_->data[0];
  }
  Real& operator[](std::size_t i) { return node_->data[i]; }
  Real operator[](std::size_t i) const { return node_->data[i]; }

  Real& at(std::size_t i, std::size_t j) { return node_->data[i * node_->shape[1] + j]; }
  Real at(std::size_t i, std::size_t j) const { return node_->data[i * node_->shape[1] + j]; }
  Real& at(std::size_t c, std::size_t i, std::size_t j) {
    return node_->data[(c * node_->shape[1] + i) * node_->shape[2] + j];
  }
  Real at(std::size_t c, std::size_t i, std::size_t j) const {
    return node_->data[(c * node_->shape[1] + i) * node_->shape[2] + j];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    node_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return node_->grad.size() == node_->data.size() && !node_->data.empty(); }
  std::span<const Real> grad() const { return node_->grad; }
  std::span<Real> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }
  void clear_grad() { node_->grad.clear(); }

  const char* op() const { return node_->op; }

  Tensor clone() const {
    Tensor t(shape(), node_->data);
    t.node_->requires_grad = node_->requires_grad;
    return t;
  }
  /// Same values, no tape history.
  Tensor detach() const { return Tensor(shape(), node_->data); }

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  detail::Node& node() const { return *node_; }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Parameters or checkpoint records keyed by a stable name.
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

namespace detail {

// Creates the output node of an op. Parents are recorded only when one of them
// requires a gradient and recording is enabled.
inline Tensor make_result(Shape shape, std::vector<Real> data, const char* op,
                          std::initializer_list<const Tensor*> inputs,
                          std::function<void(Node&)> backward) {
  Tensor out(std::move(shape), std::move(data));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const Tensor* t : inputs) any = any || t->requires_grad();
  if (!any) return out;
  Node& n = out.node();
  n.requires_grad = true;
  n.op = op;
  for (const Tensor* t : inputs) n.parents.push_back(t->node_ptr());
  n.backward_fn = std::move(backward);
  return out;
}

inline Tensor make_result_n(Shape shape, std::vector<Real> data, const char* op,
                            const std::vector<Tensor>& inputs,
                            std::function<void(Node&)> backward) {
  Tensor out(std::move(shape), std::move(data));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const Tensor& t : inputs) any = any || t.requires_grad();
  if (!any) return out;
  Node& n = out.node();
  n.requires_grad = true;
  n.op = op;
  for (const Tensor& t : inputs) n.parents.push_back(t.node_ptr());
  n.backward_fn = std::move(backward);
  return out;
}

// Parent gradient buffer, or nullptr when that parent needs no gradient.
inline Real* parent_grad(Node& n, std::size_t i) {
  Node& p = *n.parents[i];
  if (!p.requires_grad) return nullptr;
  p.ensure_grad();
  return p.grad.data();
}

}  // namespace detail

/// Accumulates d(loss)/d(x) into every ancestor that requires a gradient, then
/// releases the tape below `loss`.
inline void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ContractError("backward() requires a scalar loss");
  if (!loss.requires_grad()) throw ContractError("backward() on a tensor without a tape");

  // Iterative post-order DFS gives a topological order without deep recursion.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{&loss.node(), 0}};
  seen.insert(&loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  detail::Node& root = loss.node();
  root.ensure_grad();
  root.grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  for (detail::Node* n : order) {
    if (!n->backward_fn) continue;
    n->backward_fn = nullptr;
    n->parents.clear();
    n->grad.clear();
  }
}

}  // namespace contfuse
