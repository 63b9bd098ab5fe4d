#include "mman/tensor.hpp"

#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace mman {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename Real>
Tensor<Real> Tensor<Real>::zeros(Shape shape) {
  return full(std::move(shape), Real(0));
}

template <typename Real>
Tensor<Real> Tensor<Real>::full(Shape shape, Real value) {
  auto n = std::make_shared<Node>();
  n->values.assign(static_cast<std::size_t>(shape_numel(shape)), value);
  n->shape = std::move(shape);
  return Tensor(std::move(n));
}

template <typename Real>
Tensor<Real> Tensor<Real>::from_data(Shape shape, std::vector<Real> values) {
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
    throw std::invalid_argument("tensor: " + shape_str(shape) + " does not hold " +
                                std::to_string(values.size()) + " values");
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  return Tensor(std::move(n));
}

template <typename Real>
Tensor<Real> Tensor<Real>::parameter(Shape shape, std::vector<Real> values) {
  Tensor t = from_data(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

template <typename Real>
Tensor<Real> Tensor<Real>::make_node(Shape shape, std::vector<Real> values,
                                     std::vector<std::shared_ptr<Node>> parents,
                                     std::function<void(Node&)> backward_fn,
                                     const char* op) {
  Tensor t = from_data(std::move(shape), std::move(values));
  t.node_->is_leaf = false;
  t.node_->op = op;
  for (const auto& p : parents)
    if (p->requires_grad) t.node_->requires_grad = true;
  if (t.node_->requires_grad) {
    t.node_->parents = std::move(parents);
    t.node_->backward_fn = std::move(backward_fn);
  }
  return t;
}

template <typename Real>
const Shape& Tensor<Real>::shape() const {
  return node_->shape;
}

template <typename Real>
int Tensor<Real>::dim(int axis) const {
  return node_->shape.at(static_cast<std::size_t>(axis));
}

template <typename Real>
std::int64_t Tensor<Real>::numel() const {
  return static_cast<std::int64_t>(node_->values.size());
}

template <typename Real>
bool Tensor<Real>::requires_grad() const {
  return node_ && node_->requires_grad;
}

template <typename Real>
const Real* Tensor<Real>::data() const {
  return node_->values.data();
}

template <typename Real>
Real* Tensor<Real>::mutable_data() {
  if (!node_->is_leaf)
    throw std::logic_error("tensor: only leaf values may be mutated");
  return node_->values.data();
}

template <typename Real>
const std::vector<Real>& Tensor<Real>::values() const {
  return node_->values;
}

template <typename Real>
const Real* Tensor<Real>::grad_data() const {
  return node_->grad.empty() ? nullptr : node_->grad.data();
}

template <typename Real>
std::vector<Real> Tensor<Real>::grad_vector() const {
  if (node_->grad.empty()) return std::vector<Real>(node_->values.size(), Real(0));
  return node_->grad;
}

template <typename Real>
Real Tensor<Real>::item() const {
  if (numel() != 1)
    throw std::invalid_argument("tensor: item() on non-scalar " + shape_str(shape()));
  return node_->values[0];
}

template <typename Real>
Real Tensor<Real>::at(std::initializer_list<int> index) const {
  const Shape& s = node_->shape;
  if (index.size() != s.size())
    throw std::invalid_argument("tensor: index rank mismatch for " + shape_str(s));
  std::int64_t flat = 0;
  std::size_t axis = 0;
  for (int i : index) {
    if (i < 0 || i >= s[axis])
      throw std::out_of_range("tensor: index out of range for " + shape_str(s));
    flat = flat * s[axis] + i;
    ++axis;
  }
  return node_->values[static_cast<std::size_t>(flat)];
}

template <typename Real>
Tensor<Real> Tensor<Real>::detach() const {
  return from_data(node_->shape, node_->values);
}

template <typename Real>
void Tensor<Real>::zero_grad() {
  node_->grad.assign(node_->values.size(), Real(0));
}

template <typename Real>
void Tensor<Real>::backward() const {
  if (!node_) throw std::invalid_argument("backward: undefined tensor");
  if (numel() != 1)
    throw std::invalid_argument("backward: root must be scalar, got " + shape_str(shape()));

  // Post-order DFS over the requires-grad subgraph, iterative to keep deep
  // chains off the call stack.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  struct Frame {
    Node* node;
    std::size_t next = 0;
  };
  std::vector<Frame> stack;
  if (node_->requires_grad) {
    stack.push_back({node_.get()});
    visited.insert(node_.get());
  }
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.node->parents.size()) {
      Node* p = f.node->parents[f.next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.push_back({p});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  node_->ensure_grad();
  node_->grad[0] += Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace mman
