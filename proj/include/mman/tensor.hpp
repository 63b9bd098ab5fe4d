#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace mman {

// Extents in channels-first order (N x C x H x W for image tensors).
using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

template <typename Real>
struct TensorNode {
  Shape shape;
  std::vector<Real> values;
  std::vector<Real> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Adds this node's gradient contribution into its parents' grad buffers.
  std::function<void(TensorNode&)> backward_fn;
  const char* op = "leaf";

  void ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), Real(0));
  }
};

}  // namespace detail

// Dense N-d array participating in a reverse-mode differentiation graph.
// Copies are shallow (shared node); values are immutable after construction
// except for leaf updates between passes (optimizer) and grad accumulation.
template <typename Real>
class Tensor {
 public:
  using Node = detail::TensorNode<Real>;

  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, Real value);
  static Tensor from_data(Shape shape, std::vector<Real> values);
  // Leaf that collects gradients (model parameter).
  static Tensor parameter(Shape shape, std::vector<Real> values);
  // Used by ops: freshly computed node with recorded parents.
  static Tensor make_node(Shape shape, std::vector<Real> values,
                          std::vector<std::shared_ptr<Node>> parents,
                          std::function<void(Node&)> backward_fn,
                          const char* op);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int dim(int axis) const;
  std::int64_t numel() const;
  bool requires_grad() const;

  const Real* data() const;
  Real* mutable_data();  // leaf-only; used by init and optimizer steps
  const std::vector<Real>& values() const;
  // nullptr when no gradient has been accumulated yet.
  const Real* grad_data() const;
  // Zeros when no gradient has been accumulated yet.
  std::vector<Real> grad_vector() const;

  Real item() const;
  Real at(std::initializer_list<int> index) const;

  // New leaf sharing no graph history with this tensor.
  Tensor detach() const;
  void zero_grad();

  // Reverse accumulation from a scalar root. Repeated calls accumulate.
  void backward() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace mman
