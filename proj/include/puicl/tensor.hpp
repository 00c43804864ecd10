#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace puicl {

/// 64-byte aligned storage, so vectorized reductions see the same layout on every run.
template <typename T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Whether new operations record onto the autodiff tape (thread-local).
bool grad_enabled();

/// Disables tape recording for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  Buffer<T> data;
  Buffer<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents that require grad.
  std::function<void(Node&)> backward_fn;

  T* grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad.data();
  }
};

}  // namespace detail

/// Dense row-major tensor with reverse-mode gradient tracking.
///
/// Copies share the underlying node (handle semantics); use clone() for a
/// deep copy. Scalar type is float for production and double for gradient
/// checks.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;
  using NodeType = detail::Node<T>;
  using NodePtr = std::shared_ptr<NodeType>;
  using BackwardFn = std::function<void(NodeType&)>;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, bool requires_grad = false);
  BasicTensor(Shape shape, Buffer<T> data, bool requires_grad = false);

  static BasicTensor scalar(T value);

  /// Builds an op result. Records `backward` on the tape when grad mode is on
  /// and any input requires grad; otherwise returns a plain leaf.
  static BasicTensor make_result(Shape shape, Buffer<T> data,
                                 std::vector<BasicTensor> inputs, BackwardFn backward);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  /// Extent along `axis`; negative axes count from the end.
  std::size_t extent(int axis) const;
  std::size_t size() const;

  std::span<T> data();
  std::span<const T> data() const;
  T item() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  /// Empty span when no gradient has been accumulated.
  std::span<const T> grad() const;
  /// Allocates a zero gradient on first use.
  std::span<T> mutable_grad();
  void zero_grad();

  /// Backpropagates from a scalar tensor, seeding d(self)/d(self) = 1.
  void backward();

  BasicTensor detach() const;
  BasicTensor clone(bool requires_grad = false) const;

  const NodePtr& node() const { return node_; }

 private:
  explicit BasicTensor(NodePtr node) : node_(std::move(node)) {}
  NodePtr node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

/// Parent gradient buffer, or nullptr when that parent does not need one.
template <typename T>
T* parent_grad(detail::Node<T>& self, std::size_t index) {
  auto& p = self.parents[index];
  return p->requires_grad ? p->grad_buffer() : nullptr;
}

}  // namespace puicl
