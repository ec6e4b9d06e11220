#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gdmae {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised when operand shapes are incompatible for an op. The message names
/// the op and the offending shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when an op receives a NaN or Inf.
class NonFiniteError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct Node;

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  // Empty until backward() reaches this tensor.
  std::vector<double> grad;
  bool requires_grad = false;
  std::shared_ptr<Node> grad_fn;
};

/// Dense row-major float64 array. Copies share storage; use clone() for a
/// deep copy. A tensor produced by an op on inputs that require grad carries
/// the node that produced it, so backward() can walk the graph.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl().shape; }
  std::size_t ndim() const { return impl().shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return impl().data.size(); }

  std::span<const double> data() const { return impl().data; }
  /// Mutable access to the values. Writing into a tensor that already fed a
  /// recorded op invalidates that op's backward rule.
  std::span<double> mutable_data() { return impl().data; }
  const std::vector<double>& values() const { return impl().data; }

  double item() const;
  double at(std::size_t i) const { return impl().data.at(i); }
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const { return defined() && impl_->requires_grad; }
  Tensor& set_requires_grad(bool on = true);

  bool has_grad() const { return defined() && !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl().grad; }
  Tensor grad_tensor() const;
  void zero_grad();

  bool is_leaf() const { return defined() && impl_->grad_fn == nullptr; }
  /// Same values, no graph history, no grad requirement.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  TensorImpl& impl() const;

  std::shared_ptr<TensorImpl> impl_;

  friend Tensor make_tensor(std::shared_ptr<TensorImpl> impl);
};

Tensor make_tensor(std::shared_ptr<TensorImpl> impl);

bool all_finite(std::span<const double> values);

}  // namespace gdmae
