#include "gdmae/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace gdmae {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  if (shape.size() == 1) out += ",";
  return out + ")";
}

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<TensorImpl>()) {
  impl_->data.assign(gdmae::numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : impl_(std::make_shared<TensorImpl>()) {
  if (gdmae::numel(shape) != data.size()) {
    throw ShapeError("Tensor: shape " + shape_str(shape) + " holds " +
                     std::to_string(gdmae::numel(shape)) + " values, got " +
                     std::to_string(data.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

TensorImpl& Tensor::impl() const {
  if (!impl_) throw std::logic_error("use of an undefined Tensor");
  return *impl_;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = impl().shape;
  if (axis >= s.size()) {
    throw ShapeError("Tensor::dim: axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(s));
  }
  return s[axis];
}

double Tensor::item() const {
  if (impl().data.size() != 1) {
    throw ShapeError("Tensor::item: expected a single value, shape is " +
                     shape_str(impl().shape));
  }
  return impl().data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  const auto& s = impl().shape;
  if (s.size() != 2 || r >= s[0] || c >= s[1]) {
    throw ShapeError("Tensor::at(" + std::to_string(r) + ", " + std::to_string(c) +
                     ") invalid for shape " + shape_str(s));
  }
  return impl().data[r * s[1] + c];
}

Tensor& Tensor::set_requires_grad(bool on) {
  impl().requires_grad = on;
  return *this;
}

Tensor Tensor::grad_tensor() const {
  const auto& im = impl();
  if (im.grad.empty()) return Tensor(im.shape, 0.0);
  return Tensor(im.shape, im.grad);
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

Tensor Tensor::detach() const {
  const auto& im = impl();
  return Tensor(im.shape, im.data);
}

Tensor make_tensor(std::shared_ptr<TensorImpl> impl) { return Tensor(std::move(impl)); }

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(),
                     [](double v) { return std::isfinite(v); });
}

}  // namespace gdmae
