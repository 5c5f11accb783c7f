#include "advlab/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace advlab {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("shape has non-positive extent " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

bool shape_eq(const Shape& a, const Shape& b) { return a == b; }

namespace detail {

void Storage::accumulate_grad(const float* g, std::size_t n) {
  if (grad.empty()) grad.assign(data.size(), 0.0f);
  for (std::size_t i = 0; i < n; ++i) grad[i] += g[i];
}

}  // namespace detail

Tensor::Tensor(Shape shape) {
  auto n = shape_numel(shape);
  s_ = std::make_shared<detail::Storage>();
  s_->shape = std::move(shape);
  s_->data.assign(static_cast<std::size_t>(n), 0.0f);
}

Tensor::Tensor(Shape shape, std::vector<float> values) {
  auto n = shape_numel(shape);
  if (n != static_cast<std::int64_t>(values.size()))
    throw std::invalid_argument("tensor init: shape " + shape_str(shape) + " wants " +
                                std::to_string(n) + " values, got " +
                                std::to_string(values.size()));
  s_ = std::make_shared<detail::Storage>();
  s_->shape = std::move(shape);
  s_->data = std::move(values);
}

Tensor Tensor::full(Shape shape, float value) {
  Tensor t(std::move(shape));
  for (auto& v : t.s_->data) v = value;
  return t;
}

Tensor Tensor::scalar(float value) { return Tensor(Shape{1}, {value}); }

const Shape& Tensor::shape() const { return s_->shape; }

int Tensor::dim(int i) const {
  if (i < 0 || i >= static_cast<int>(s_->shape.size()))
    throw std::out_of_range("dim " + std::to_string(i) + " out of range for " + shape_str(s_->shape));
  return s_->shape[static_cast<std::size_t>(i)];
}

std::int64_t Tensor::numel() const { return s_->numel(); }

std::span<const float> Tensor::values() const { return {s_->data.data(), s_->data.size()}; }
const float* Tensor::data() const { return s_->data.data(); }
float* Tensor::data() { return s_->data.data(); }

float Tensor::item() const {
  if (numel() != 1)
    throw std::logic_error("item() on non-scalar tensor of shape " + shape_str(s_->shape));
  return s_->data[0];
}

bool Tensor::requires_grad() const { return s_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  s_->requires_grad = on;
  return *this;
}

Tensor& Tensor::mark_parameter() {
  s_->requires_grad = true;
  s_->is_param = true;
  return *this;
}

bool Tensor::is_parameter() const { return s_->is_param; }

bool Tensor::has_grad() const { return !s_->grad.empty(); }

std::span<const float> Tensor::grad() const {
  if (s_->grad.empty())
    throw std::logic_error("grad read before backward on tensor " + shape_str(s_->shape));
  return {s_->grad.data(), s_->grad.size()};
}

void Tensor::zero_grad() { s_->grad.clear(); }

bool Tensor::same_values(const Tensor& other) const {
  return shape_eq(s_->shape, other.s_->shape) && s_->data == other.s_->data;
}

}  // namespace advlab
