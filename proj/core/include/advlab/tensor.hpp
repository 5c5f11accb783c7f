#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace advlab {

class Graph;

/// Dense row-major extents, e.g. {batch, channels, height, width}.
using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);
bool shape_eq(const Shape& a, const Shape& b);

namespace detail {

struct Storage {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until first backward reaches this tensor
  bool requires_grad = false;
  bool is_param = false;
  int node = -1;            // record index in the producing graph
  std::uint64_t owner_id = 0;  // producing graph's unique id, 0 for leaves

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  void accumulate_grad(const float* g, std::size_t n);
};

}  // namespace detail

/// Value handle over shared dense float32 storage. Contents are fixed after
/// construction except the grad buffer; parameters are additionally mutated
/// by the optimizer, which requires exclusive access.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zero-filled
  Tensor(Shape shape, std::vector<float> values);

  static Tensor full(Shape shape, float value);
  static Tensor scalar(float value);

  bool defined() const { return s_ != nullptr; }
  const Shape& shape() const;
  int dim(int i) const;
  std::int64_t numel() const;

  std::span<const float> values() const;
  const float* data() const;
  float* data();  // exclusive-access mutation only (init, optimizer step)
  float item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on = true);
  Tensor& mark_parameter();  // tags the tensor for optimizer/attack grad scoping
  bool is_parameter() const;

  bool has_grad() const;
  std::span<const float> grad() const;
  void zero_grad();

  /// Bitwise-equal shape and contents.
  bool same_values(const Tensor& other) const;

  std::shared_ptr<detail::Storage> storage() const { return s_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Storage> s) : s_(std::move(s)) {}
  std::shared_ptr<detail::Storage> s_;

  friend class Graph;
};

}  // namespace advlab
