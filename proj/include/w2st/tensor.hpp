#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace w2st {

using Shape = std::vector<std::size_t>;

/// Raised when operand shapes do not fit an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a NaN or infinity reaches an op boundary.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major float tensor with optional gradient tracking.
///
/// A Tensor is a handle: copies share storage. Use clone() for a deep copy.
/// Gradients accumulate across every use of the same handle until
/// zero_grad() is called.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<float> values,
                     bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  std::size_t dim(std::size_t axis) const;

  std::span<float> data();
  std::span<const float> data() const;
  float item() const;
  float at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);

  /// True once a gradient buffer exists (never for untracked tensors).
  bool has_grad() const;
  std::span<const float> grad() const;
  /// Gradient buffer, allocated zero-filled on first access.
  std::span<float> mutable_grad() const;
  void zero_grad();
  void drop_grad();

  Tensor clone() const;
  bool is_same(const Tensor& other) const { return impl_ == other.impl_; }

  /// Throws NumericError if any value is NaN or infinite.
  void check_finite(const char* where) const;

 private:
  struct Impl {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;
    bool requires_grad = false;
  };
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
  Impl& impl() const;

  std::shared_ptr<Impl> impl_;
};

}  // namespace w2st
