#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tcja/errors.hpp"

namespace tcja {

using Shape = std::vector<std::size_t>;

// Product of dimensions; the empty shape is a scalar with one element.
std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

// Dense row-major array. Plain value type with no gradient bookkeeping;
// DiffTensor wraps these on a Tape.
template <typename Real>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = Real(0));
  Tensor(Shape shape, std::vector<Real> values);

  static Tensor scalar(Real v) { return Tensor(Shape{}, std::vector<Real>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }

  Real* data() { return data_.data(); }
  const Real* data() const { return data_.data(); }
  std::span<Real> values() { return data_; }
  std::span<const Real> values() const { return data_; }
  std::vector<Real>& storage() { return data_; }
  const std::vector<Real>& storage() const { return data_; }

  Real& operator[](std::size_t i) { return data_[i]; }
  const Real& operator[](std::size_t i) const { return data_[i]; }

  // Same values, new shape with the same element count.
  Tensor reshaped(Shape shape) const;
  void fill(Real v);

  template <typename Other>
  Tensor<Other> cast() const {
    std::vector<Other> out(data_.begin(), data_.end());
    return Tensor<Other>(shape_, std::move(out));
  }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<Real> data_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace tcja
