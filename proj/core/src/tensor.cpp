#include "w2s/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "w2s/error.hpp"

namespace w2s {

namespace {

std::size_t extent_product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), values_(extent_product(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(values.begin(), values.end()) {
  if (values_.size() != extent_product(shape_)) {
    throw ShapeError("tensor: " + std::to_string(values_.size()) +
                     " values do not fill shape " + to_string(shape_));
  }
}

std::size_t Tensor::rows() const noexcept {
  return rank() == 2 ? shape_[0] : 1;
}

std::size_t Tensor::cols() const noexcept {
  switch (rank()) {
    case 0: return 1;
    case 1: return shape_[0];
    case 2: return shape_[1];
    default: return values_.size();
  }
}

double Tensor::item() const {
  if (values_.size() != 1) {
    throw ContractError("item() on tensor of shape " + to_string(shape_));
  }
  return values_[0];
}

MatrixMap Tensor::mat() {
  return MatrixMap(values_.data(), static_cast<Eigen::Index>(rows()),
                   static_cast<Eigen::Index>(cols()));
}

ConstMatrixMap Tensor::mat() const {
  return ConstMatrixMap(values_.data(), static_cast<Eigen::Index>(rows()),
                        static_cast<Eigen::Index>(cols()));
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace w2s
