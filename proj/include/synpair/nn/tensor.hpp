#pragma once

#include "synpair/common.hpp"

#include <stdexcept>
#include <string>

namespace synpair::nn {

/// Per-sample shape (channels, height, width). Flat vectors use height = width = 1.
struct Shape {
  int channels = 0;
  int height = 1;
  int width = 1;

  int pixels() const { return height * width; }
  int size() const { return channels * height * width; }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
  }
};

/// A batch of samples stored one per row, each row laid out channel-major
/// (c, y, x). Row-major storage keeps every sample contiguous.
template <typename Scalar>
struct Batch {
  Shape shape;
  Matrix<Scalar> data;

  Batch() = default;
  Batch(int n, Shape s) : shape(s), data(Matrix<Scalar>::Zero(n, s.size())) {}
  Batch(Shape s, Matrix<Scalar> d) : shape(s), data(std::move(d)) {
    if (data.cols() != shape.size()) {
      throw std::invalid_argument("batch: data width " + std::to_string(data.cols()) +
                                  " does not match shape " + shape.str());
    }
  }

  int size() const { return static_cast<int>(data.rows()); }

  /// View of sample i as a channels x pixels matrix.
  Eigen::Map<Matrix<Scalar>> sample(int i) {
    return {data.row(i).data(), shape.channels, shape.pixels()};
  }
  Eigen::Map<const Matrix<Scalar>> sample(int i) const {
    return {data.row(i).data(), shape.channels, shape.pixels()};
  }

  template <typename Other>
  Batch<Other> cast() const {
    return Batch<Other>(shape, data.template cast<Other>());
  }
};

template <typename Scalar>
Batch<Scalar> concat_rows(const Batch<Scalar>& a, const Batch<Scalar>& b) {
  if (!(a.shape == b.shape)) throw std::invalid_argument("concat_rows: shape mismatch");
  Matrix<Scalar> d(a.size() + b.size(), a.shape.size());
  d << a.data, b.data;
  return Batch<Scalar>(a.shape, std::move(d));
}

}  // namespace synpair::nn
