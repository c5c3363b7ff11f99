#pragma once

#include "synpair/common.hpp"

#include <stdexcept>
#include <string>

namespace synpair {

/// Fixed-capacity FIFO of row vectors backed by one capacity x dim matrix.
/// Pushing a batch overwrites the oldest rows; rows beyond fill() are
/// never read.
template <typename Scalar>
class RingStore {
 public:
  RingStore() = default;
  RingStore(int capacity, int dim) : storage_(Matrix<Scalar>::Zero(capacity, dim)) {
    if (capacity <= 0 || dim <= 0) throw std::invalid_argument("ring store: capacity and dim must be positive");
  }

  int capacity() const { return static_cast<int>(storage_.rows()); }
  int dim() const { return static_cast<int>(storage_.cols()); }
  int fill() const { return fill_; }
  int cursor() const { return cursor_; }
  bool full() const { return fill_ == capacity(); }
  bool empty() const { return fill_ == 0; }

  void push(const Matrix<Scalar>& rows) {
    if (rows.cols() != dim())
      throw std::invalid_argument("ring store: row width " + std::to_string(rows.cols()) + " != " + std::to_string(dim()));
    if (rows.rows() > capacity())
      throw std::invalid_argument("ring store: batch of " + std::to_string(rows.rows()) + " exceeds capacity " +
                                  std::to_string(capacity()));
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
      storage_.row(cursor_) = rows.row(i);
      cursor_ = (cursor_ + 1) % capacity();
    }
    fill_ = std::min(capacity(), fill_ + static_cast<int>(rows.rows()));
  }

  /// Filled rows in storage order (slot 0 first).
  Matrix<Scalar> rows() const { return storage_.topRows(fill_); }

  /// Filled rows from oldest to newest.
  Matrix<Scalar> chronological() const {
    Matrix<Scalar> out(fill_, dim());
    const int start = full() ? cursor_ : 0;
    for (int i = 0; i < fill_; ++i) out.row(i) = storage_.row((start + i) % capacity());
    return out;
  }

  const Matrix<Scalar>& storage() const { return storage_; }

  /// Restores a saved state (checkpoint resume).
  void restore(Matrix<Scalar> storage, int cursor, int fill) {
    if (cursor < 0 || cursor >= std::max<Eigen::Index>(1, storage.rows()) || fill < 0 || fill > storage.rows())
      throw std::invalid_argument("ring store: invalid restored cursor/fill");
    storage_ = std::move(storage);
    cursor_ = cursor;
    fill_ = fill;
  }

 private:
  Matrix<Scalar> storage_;
  int cursor_ = 0;
  int fill_ = 0;
};

}  // namespace synpair
