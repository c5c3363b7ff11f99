#pragma once

#include "synpair/common.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

namespace synpair::nn {

/// One named array. Buffers (trainable = false) hold running statistics and
/// are never touched by optimizers or momentum updates.
template <typename Scalar>
struct Param {
  std::string name;
  Matrix<Scalar> value;
  bool trainable = true;
};

/// Named real-array collection for one network.
template <typename Scalar>
class ParamSet {
 public:
  int add(std::string name, Matrix<Scalar> value, bool trainable = true) {
    if (find(name) >= 0) throw std::invalid_argument("duplicate parameter name: " + name);
    params_.push_back({std::move(name), std::move(value), trainable});
    return static_cast<int>(params_.size()) - 1;
  }

  int size() const { return static_cast<int>(params_.size()); }
  Param<Scalar>& operator[](int i) { return params_[i]; }
  const Param<Scalar>& operator[](int i) const { return params_[i]; }
  Matrix<Scalar>& value(int i) { return params_[i].value; }
  const Matrix<Scalar>& value(int i) const { return params_[i].value; }

  int find(const std::string& name) const {
    for (int i = 0; i < size(); ++i)
      if (params_[i].name == name) return i;
    return -1;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::size_t scalar_count(bool trainable_only = false) const {
    std::size_t n = 0;
    for (const auto& p : params_)
      if (!trainable_only || p.trainable) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  bool all_finite() const {
    return std::all_of(params_.begin(), params_.end(), [](const auto& p) { return p.value.allFinite(); });
  }

  bool same_layout(const ParamSet& other) const {
    if (other.size() != size()) return false;
    for (int i = 0; i < size(); ++i) {
      const auto& a = params_[i];
      const auto& b = other.params_[i];
      if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols()) return false;
    }
    return true;
  }

  template <typename Other>
  ParamSet<Other> cast() const {
    ParamSet<Other> out;
    for (const auto& p : params_) out.add(p.name, p.value.template cast<Other>(), p.trainable);
    return out;
  }

 private:
  std::vector<Param<Scalar>> params_;
};

/// Gradient accumulators aligned with a ParamSet.
template <typename Scalar>
class GradSet {
 public:
  GradSet() = default;
  explicit GradSet(const ParamSet<Scalar>& params) {
    for (const auto& p : params) grads_.push_back(Matrix<Scalar>::Zero(p.value.rows(), p.value.cols()));
  }

  int size() const { return static_cast<int>(grads_.size()); }
  Matrix<Scalar>& operator[](int i) { return grads_[i]; }
  const Matrix<Scalar>& operator[](int i) const { return grads_[i]; }

  void zero() {
    for (auto& g : grads_) g.setZero();
  }

  GradSet& operator+=(const GradSet& o) {
    for (int i = 0; i < size(); ++i) grads_[i] += o.grads_[i];
    return *this;
  }

  GradSet& scale(Scalar s) {
    for (auto& g : grads_) g *= s;
    return *this;
  }

  Scalar squared_norm() const {
    Scalar s = 0;
    for (const auto& g : grads_) s += g.squaredNorm();
    return s;
  }

  Scalar max_abs() const {
    Scalar m = 0;
    for (const auto& g : grads_)
      if (g.size() > 0) m = std::max(m, g.cwiseAbs().maxCoeff());
    return m;
  }

 private:
  std::vector<Matrix<Scalar>> grads_;
};

/// key <- m * key + (1 - m) * query over trainable entries. Buffers keep
/// their own values.
template <typename Scalar>
void momentum_update(ParamSet<Scalar>& key, const ParamSet<Scalar>& query, double key_momentum) {
  if (!key.same_layout(query)) throw std::invalid_argument("momentum_update: parameter layout mismatch");
  if (!(key_momentum >= 0.0 && key_momentum <= 1.0))
    throw std::invalid_argument("momentum_update: key_momentum must be in [0,1]");
  const auto m = static_cast<Scalar>(key_momentum);
  const auto one_minus = static_cast<Scalar>(1.0 - key_momentum);
  for (int i = 0; i < key.size(); ++i) {
    if (!key[i].trainable) continue;
    key.value(i) = m * key.value(i) + one_minus * query.value(i);
  }
}

}  // namespace synpair::nn
