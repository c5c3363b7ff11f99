#pragma once

#include "synpair/nn/params.hpp"

#include <cmath>
#include <vector>

namespace synpair {

using nn::GradSet;
using nn::ParamSet;

/// Heavy-ball SGD with coupled weight decay:
/// g += wd * p; v = mu * v + g; p -= lr * v. Buffers are skipped.
template <typename Scalar>
struct Sgd {
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::vector<Matrix<Scalar>> velocity;

  void step(ParamSet<Scalar>& params, const GradSet<Scalar>& grads, double lr) {
    if (velocity.empty())
      for (const auto& p : params) velocity.push_back(Matrix<Scalar>::Zero(p.value.rows(), p.value.cols()));
    const auto mu = static_cast<Scalar>(momentum), wd = static_cast<Scalar>(weight_decay), eta = static_cast<Scalar>(lr);
    for (int i = 0; i < params.size(); ++i) {
      if (!params[i].trainable) continue;
      velocity[i] = mu * velocity[i] + grads[i] + wd * params.value(i);
      params.value(i) -= eta * velocity[i];
    }
  }
};

/// Adam with bias correction.
template <typename Scalar>
struct Adam {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long steps = 0;
  std::vector<Matrix<Scalar>> m, v;

  void step(ParamSet<Scalar>& params, const GradSet<Scalar>& grads, double lr) {
    if (m.empty())
      for (const auto& p : params) {
        m.push_back(Matrix<Scalar>::Zero(p.value.rows(), p.value.cols()));
        v.push_back(Matrix<Scalar>::Zero(p.value.rows(), p.value.cols()));
      }
    ++steps;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(steps));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(steps));
    const auto b1 = static_cast<Scalar>(beta1), b2 = static_cast<Scalar>(beta2);
    const auto step_size = static_cast<Scalar>(lr / c1), root_c2 = static_cast<Scalar>(std::sqrt(c2));
    for (int i = 0; i < params.size(); ++i) {
      if (!params[i].trainable) continue;
      m[i] = b1 * m[i] + (1 - b1) * grads[i];
      v[i] = b2 * v[i] + (1 - b2) * grads[i].cwiseProduct(grads[i]);
      params.value(i).array() -=
          step_size * m[i].array() / (v[i].array().sqrt() / root_c2 + static_cast<Scalar>(eps));
    }
  }
};

/// Half-cosine decay from `base` at epoch 0 toward 0 at `epochs`.
inline double cosine_lr(double base, int epoch, int epochs) {
  return base * 0.5 * (1.0 + std::cos(3.14159265358979323846 * epoch / epochs));
}

}  // namespace synpair
