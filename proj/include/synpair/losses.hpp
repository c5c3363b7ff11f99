#pragma once

#include "synpair/common.hpp"

#include <span>
#include <vector>

namespace synpair {

/// Which candidates enter the softmax denominator of a contrastive loss.
enum class Denominator {
  /// Positive plus negatives: cross-entropy over cat([l_pos, l_neg]). Default.
  WithPositive,
  /// Negatives only, as in the printed single-pair formula. Kept for comparison;
  /// the loss can be negative under this form.
  NegativesOnly,
};

struct TemperatureConfig {
  double tau = 0.2;
  void validate() const;
};

struct LossWeights {
  double alpha = 1.0;  // reconstruction weight
  double nu = 0.5;     // generated-pair contrastive weight
  void validate() const;
};

/// A scalar loss together with its gradient with respect to the one input
/// it is differentiable in.
template <typename Scalar>
struct LossResult {
  Scalar value = 0;
  Matrix<Scalar> grad;
};

/// Options shared by the contrastive losses.
struct ContrastiveOptions {
  double tau = 0.2;
  Denominator denominator = Denominator::WithPositive;
  /// Reject rows whose norm is not 1 (within 1e-3). Disable for raw dot products.
  bool require_normalized = true;
};

/// Queue-negative InfoNCE: mean over rows i of
/// -log( exp(q_i.k_i/tau) / (exp(q_i.k_i/tau) + sum_j exp(q_i.queue_j/tau)) ).
/// Differentiable in q only; keys and queue are constants.
template <typename Scalar>
LossResult<Scalar> info_nce_queue(const Matrix<Scalar>& q, const Matrix<Scalar>& k, const Matrix<Scalar>& queue,
                                  const ContrastiveOptions& opt = {});

/// Symmetric in-batch contrastive loss over 2B representations. Each anchor's
/// positive is `partner[a]`; every other member except the anchor itself is a
/// negative. Mean over all anchors; gradient with respect to `reps`.
/// With an empty `partner`, rows i and i + B are paired.
template <typename Scalar>
LossResult<Scalar> info_nce_batch(const Matrix<Scalar>& reps, std::span<const int> partner = {},
                                  const ContrastiveOptions& opt = {});

/// Mean squared error over all elements; gradient with respect to x_hat.
template <typename Scalar>
LossResult<Scalar> recon_loss(const Matrix<Scalar>& x, const Matrix<Scalar>& x_hat);

/// lc + alpha * lr + nu * lcp.
double total_loss(double lc, double lr, double lcp, const LossWeights& w);

/// Default pairing i <-> i + B for 2B rows.
std::vector<int> half_split_pairing(int rows);

}  // namespace synpair
