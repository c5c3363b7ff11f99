#include "synpair/losses.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace synpair {
namespace {

template <typename Scalar>
void check_normalized(const Matrix<Scalar>& m, const char* what) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double n = static_cast<double>(m.row(i).norm());
    if (std::abs(n - 1.0) > 1e-3)
      throw std::invalid_argument(std::string(what) + ": row " + std::to_string(i) + " has norm " +
                                  std::to_string(n) + ", expected unit norm");
  }
}

void check_tau(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw std::invalid_argument("contrastive loss: tau must be positive");
}

}  // namespace

void TemperatureConfig::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("tau must be a positive finite number");
}

void LossWeights::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be finite and >= 0");
  if (!(nu >= 0.0) || !std::isfinite(nu)) throw ConfigError("nu must be finite and >= 0");
}

std::vector<int> half_split_pairing(int rows) {
  if (rows % 2 != 0) throw std::invalid_argument("pairing: expected an even number of rows");
  const int b = rows / 2;
  std::vector<int> p(rows);
  for (int i = 0; i < b; ++i) {
    p[i] = i + b;
    p[i + b] = i;
  }
  return p;
}

template <typename Scalar>
LossResult<Scalar> info_nce_queue(const Matrix<Scalar>& q, const Matrix<Scalar>& k, const Matrix<Scalar>& queue,
                                  const ContrastiveOptions& opt) {
  check_tau(opt.tau);
  if (q.rows() != k.rows() || q.cols() != k.cols())
    throw std::invalid_argument("info_nce_queue: query and key batches differ in shape");
  if (queue.rows() == 0) throw std::invalid_argument("info_nce_queue: negative queue is empty");
  if (queue.cols() != q.cols()) throw std::invalid_argument("info_nce_queue: queue width mismatch");
  if (opt.require_normalized) {
    check_normalized(q, "info_nce_queue(q)");
    check_normalized(k, "info_nce_queue(k)");
    check_normalized(queue, "info_nce_queue(queue)");
  }
  const Eigen::Index b = q.rows();
  const double inv_tau = 1.0 / opt.tau;
  // Work in double: logits reach 1/tau and the loss is a small difference.
  const Matrix<double> qd = q.template cast<double>();
  const Matrix<double> neg = (qd * queue.template cast<double>().transpose()) * inv_tau;
  const Vector<double> pos = (qd.cwiseProduct(k.template cast<double>())).rowwise().sum() * inv_tau;
  const bool with_pos = opt.denominator == Denominator::WithPositive;

  double total = 0.0;
  Matrix<double> w_neg(b, queue.rows());
  Vector<double> w_pos(b);
  for (Eigen::Index i = 0; i < b; ++i) {
    double m = neg.row(i).maxCoeff();
    if (with_pos) m = std::max(m, pos(i));
    const Eigen::RowVectorXd e = (neg.row(i).array() - m).exp().matrix();
    const double ep = with_pos ? std::exp(pos(i) - m) : 0.0;
    const double z = e.sum() + ep;
    total += std::log(z) + m - pos(i);
    w_neg.row(i) = e / z;
    w_pos(i) = (with_pos ? ep / z : 0.0) - 1.0;
  }
  LossResult<Scalar> r;
  r.value = static_cast<Scalar>(total / static_cast<double>(b));
  const double scale = inv_tau / static_cast<double>(b);
  Matrix<double> g = (w_neg * queue.template cast<double>()) + w_pos.asDiagonal() * k.template cast<double>();
  r.grad = (g * scale).template cast<Scalar>();
  return r;
}

template <typename Scalar>
LossResult<Scalar> info_nce_batch(const Matrix<Scalar>& reps, std::span<const int> partner,
                                  const ContrastiveOptions& opt) {
  check_tau(opt.tau);
  const int n = static_cast<int>(reps.rows());
  std::vector<int> default_pairing;
  if (partner.empty()) {
    default_pairing = half_split_pairing(n);
    partner = default_pairing;
  }
  if (static_cast<int>(partner.size()) != n) throw std::invalid_argument("info_nce_batch: pairing size mismatch");
  if (n < 4) throw std::invalid_argument("info_nce_batch: need at least two pairs (B >= 2) to have negatives");
  for (int a = 0; a < n; ++a) {
    const int p = partner[a];
    if (p < 0 || p >= n || p == a || partner[p] != a)
      throw std::invalid_argument("info_nce_batch: pairing must be a fixed-point-free involution");
  }
  if (opt.require_normalized) check_normalized(reps, "info_nce_batch");

  const double inv_tau = 1.0 / opt.tau;
  const Matrix<double> r = reps.template cast<double>();
  const Matrix<double> sim = (r * r.transpose()) * inv_tau;
  const bool with_pos = opt.denominator == Denominator::WithPositive;

  // dL/dsim, accumulated per anchor row.
  Matrix<double> w = Matrix<double>::Zero(n, n);
  double total = 0.0;
  for (int a = 0; a < n; ++a) {
    const int p = partner[a];
    double m = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) {
      if (j == a || (!with_pos && j == p)) continue;
      m = std::max(m, sim(a, j));
    }
    double z = 0.0;
    for (int j = 0; j < n; ++j) {
      if (j == a || (!with_pos && j == p)) continue;
      w(a, j) = std::exp(sim(a, j) - m);
      z += w(a, j);
    }
    total += std::log(z) + m - sim(a, p);
    w.row(a) /= z;
    w(a, p) -= 1.0;
  }
  LossResult<Scalar> res;
  res.value = static_cast<Scalar>(total / n);
  // L = mean_a f(sim(a, .)) with sim = R R^T / tau, so dR = (W + W^T) R / (tau n).
  const Matrix<double> g = ((w + w.transpose()) * r) * (inv_tau / n);
  res.grad = g.template cast<Scalar>();
  return res;
}

template <typename Scalar>
LossResult<Scalar> recon_loss(const Matrix<Scalar>& x, const Matrix<Scalar>& x_hat) {
  if (x.rows() != x_hat.rows() || x.cols() != x_hat.cols())
    throw std::invalid_argument("recon_loss: shape mismatch");
  if (x.size() == 0) throw std::invalid_argument("recon_loss: empty input");
  const double m = static_cast<double>(x.size());
  LossResult<Scalar> r;
  const Matrix<Scalar> diff = x_hat - x;
  double ss = 0.0;
  for (Eigen::Index i = 0; i < diff.size(); ++i) ss += static_cast<double>(diff.data()[i]) * diff.data()[i];
  r.value = static_cast<Scalar>(ss / m);
  r.grad = diff * static_cast<Scalar>(2.0 / m);
  return r;
}

double total_loss(double lc, double lr, double lcp, const LossWeights& w) {
  if (!std::isfinite(lc) || !std::isfinite(lr) || !std::isfinite(lcp))
    throw NumericError("total_loss: non-finite loss term (L_C=" + std::to_string(lc) + ", L_R=" + std::to_string(lr) +
                       ", L_Cp=" + std::to_string(lcp) + ")");
  w.validate();
  double total = lc;
  if (w.alpha != 0.0) total += w.alpha * lr;
  if (w.nu != 0.0) total += w.nu * lcp;
  return total;
}

template LossResult<float> info_nce_queue<float>(const Matrix<float>&, const Matrix<float>&, const Matrix<float>&,
                                                 const ContrastiveOptions&);
template LossResult<double> info_nce_queue<double>(const Matrix<double>&, const Matrix<double>&,
                                                   const Matrix<double>&, const ContrastiveOptions&);
template LossResult<float> info_nce_batch<float>(const Matrix<float>&, std::span<const int>, const ContrastiveOptions&);
template LossResult<double> info_nce_batch<double>(const Matrix<double>&, std::span<const int>,
                                                   const ContrastiveOptions&);
template LossResult<float> recon_loss<float>(const Matrix<float>&, const Matrix<float>&);
template LossResult<double> recon_loss<double>(const Matrix<double>&, const Matrix<double>&);

}  // namespace synpair
