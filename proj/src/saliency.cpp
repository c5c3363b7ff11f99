#include "synpair/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace synpair {

template <typename Scalar>
Matrix<Scalar> gradcam_from_gradient(const Matrix<Scalar>& grad, const Matrix<Scalar>& features) {
  if (grad.rows() != features.rows() || grad.cols() != features.cols())
    throw std::invalid_argument("gradcam: gradient and feature shapes differ");
  return grad.cwiseProduct(features).cwiseMax(Scalar(0));
}

template <typename Scalar>
Matrix<Scalar> contrastive_feature_gradient(const Networks<Scalar>& nets, const ParamSet<Scalar>& projector,
                                            const Batch<Scalar>& features, const Batch<Scalar>& features2,
                                            const ContrastiveOptions& opt) {
  if (features.size() != features2.size()) throw std::invalid_argument("saliency: view batches differ in size");
  const int b = features.size();
  const auto z = project(nets, projector, features, true);
  const auto z2 = project(nets, projector, features2, true);
  Matrix<Scalar> reps(2 * b, z.values.cols());
  reps << z.values, z2.values;
  const auto loss = info_nce_batch<Scalar>(reps, {}, opt);
  // Only the first half depends on v; v'' is held fixed.
  const Matrix<Scalar> dz = loss.grad.topRows(b);
  return project_backward<Scalar>(nets, projector, z, dz, nullptr).data;
}

template <typename Scalar>
Matrix<Scalar> feature_saliency(const Networks<Scalar>& nets, const ParamSet<Scalar>& projector,
                                const Batch<Scalar>& features, const Batch<Scalar>& features2,
                                const ContrastiveOptions& opt) {
  return gradcam_from_gradient<Scalar>(contrastive_feature_gradient(nets, projector, features, features2, opt),
                                       features.data);
}

template <typename Scalar>
Matrix<Scalar> gradcam_feature_scores(const Networks<Scalar>& nets, const ParamSet<Scalar>& encoder,
                                      const ParamSet<Scalar>& projector, const Batch<Scalar>& x,
                                      const Batch<Scalar>& x2, const ContrastiveOptions& opt, Mode mode) {
  // No trace and no commit: running statistics stay as they are.
  const Batch<Scalar> v = encode(nets, encoder, x, mode);
  const Batch<Scalar> v2 = encode(nets, encoder, x2, mode);
  return feature_saliency(nets, projector, v, v2, opt);
}

Eigen::MatrixXd normalize_scores(const Eigen::Ref<const Eigen::MatrixXd>& eta) {
  Eigen::MatrixXd out(eta.rows(), eta.cols());
  for (Eigen::Index i = 0; i < eta.rows(); ++i) out.row(i) = min_max_normalize(eta.row(i).transpose()).transpose();
  return out;
}

Eigen::MatrixXd resize_bilinear(const Eigen::Ref<const Eigen::MatrixXd>& map, int height, int width) {
  const auto h = static_cast<int>(map.rows()), w = static_cast<int>(map.cols());
  Eigen::MatrixXd out(height, width);
  const double sy = static_cast<double>(h) / height, sx = static_cast<double>(w) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, h - 1);
    const double ty = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, w - 1);
      const double tx = fx - x0;
      out(y, x) = (1 - ty) * ((1 - tx) * map(y0, x0) + tx * map(y0, x1)) + ty * ((1 - tx) * map(y1, x0) + tx * map(y1, x1));
    }
  }
  return out;
}

Eigen::MatrixXd gradcam_map(const Eigen::Ref<const Eigen::MatrixXd>& maps, const Eigen::Ref<const Eigen::MatrixXd>& grads,
                            int height, int width) {
  // maps, grads: C x (h*w); row c is channel c.
  if (maps.rows() != grads.rows() || maps.cols() != grads.cols())
    throw std::invalid_argument("gradcam_map: activation and gradient shapes differ");
  const Eigen::VectorXd weights = grads.rowwise().mean();
  const Eigen::RowVectorXd cam = (weights.transpose() * maps).cwiseMax(0.0);
  const Eigen::VectorXd normed = min_max_normalize(cam.transpose());
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(maps.cols()))));
  if (side * side != maps.cols()) throw std::invalid_argument("gradcam_map: activation maps must be square");
  Eigen::MatrixXd small(side, side);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) small(y, x) = normed(y * side + x);
  return resize_bilinear(small, height, width).cwiseMax(0.0).cwiseMin(1.0);
}

template <typename Scalar>
std::vector<Eigen::MatrixXd> spatial_attention_map(const Networks<Scalar>& nets, const ParamSet<Scalar>& encoder,
                                                   const ParamSet<Scalar>& projector, const Batch<Scalar>& x,
                                                   const Batch<Scalar>& x2, const ContrastiveOptions& opt, Mode mode) {
  EncoderTrace<Scalar> trace;
  const Batch<Scalar> v = encode(nets, encoder, x, mode, &trace);
  const Batch<Scalar> v2 = encode(nets, encoder, x2, mode);
  if (trace.maps.shape.pixels() <= 1) throw std::invalid_argument("attention: encoder has no spatial activations");
  const Matrix<Scalar> dv = contrastive_feature_gradient(nets, projector, v, v2, opt);
  // Score is -L_C; the pool's backward spreads dv uniformly over positions.
  const Batch<Scalar> dmaps = nets.pool().backward(encoder, trace.pool, as_features<Scalar>(-dv), nullptr, true);
  std::vector<Eigen::MatrixXd> out;
  const int size = nets.arch().image_size;
  for (int i = 0; i < x.size(); ++i) {
    out.push_back(gradcam_map(trace.maps.sample(i).template cast<double>(), dmaps.sample(i).template cast<double>(),
                              size, size));
  }
  return out;
}

#define SYNPAIR_INSTANTIATE_SALIENCY(S)                                                                            \
  template Matrix<S> gradcam_from_gradient<S>(const Matrix<S>&, const Matrix<S>&);                                 \
  template Matrix<S> contrastive_feature_gradient<S>(const Networks<S>&, const ParamSet<S>&, const Batch<S>&,      \
                                                     const Batch<S>&, const ContrastiveOptions&);                  \
  template Matrix<S> feature_saliency<S>(const Networks<S>&, const ParamSet<S>&, const Batch<S>&, const Batch<S>&, \
                                         const ContrastiveOptions&);                                               \
  template Matrix<S> gradcam_feature_scores<S>(const Networks<S>&, const ParamSet<S>&, const ParamSet<S>&,         \
                                               const Batch<S>&, const Batch<S>&, const ContrastiveOptions&, Mode); \
  template std::vector<Eigen::MatrixXd> spatial_attention_map<S>(const Networks<S>&, const ParamSet<S>&,           \
                                                                 const ParamSet<S>&, const Batch<S>&,              \
                                                                 const Batch<S>&, const ContrastiveOptions&, Mode);

SYNPAIR_INSTANTIATE_SALIENCY(float)
SYNPAIR_INSTANTIATE_SALIENCY(double)

}  // namespace synpair
