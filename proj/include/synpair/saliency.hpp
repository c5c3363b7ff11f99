#pragma once

#include "synpair/losses.hpp"
#include "synpair/nets.hpp"
#include "synpair/perturb.hpp"

#include <vector>

namespace synpair {

/// eta_i = ReLU(g_i * v_i) for a feature vector v and the loss gradient g at v.
/// Works row-wise on batches.
template <typename Scalar>
Matrix<Scalar> gradcam_from_gradient(const Matrix<Scalar>& grad, const Matrix<Scalar>& features);

/// Gradient of the in-batch contrastive loss L_C(g(v), g(v'')) with respect
/// to v, where rows of `features` and `features2` are positive pairs. The
/// projector parameters are read, never written.
template <typename Scalar>
Matrix<Scalar> contrastive_feature_gradient(const Networks<Scalar>& nets, const ParamSet<Scalar>& projector,
                                            const Batch<Scalar>& features, const Batch<Scalar>& features2,
                                            const ContrastiveOptions& opt);

/// Per-sample Grad-CAM score vectors eta (B x n) from precomputed features.
template <typename Scalar>
Matrix<Scalar> feature_saliency(const Networks<Scalar>& nets, const ParamSet<Scalar>& projector,
                                const Batch<Scalar>& features, const Batch<Scalar>& features2,
                                const ContrastiveOptions& opt);

/// Per-sample Grad-CAM score vectors for images `x` and their augmented
/// views `x2` (same row order, B >= 2 so the loss has negatives). Runs as a
/// side pass: encoder buffers and parameters are left untouched.
template <typename Scalar>
Matrix<Scalar> gradcam_feature_scores(const Networks<Scalar>& nets, const ParamSet<Scalar>& encoder,
                                      const ParamSet<Scalar>& projector, const Batch<Scalar>& x,
                                      const Batch<Scalar>& x2, const ContrastiveOptions& opt,
                                      Mode mode = Mode::Train);

/// Row-wise min-max normalization of a score matrix (eta -> eta_bar).
Eigen::MatrixXd normalize_scores(const Eigen::Ref<const Eigen::MatrixXd>& eta);

/// Classic Grad-CAM over the last convolution maps, driven by the same
/// contrastive loss: weights are the spatially averaged gradients of the
/// score -L_C, the weighted map is ReLU-clamped, min-max normalized and
/// bilinearly upsampled to the image size. One H x W map per image.
template <typename Scalar>
std::vector<Eigen::MatrixXd> spatial_attention_map(const Networks<Scalar>& nets, const ParamSet<Scalar>& encoder,
                                                   const ParamSet<Scalar>& projector, const Batch<Scalar>& x,
                                                   const Batch<Scalar>& x2, const ContrastiveOptions& opt,
                                                   Mode mode = Mode::Eval);

/// Grad-CAM map from activation maps (C x h x w per row) and their gradients
/// with respect to the score being explained; output h x w in [0,1].
Eigen::MatrixXd gradcam_map(const Eigen::Ref<const Eigen::MatrixXd>& maps, const Eigen::Ref<const Eigen::MatrixXd>& grads,
                            int height, int width);

/// Bilinear resize (align-corners = false) of a single-channel map.
Eigen::MatrixXd resize_bilinear(const Eigen::Ref<const Eigen::MatrixXd>& map, int height, int width);

}  // namespace synpair
