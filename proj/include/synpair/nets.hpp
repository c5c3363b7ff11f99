#pragma once

#include "synpair/nn/sequential.hpp"

#include <memory>
#include <string>
#include <vector>

namespace synpair {

using nn::Batch;
using nn::GradSet;
using nn::ParamSet;
using nn::Shape;
using nn::Trace;

/// Network sizes. The defaults give n = 128 features and k = 64-dim
/// representations for 3x64x64 inputs.
struct ArchConfig {
  int image_size = 64;
  int image_channels = 3;
  std::vector<int> encoder_channels = {16, 32, 64, 128};  // one stride-2 block each; last = n
  int projector_layers = 2;                               // 1 = single linear map, 2 = MLP
  int projector_hidden = 128;
  int projection_dim = 64;  // k

  int feature_dim() const { return encoder_channels.back(); }
  int bottleneck_size() const { return image_size >> encoder_channels.size(); }
  Shape image_shape() const { return {image_channels, image_size, image_size}; }
  void validate() const;
};

/// Architectures of encoder f, projection head g and decoder h. Instances
/// are immutable and shared by query and key parameter copies.
template <typename Scalar>
class Networks {
 public:
  /// Builds the layers and writes freshly initialized parameters into the
  /// three output sets.
  Networks(const ArchConfig& arch, Rng& rng, ParamSet<Scalar>& encoder, ParamSet<Scalar>& projector,
           ParamSet<Scalar>& decoder);

  const ArchConfig& arch() const { return arch_; }
  const nn::Sequential<Scalar>& trunk() const { return trunk_; }
  const nn::Sequential<Scalar>& pool() const { return pool_; }
  const nn::Sequential<Scalar>& projector() const { return projector_; }
  const nn::Sequential<Scalar>& decoder() const { return decoder_; }

 private:
  ArchConfig arch_;
  nn::Sequential<Scalar> trunk_;      // conv blocks up to the last activation maps
  nn::Sequential<Scalar> pool_;       // global average pool -> feature vector
  nn::Sequential<Scalar> projector_;
  nn::Sequential<Scalar> decoder_;
};

/// Saved state of one encoder forward pass.
template <typename Scalar>
struct EncoderTrace {
  Trace<Scalar> trunk;
  Trace<Scalar> pool;
  Batch<Scalar> maps;  // last convolution activations, B x C x h x w
};

/// All parameter sets of the method plus the shared architecture.
template <typename Scalar>
struct Model {
  std::shared_ptr<const Networks<Scalar>> nets;
  ParamSet<Scalar> encoder_q, projector_q;
  ParamSet<Scalar> encoder_k, projector_k;
  ParamSet<Scalar> decoder;

  /// Random initialization; key copies start equal to the query copies.
  static Model create(const ArchConfig& arch, std::uint64_t seed);
};

/// f: images (B x 3 x H x W) -> features (B x n).
template <typename Scalar>
Batch<Scalar> encode(const Networks<Scalar>& nets, const ParamSet<Scalar>& params, const Batch<Scalar>& images,
                     Mode mode, EncoderTrace<Scalar>* trace = nullptr);

/// Gradient of an encoder pass. Returns the image gradient when requested.
template <typename Scalar>
Batch<Scalar> encode_backward(const Networks<Scalar>& nets, const ParamSet<Scalar>& params,
                              const EncoderTrace<Scalar>& trace, const Batch<Scalar>& dfeatures,
                              GradSet<Scalar>* grads, bool need_dx);

/// Folds running statistics of a train-mode encoder pass into the buffers.
template <typename Scalar>
void commit_encoder_stats(const Networks<Scalar>& nets, ParamSet<Scalar>& params, const EncoderTrace<Scalar>& trace);

/// Result of a projection pass. `unnormalized` is what the head produced;
/// `values` is the row-normalized copy when normalization was requested.
template <typename Scalar>
struct Projection {
  Matrix<Scalar> values;
  Matrix<Scalar> unnormalized;
  bool normalized = false;
  Trace<Scalar> trace;
};

/// g: features (B x n) -> representations (B x k), optionally unit-norm rows.
template <typename Scalar>
Projection<Scalar> project(const Networks<Scalar>& nets, const ParamSet<Scalar>& params,
                           const Batch<Scalar>& features, bool normalize, Mode mode = Mode::Train);

/// Back-propagates a representation gradient through normalization and the
/// head. Returns the feature gradient (B x n).
template <typename Scalar>
Batch<Scalar> project_backward(const Networks<Scalar>& nets, const ParamSet<Scalar>& params,
                               const Projection<Scalar>& proj, const Matrix<Scalar>& dvalues,
                               GradSet<Scalar>* grads);

/// h: features (B x n) -> images (B x 3 x H x W), entries in [0,1].
template <typename Scalar>
Batch<Scalar> decode(const Networks<Scalar>& nets, const ParamSet<Scalar>& params, const Batch<Scalar>& features,
                     Mode mode, Trace<Scalar>* trace = nullptr);

template <typename Scalar>
Batch<Scalar> decode_backward(const Networks<Scalar>& nets, const ParamSet<Scalar>& params,
                              const Trace<Scalar>& trace, const Batch<Scalar>& dimages, GradSet<Scalar>* grads,
                              bool need_dx);

/// Row-wise u / (|u| + eps). Zero rows stay zero instead of dividing by zero.
template <typename Scalar>
Matrix<Scalar> normalize_rows(const Matrix<Scalar>& u, Scalar eps = Scalar(1e-12));

/// Vector-Jacobian product of normalize_rows at `u`.
template <typename Scalar>
Matrix<Scalar> normalize_rows_backward(const Matrix<Scalar>& u, const Matrix<Scalar>& dz,
                                       Scalar eps = Scalar(1e-12));

/// Features (B x n) as a flat batch.
template <typename Scalar>
Batch<Scalar> as_features(Matrix<Scalar> m) {
  const int n = static_cast<int>(m.cols());
  return Batch<Scalar>(Shape{n, 1, 1}, std::move(m));
}

}  // namespace synpair
