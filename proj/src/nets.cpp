#include "synpair/nets.hpp"

#include <cmath>
#include <stdexcept>

namespace synpair {

void ArchConfig::validate() const {
  if (image_size <= 0 || image_channels <= 0) throw ConfigError("arch: image size and channels must be positive");
  if (encoder_channels.empty()) throw ConfigError("arch: encoder needs at least one block");
  for (int c : encoder_channels)
    if (c <= 0) throw ConfigError("arch: channel counts must be positive");
  const int blocks = static_cast<int>(encoder_channels.size());
  if (image_size % (1 << blocks) != 0 || bottleneck_size() < 1)
    throw ConfigError("arch: image_size " + std::to_string(image_size) + " must be divisible by 2^" +
                      std::to_string(blocks));
  if (projector_layers != 1 && projector_layers != 2) throw ConfigError("arch: projector_layers must be 1 or 2");
  if (projection_dim <= 0 || projector_hidden <= 0) throw ConfigError("arch: projector sizes must be positive");
}

template <typename Scalar>
Networks<Scalar>::Networks(const ArchConfig& arch, Rng& rng, ParamSet<Scalar>& encoder, ParamSet<Scalar>& projector,
                           ParamSet<Scalar>& decoder)
    : arch_(arch) {
  arch_.validate();
  using namespace nn;
  const ConvGeometry down{3, 2, 1};
  const ConvGeometry up{4, 2, 1};

  int in = arch.image_channels;
  for (std::size_t i = 0; i < arch.encoder_channels.size(); ++i) {
    const int out = arch.encoder_channels[i];
    const std::string name = "block" + std::to_string(i + 1);
    trunk_.template emplace<Conv2d<Scalar>>(encoder, name + ".conv", in, out, down, rng);
    trunk_.template emplace<BatchNorm2d<Scalar>>(encoder, name + ".bn", out);
    trunk_.template emplace<ReLU<Scalar>>();
    in = out;
  }
  pool_.template emplace<GlobalAvgPool<Scalar>>();

  const int n = arch.feature_dim();
  if (arch.projector_layers == 1) {
    projector_.template emplace<Linear<Scalar>>(projector, "fc1", n, arch.projection_dim, rng);
  } else {
    projector_.template emplace<Linear<Scalar>>(projector, "fc1", n, arch.projector_hidden, rng);
    projector_.template emplace<ReLU<Scalar>>();
    projector_.template emplace<Linear<Scalar>>(projector, "fc2", arch.projector_hidden, arch.projection_dim, rng);
  }

  // Mirror of the trunk: project to the bottleneck map, then upsample.
  const int s = arch.bottleneck_size();
  const int top = arch.encoder_channels.back();
  decoder_.template emplace<Linear<Scalar>>(decoder, "fc", n, top * s * s, rng);
  decoder_.template emplace<Unflatten<Scalar>>(Shape{top, s, s});
  decoder_.template emplace<BatchNorm2d<Scalar>>(decoder, "fc.bn", top);
  decoder_.template emplace<ReLU<Scalar>>();
  int ch = top;
  for (int i = static_cast<int>(arch.encoder_channels.size()) - 1; i >= 0; --i) {
    const int out = i > 0 ? arch.encoder_channels[i - 1] : arch.image_channels;
    const std::string name = "up" + std::to_string(arch.encoder_channels.size() - i);
    decoder_.template emplace<ConvTranspose2d<Scalar>>(decoder, name + ".deconv", ch, out, up, rng);
    if (i > 0) {
      decoder_.template emplace<BatchNorm2d<Scalar>>(decoder, name + ".bn", out);
      decoder_.template emplace<ReLU<Scalar>>();
    }
    ch = out;
  }
  decoder_.template emplace<Sigmoid<Scalar>>();
}

template <typename Scalar>
Model<Scalar> Model<Scalar>::create(const ArchConfig& arch, std::uint64_t seed) {
  Model m;
  Rng rng = make_rng(seed, Stream::Init);
  m.nets = std::make_shared<const Networks<Scalar>>(arch, rng, m.encoder_q, m.projector_q, m.decoder);
  m.encoder_k = m.encoder_q;
  m.projector_k = m.projector_q;
  return m;
}

template <typename Scalar>
Batch<Scalar> encode(const Networks<Scalar>& nets, const ParamSet<Scalar>& params, const Batch<Scalar>& images,
                     Mode mode, EncoderTrace<Scalar>* trace) {
  if (!(images.shape == nets.arch().image_shape()))
    throw std::invalid_argument("encode: expected images of shape " + nets.arch().image_shape().str() + ", got " +
                                images.shape.str());
  Batch<Scalar> maps = nets.trunk().forward(params, images, mode, trace ? &trace->trunk : nullptr);
  Batch<Scalar> feats = nets.pool().forward(params, maps, mode, trace ? &trace->pool : nullptr);
  if (!feats.data.allFinite()) throw NumericError("encode: non-finite activations in encoder output");
  if (trace) trace->maps = std::move(maps);
  return feats;
}

template <typename Scalar>
Batch<Scalar> encode_backward(const Networks<Scalar>& nets, const ParamSet<Scalar>& params,
                              const EncoderTrace<Scalar>& trace, const Batch<Scalar>& dfeatures,
                              GradSet<Scalar>* grads, bool need_dx) {
  Batch<Scalar> dmaps = nets.pool().backward(params, trace.pool, dfeatures, grads, true);
  return nets.trunk().backward(params, trace.trunk, std::move(dmaps), grads, need_dx);
}

template <typename Scalar>
void commit_encoder_stats(const Networks<Scalar>& nets, ParamSet<Scalar>& params, const EncoderTrace<Scalar>& trace) {
  nets.trunk().commit(params, trace.trunk);
}

template <typename Scalar>
Matrix<Scalar> normalize_rows(const Matrix<Scalar>& u, Scalar eps) {
  Matrix<Scalar> z(u.rows(), u.cols());
  for (Eigen::Index i = 0; i < u.rows(); ++i) z.row(i) = u.row(i) / (u.row(i).norm() + eps);
  return z;
}

template <typename Scalar>
Matrix<Scalar> normalize_rows_backward(const Matrix<Scalar>& u, const Matrix<Scalar>& dz, Scalar eps) {
  Matrix<Scalar> du(u.rows(), u.cols());
  for (Eigen::Index i = 0; i < u.rows(); ++i) {
    const Scalar r = u.row(i).norm();
    const Scalar d = r + eps;
    du.row(i) = dz.row(i) / d;
    if (r > Scalar(0)) du.row(i) -= u.row(i) * (u.row(i).dot(dz.row(i)) / (r * d * d));
  }
  return du;
}

template <typename Scalar>
Projection<Scalar> project(const Networks<Scalar>& nets, const ParamSet<Scalar>& params,
                           const Batch<Scalar>& features, bool normalize, Mode mode) {
  if (features.shape.size() != nets.arch().feature_dim())
    throw std::invalid_argument("project: expected " + std::to_string(nets.arch().feature_dim()) + " features");
  Projection<Scalar> p;
  p.unnormalized = nets.projector().forward(params, features, mode, &p.trace).data;
  p.normalized = normalize;
  p.values = normalize ? normalize_rows(p.unnormalized) : p.unnormalized;
  return p;
}

template <typename Scalar>
Batch<Scalar> project_backward(const Networks<Scalar>& nets, const ParamSet<Scalar>& params,
                               const Projection<Scalar>& proj, const Matrix<Scalar>& dvalues,
                               GradSet<Scalar>* grads) {
  Matrix<Scalar> du = proj.normalized ? normalize_rows_backward(proj.unnormalized, dvalues) : dvalues;
  return nets.projector().backward(params, proj.trace, as_features(std::move(du)), grads, true);
}

template <typename Scalar>
Batch<Scalar> decode(const Networks<Scalar>& nets, const ParamSet<Scalar>& params, const Batch<Scalar>& features,
                     Mode mode, Trace<Scalar>* trace) {
  if (features.shape.size() != nets.arch().feature_dim())
    throw std::invalid_argument("decode: expected " + std::to_string(nets.arch().feature_dim()) + " features");
  if (!features.data.allFinite()) throw NumericError("decode: non-finite input features");
  Batch<Scalar> flat(Shape{features.shape.size(), 1, 1}, features.data);
  return nets.decoder().forward(params, flat, mode, trace);
}

template <typename Scalar>
Batch<Scalar> decode_backward(const Networks<Scalar>& nets, const ParamSet<Scalar>& params,
                              const Trace<Scalar>& trace, const Batch<Scalar>& dimages, GradSet<Scalar>* grads,
                              bool need_dx) {
  return nets.decoder().backward(params, trace, dimages, grads, need_dx);
}

#define SYNPAIR_INSTANTIATE_NETS(S)                                                                            \
  template class Networks<S>;                                                                                   \
  template struct Model<S>;                                                                                     \
  template Batch<S> encode<S>(const Networks<S>&, const ParamSet<S>&, const Batch<S>&, Mode, EncoderTrace<S>*); \
  template Batch<S> encode_backward<S>(const Networks<S>&, const ParamSet<S>&, const EncoderTrace<S>&,          \
                                       const Batch<S>&, GradSet<S>*, bool);                                     \
  template void commit_encoder_stats<S>(const Networks<S>&, ParamSet<S>&, const EncoderTrace<S>&);             \
  template Matrix<S> normalize_rows<S>(const Matrix<S>&, S);                                                   \
  template Matrix<S> normalize_rows_backward<S>(const Matrix<S>&, const Matrix<S>&, S);                        \
  template Projection<S> project<S>(const Networks<S>&, const ParamSet<S>&, const Batch<S>&, bool, Mode);      \
  template Batch<S> project_backward<S>(const Networks<S>&, const ParamSet<S>&, const Projection<S>&,          \
                                        const Matrix<S>&, GradSet<S>*);                                         \
  template Batch<S> decode<S>(const Networks<S>&, const ParamSet<S>&, const Batch<S>&, Mode, Trace<S>*);       \
  template Batch<S> decode_backward<S>(const Networks<S>&, const ParamSet<S>&, const Trace<S>&, const Batch<S>&, \
                                       GradSet<S>*, bool);

SYNPAIR_INSTANTIATE_NETS(float)
SYNPAIR_INSTANTIATE_NETS(double)

}  // namespace synpair
