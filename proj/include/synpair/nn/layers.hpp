#pragma once

#include "synpair/nn/params.hpp"
#include "synpair/nn/tensor.hpp"
#include "synpair/rng.hpp"

#include <memory>
#include <string>

namespace synpair::nn {

/// Per-call state a layer keeps for its backward pass. Which members are
/// populated depends on the layer.
template <typename Scalar>
struct Saved {
  Shape in_shape;
  int batch = 0;
  bool train = false;
  Matrix<Scalar> a;
  Vector<Scalar> mean;     // batch mean (BatchNorm)
  Vector<Scalar> var;      // biased batch variance (BatchNorm)
  Vector<Scalar> inv_std;  // normalization scale actually applied (BatchNorm)
};

/// A differentiable map between batches. Layers are stateless: parameters
/// live in a ParamSet so that query/key copies share one architecture.
template <typename Scalar>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual Shape output_shape(const Shape& in) const = 0;

  /// `saved` may be null when no backward pass will follow.
  virtual Batch<Scalar> forward(const ParamSet<Scalar>& params, const Batch<Scalar>& x, Mode mode,
                                Saved<Scalar>* saved) const = 0;

  /// Accumulates parameter gradients into `grads` (if non-null) and returns
  /// the input gradient when `need_dx` is set (an empty batch otherwise).
  virtual Batch<Scalar> backward(const ParamSet<Scalar>& params, const Saved<Scalar>& saved,
                                 const Batch<Scalar>& dy, GradSet<Scalar>* grads, bool need_dx) const = 0;

  /// Folds batch statistics recorded in `saved` into running buffers.
  virtual void commit(ParamSet<Scalar>& /*params*/, const Saved<Scalar>& /*saved*/) const {}

  virtual std::string kind() const = 0;
};

/// Convolution geometry shared by Conv2d and ConvTranspose2d.
struct ConvGeometry {
  int kernel = 3;
  int stride = 1;
  int pad = 0;

  int conv_out(int in) const { return (in + 2 * pad - kernel) / stride + 1; }
  int deconv_out(int in) const { return (in - 1) * stride - 2 * pad + kernel; }
};

/// Unrolls an N-sample batch (C x H x W each) into a (C*k*k) x (N*Ho*Wo) matrix.
template <typename Scalar>
void im2col(const Matrix<Scalar>& batch, const Shape& image, const ConvGeometry& g, int out_h, int out_w,
            Matrix<Scalar>& cols);

/// Adjoint of im2col: scatters-and-adds columns back to an N-sample batch.
template <typename Scalar>
void col2im(const Matrix<Scalar>& cols, const Shape& image, const ConvGeometry& g, int out_h, int out_w,
            Matrix<Scalar>& batch);

template <typename Scalar>
class Conv2d final : public Layer<Scalar> {
 public:
  Conv2d(ParamSet<Scalar>& params, const std::string& name, int in_channels, int out_channels, ConvGeometry g,
         Rng& rng);

  Shape output_shape(const Shape& in) const override;
  Batch<Scalar> forward(const ParamSet<Scalar>&, const Batch<Scalar>&, Mode, Saved<Scalar>*) const override;
  Batch<Scalar> backward(const ParamSet<Scalar>&, const Saved<Scalar>&, const Batch<Scalar>&, GradSet<Scalar>*,
                         bool) const override;
  std::string kind() const override { return "conv2d"; }

 private:
  int in_channels_, out_channels_;
  ConvGeometry geom_;
  int weight_, bias_;
};

/// Learned stride-s upsampling; the adjoint of Conv2d's data path.
template <typename Scalar>
class ConvTranspose2d final : public Layer<Scalar> {
 public:
  ConvTranspose2d(ParamSet<Scalar>& params, const std::string& name, int in_channels, int out_channels,
                  ConvGeometry g, Rng& rng);

  Shape output_shape(const Shape& in) const override;
  Batch<Scalar> forward(const ParamSet<Scalar>&, const Batch<Scalar>&, Mode, Saved<Scalar>*) const override;
  Batch<Scalar> backward(const ParamSet<Scalar>&, const Saved<Scalar>&, const Batch<Scalar>&, GradSet<Scalar>*,
                         bool) const override;
  std::string kind() const override { return "conv_transpose2d"; }

 private:
  int in_channels_, out_channels_;
  ConvGeometry geom_;
  int weight_, bias_;
};

/// Per-channel batch normalization. Train mode normalizes with batch
/// statistics; eval mode with the running buffers.
template <typename Scalar>
class BatchNorm2d final : public Layer<Scalar> {
 public:
  BatchNorm2d(ParamSet<Scalar>& params, const std::string& name, int channels, double momentum = 0.1,
              double eps = 1e-5);

  Shape output_shape(const Shape& in) const override { return in; }
  Batch<Scalar> forward(const ParamSet<Scalar>&, const Batch<Scalar>&, Mode, Saved<Scalar>*) const override;
  Batch<Scalar> backward(const ParamSet<Scalar>&, const Saved<Scalar>&, const Batch<Scalar>&, GradSet<Scalar>*,
                         bool) const override;
  void commit(ParamSet<Scalar>& params, const Saved<Scalar>& saved) const override;
  std::string kind() const override { return "batchnorm2d"; }

 private:
  int channels_;
  double momentum_, eps_;
  int gamma_, beta_, running_mean_, running_var_;
};

template <typename Scalar>
class Linear final : public Layer<Scalar> {
 public:
  Linear(ParamSet<Scalar>& params, const std::string& name, int in_features, int out_features, Rng& rng);

  Shape output_shape(const Shape& in) const override;
  Batch<Scalar> forward(const ParamSet<Scalar>&, const Batch<Scalar>&, Mode, Saved<Scalar>*) const override;
  Batch<Scalar> backward(const ParamSet<Scalar>&, const Saved<Scalar>&, const Batch<Scalar>&, GradSet<Scalar>*,
                         bool) const override;
  std::string kind() const override { return "linear"; }

  int weight_index() const { return weight_; }
  int bias_index() const { return bias_; }

 private:
  int in_, out_;
  int weight_, bias_;
};

template <typename Scalar>
class ReLU final : public Layer<Scalar> {
 public:
  Shape output_shape(const Shape& in) const override { return in; }
  Batch<Scalar> forward(const ParamSet<Scalar>&, const Batch<Scalar>&, Mode, Saved<Scalar>*) const override;
  Batch<Scalar> backward(const ParamSet<Scalar>&, const Saved<Scalar>&, const Batch<Scalar>&, GradSet<Scalar>*,
                         bool) const override;
  std::string kind() const override { return "relu"; }
};

/// Logistic squashing to (0,1).
template <typename Scalar>
class Sigmoid final : public Layer<Scalar> {
 public:
  Shape output_shape(const Shape& in) const override { return in; }
  Batch<Scalar> forward(const ParamSet<Scalar>&, const Batch<Scalar>&, Mode, Saved<Scalar>*) const override;
  Batch<Scalar> backward(const ParamSet<Scalar>&, const Saved<Scalar>&, const Batch<Scalar>&, GradSet<Scalar>*,
                         bool) const override;
  std::string kind() const override { return "sigmoid"; }
};

template <typename Scalar>
class GlobalAvgPool final : public Layer<Scalar> {
 public:
  Shape output_shape(const Shape& in) const override { return {in.channels, 1, 1}; }
  Batch<Scalar> forward(const ParamSet<Scalar>&, const Batch<Scalar>&, Mode, Saved<Scalar>*) const override;
  Batch<Scalar> backward(const ParamSet<Scalar>&, const Saved<Scalar>&, const Batch<Scalar>&, GradSet<Scalar>*,
                         bool) const override;
  std::string kind() const override { return "global_avg_pool"; }
};

/// Reinterprets a flat vector as a C x H x W map (no data movement).
template <typename Scalar>
class Unflatten final : public Layer<Scalar> {
 public:
  explicit Unflatten(Shape target) : target_(target) {}
  Shape output_shape(const Shape& in) const override;
  Batch<Scalar> forward(const ParamSet<Scalar>&, const Batch<Scalar>&, Mode, Saved<Scalar>*) const override;
  Batch<Scalar> backward(const ParamSet<Scalar>&, const Saved<Scalar>&, const Batch<Scalar>&, GradSet<Scalar>*,
                         bool) const override;
  std::string kind() const override { return "unflatten"; }

 private:
  Shape target_;
};

}  // namespace synpair::nn
