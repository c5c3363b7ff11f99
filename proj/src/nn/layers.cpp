#include "synpair/nn/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace synpair::nn {
namespace {

template <typename Scalar>
Matrix<Scalar> uniform_init(int rows, int cols, double bound, Rng& rng) {
  Matrix<Scalar> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(uniform(rng, -bound, bound));
  return m;
}

void require_channels(const Shape& in, int expected, const char* who) {
  if (in.channels != expected) {
    throw std::invalid_argument(std::string(who) + ": expected " + std::to_string(expected) +
                                " input channels, got shape " + in.str());
  }
}

// (N x C*P) batch -> (C x N*P) channel-major matrix.
template <typename Scalar>
Matrix<Scalar> to_channel_major(const Batch<Scalar>& b) {
  const int n = b.size(), c = b.shape.channels, p = b.shape.pixels();
  Matrix<Scalar> out(c, static_cast<Eigen::Index>(n) * p);
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) out.row(ch).segment(static_cast<Eigen::Index>(i) * p, p) = b.data.row(i).segment(ch * p, p);
  return out;
}

template <typename Scalar>
void from_channel_major(const Matrix<Scalar>& m, Batch<Scalar>& b) {
  const int n = b.size(), c = b.shape.channels, p = b.shape.pixels();
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) b.data.row(i).segment(ch * p, p) = m.row(ch).segment(static_cast<Eigen::Index>(i) * p, p);
}

}  // namespace

template <typename Scalar>
void im2col(const Matrix<Scalar>& batch, const Shape& image, const ConvGeometry& g, int out_h, int out_w,
            Matrix<Scalar>& cols) {
  const int n = static_cast<int>(batch.rows());
  const int k = g.kernel;
  const Eigen::Index out_p = static_cast<Eigen::Index>(out_h) * out_w;
  cols.resize(static_cast<Eigen::Index>(image.channels) * k * k, n * out_p);
  for (int c = 0; c < image.channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        Scalar* dst = cols.row((static_cast<Eigen::Index>(c) * k + ky) * k + kx).data();
        for (int s = 0; s < n; ++s) {
          const Scalar* src = batch.row(s).data() + static_cast<Eigen::Index>(c) * image.height * image.width;
          for (int oy = 0; oy < out_h; ++oy) {
            const int iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= image.height) {
              for (int ox = 0; ox < out_w; ++ox) *dst++ = Scalar(0);
              continue;
            }
            const Scalar* row = src + static_cast<Eigen::Index>(iy) * image.width;
            for (int ox = 0; ox < out_w; ++ox) {
              const int ix = ox * g.stride - g.pad + kx;
              *dst++ = (ix >= 0 && ix < image.width) ? row[ix] : Scalar(0);
            }
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im(const Matrix<Scalar>& cols, const Shape& image, const ConvGeometry& g, int out_h, int out_w,
            Matrix<Scalar>& batch) {
  const int k = g.kernel;
  const Eigen::Index out_p = static_cast<Eigen::Index>(out_h) * out_w;
  const int n = static_cast<int>(cols.cols() / out_p);
  batch.setZero(n, image.size());
  for (int c = 0; c < image.channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const Scalar* src = cols.row((static_cast<Eigen::Index>(c) * k + ky) * k + kx).data();
        for (int s = 0; s < n; ++s) {
          Scalar* dst = batch.row(s).data() + static_cast<Eigen::Index>(c) * image.height * image.width;
          for (int oy = 0; oy < out_h; ++oy) {
            const int iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= image.height) {
              src += out_w;
              continue;
            }
            Scalar* row = dst + static_cast<Eigen::Index>(iy) * image.width;
            for (int ox = 0; ox < out_w; ++ox, ++src) {
              const int ix = ox * g.stride - g.pad + kx;
              if (ix >= 0 && ix < image.width) row[ix] += *src;
            }
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------- Conv2d

template <typename Scalar>
Conv2d<Scalar>::Conv2d(ParamSet<Scalar>& params, const std::string& name, int in_channels, int out_channels,
                       ConvGeometry g, Rng& rng)
    : in_channels_(in_channels), out_channels_(out_channels), geom_(g) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_channels * g.kernel * g.kernel));
  weight_ = params.add(name + ".weight", uniform_init<Scalar>(out_channels, in_channels * g.kernel * g.kernel, bound, rng));
  bias_ = params.add(name + ".bias", uniform_init<Scalar>(out_channels, 1, bound, rng));
}

template <typename Scalar>
Shape Conv2d<Scalar>::output_shape(const Shape& in) const {
  require_channels(in, in_channels_, "conv2d");
  return {out_channels_, geom_.conv_out(in.height), geom_.conv_out(in.width)};
}

template <typename Scalar>
Batch<Scalar> Conv2d<Scalar>::forward(const ParamSet<Scalar>& params, const Batch<Scalar>& x, Mode,
                                      Saved<Scalar>* saved) const {
  const Shape out_shape = output_shape(x.shape);
  Matrix<Scalar> cols;
  im2col(x.data, x.shape, geom_, out_shape.height, out_shape.width, cols);
  Matrix<Scalar> out = params.value(weight_) * cols;
  out.colwise() += params.value(bias_).col(0);
  Batch<Scalar> y(x.size(), out_shape);
  from_channel_major(out, y);
  if (saved) {
    saved->in_shape = x.shape;
    saved->batch = x.size();
    saved->a = std::move(cols);
  }
  return y;
}

template <typename Scalar>
Batch<Scalar> Conv2d<Scalar>::backward(const ParamSet<Scalar>& params, const Saved<Scalar>& saved,
                                       const Batch<Scalar>& dy, GradSet<Scalar>* grads, bool need_dx) const {
  const Matrix<Scalar> dout = to_channel_major(dy);
  if (grads) {
    (*grads)[weight_].noalias() += dout * saved.a.transpose();
    (*grads)[bias_].col(0) += dout.rowwise().sum();
  }
  Batch<Scalar> dx;
  if (need_dx) {
    const Matrix<Scalar> dcols = params.value(weight_).transpose() * dout;
    dx.shape = saved.in_shape;
    col2im(dcols, saved.in_shape, geom_, dy.shape.height, dy.shape.width, dx.data);
  }
  return dx;
}

// ------------------------------------------------------- ConvTranspose2d

template <typename Scalar>
ConvTranspose2d<Scalar>::ConvTranspose2d(ParamSet<Scalar>& params, const std::string& name, int in_channels,
                                         int out_channels, ConvGeometry g, Rng& rng)
    : in_channels_(in_channels), out_channels_(out_channels), geom_(g) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(out_channels * g.kernel * g.kernel));
  weight_ = params.add(name + ".weight", uniform_init<Scalar>(in_channels, out_channels * g.kernel * g.kernel, bound, rng));
  bias_ = params.add(name + ".bias", uniform_init<Scalar>(out_channels, 1, bound, rng));
}

template <typename Scalar>
Shape ConvTranspose2d<Scalar>::output_shape(const Shape& in) const {
  require_channels(in, in_channels_, "conv_transpose2d");
  return {out_channels_, geom_.deconv_out(in.height), geom_.deconv_out(in.width)};
}

template <typename Scalar>
Batch<Scalar> ConvTranspose2d<Scalar>::forward(const ParamSet<Scalar>& params, const Batch<Scalar>& x, Mode,
                                               Saved<Scalar>* saved) const {
  const Shape out_shape = output_shape(x.shape);
  Matrix<Scalar> xin = to_channel_major(x);
  const Matrix<Scalar> cols = params.value(weight_).transpose() * xin;
  Batch<Scalar> y;
  y.shape = out_shape;
  col2im(cols, out_shape, geom_, x.shape.height, x.shape.width, y.data);
  const int p = out_shape.pixels();
  for (int c = 0; c < out_channels_; ++c) y.data.middleCols(c * p, p).array() += params.value(bias_)(c, 0);
  if (saved) {
    saved->in_shape = x.shape;
    saved->batch = x.size();
    saved->a = std::move(xin);
  }
  return y;
}

template <typename Scalar>
Batch<Scalar> ConvTranspose2d<Scalar>::backward(const ParamSet<Scalar>& params, const Saved<Scalar>& saved,
                                                const Batch<Scalar>& dy, GradSet<Scalar>* grads, bool need_dx) const {
  Matrix<Scalar> dcols;
  im2col(dy.data, dy.shape, geom_, saved.in_shape.height, saved.in_shape.width, dcols);
  if (grads) {
    (*grads)[weight_].noalias() += saved.a * dcols.transpose();
    const int p = dy.shape.pixels();
    for (int c = 0; c < out_channels_; ++c) (*grads)[bias_](c, 0) += dy.data.middleCols(c * p, p).sum();
  }
  Batch<Scalar> dx;
  if (need_dx) {
    const Matrix<Scalar> dxin = params.value(weight_) * dcols;
    dx = Batch<Scalar>(saved.batch, saved.in_shape);
    from_channel_major(dxin, dx);
  }
  return dx;
}

// ----------------------------------------------------------- BatchNorm2d

template <typename Scalar>
BatchNorm2d<Scalar>::BatchNorm2d(ParamSet<Scalar>& params, const std::string& name, int channels, double momentum,
                                 double eps)
    : channels_(channels), momentum_(momentum), eps_(eps) {
  gamma_ = params.add(name + ".weight", Matrix<Scalar>::Ones(channels, 1));
  beta_ = params.add(name + ".bias", Matrix<Scalar>::Zero(channels, 1));
  running_mean_ = params.add(name + ".running_mean", Matrix<Scalar>::Zero(channels, 1), false);
  running_var_ = params.add(name + ".running_var", Matrix<Scalar>::Ones(channels, 1), false);
}

template <typename Scalar>
Batch<Scalar> BatchNorm2d<Scalar>::forward(const ParamSet<Scalar>& params, const Batch<Scalar>& x, Mode mode,
                                           Saved<Scalar>* saved) const {
  require_channels(x.shape, channels_, "batchnorm2d");
  const int n = x.size(), p = x.shape.pixels();
  const double count = static_cast<double>(n) * p;
  Vector<Scalar> mean(channels_), inv_std(channels_), var(channels_);
  if (mode == Mode::Train) {
    if (count < 2) throw std::invalid_argument("batchnorm2d: train mode needs more than one value per channel");
    for (int c = 0; c < channels_; ++c) {
      double s = 0.0, ss = 0.0;
      for (int i = 0; i < n; ++i) {
        const auto seg = x.data.row(i).segment(c * p, p);
        s += static_cast<double>(seg.sum());
      }
      const double mu = s / count;
      for (int i = 0; i < n; ++i) {
        const auto seg = x.data.row(i).segment(c * p, p);
        ss += static_cast<double>((seg.array() - static_cast<Scalar>(mu)).square().sum());
      }
      mean(c) = static_cast<Scalar>(mu);
      var(c) = static_cast<Scalar>(ss / count);
      inv_std(c) = static_cast<Scalar>(1.0 / std::sqrt(ss / count + eps_));
    }
  } else {
    for (int c = 0; c < channels_; ++c) {
      mean(c) = params.value(running_mean_)(c, 0);
      var(c) = params.value(running_var_)(c, 0);
      inv_std(c) = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(var(c)) + eps_));
    }
  }
  Batch<Scalar> y(n, x.shape);
  Matrix<Scalar> xhat(n, x.shape.size());
  const auto& gamma = params.value(gamma_);
  const auto& beta = params.value(beta_);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < channels_; ++c) {
      auto h = xhat.row(i).segment(c * p, p);
      h = (x.data.row(i).segment(c * p, p).array() - mean(c)) * inv_std(c);
      y.data.row(i).segment(c * p, p) = h.array() * gamma(c, 0) + beta(c, 0);
    }
  }
  if (saved) {
    saved->in_shape = x.shape;
    saved->batch = n;
    saved->train = mode == Mode::Train;
    saved->a = std::move(xhat);
    saved->mean = mean;
    saved->var = var;
    saved->inv_std = inv_std;
  }
  return y;
}

template <typename Scalar>
Batch<Scalar> BatchNorm2d<Scalar>::backward(const ParamSet<Scalar>& params, const Saved<Scalar>& saved,
                                            const Batch<Scalar>& dy, GradSet<Scalar>* grads, bool need_dx) const {
  const int n = saved.batch, p = saved.in_shape.pixels();
  const bool train = saved.train;
  const auto& inv_std = saved.inv_std;
  const auto& gamma = params.value(gamma_);
  Vector<double> sum_dy = Vector<double>::Zero(channels_), sum_dy_xhat = Vector<double>::Zero(channels_);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < channels_; ++c) {
      const auto g = dy.data.row(i).segment(c * p, p);
      sum_dy(c) += static_cast<double>(g.sum());
      sum_dy_xhat(c) += static_cast<double>(g.dot(saved.a.row(i).segment(c * p, p)));
    }
  }
  if (grads) {
    for (int c = 0; c < channels_; ++c) {
      (*grads)[gamma_](c, 0) += static_cast<Scalar>(sum_dy_xhat(c));
      (*grads)[beta_](c, 0) += static_cast<Scalar>(sum_dy(c));
    }
  }
  Batch<Scalar> dx;
  if (!need_dx) return dx;
  dx = Batch<Scalar>(n, saved.in_shape);
  const double count = static_cast<double>(n) * p;
  for (int c = 0; c < channels_; ++c) {
    const Scalar scale = gamma(c, 0) * inv_std(c);
    if (train) {
      const auto mean_dy = static_cast<Scalar>(sum_dy(c) / count);
      const auto mean_dy_xhat = static_cast<Scalar>(sum_dy_xhat(c) / count);
      for (int i = 0; i < n; ++i) {
        dx.data.row(i).segment(c * p, p) =
            scale * (dy.data.row(i).segment(c * p, p).array() - mean_dy -
                     saved.a.row(i).segment(c * p, p).array() * mean_dy_xhat);
      }
    } else {
      for (int i = 0; i < n; ++i) dx.data.row(i).segment(c * p, p) = scale * dy.data.row(i).segment(c * p, p);
    }
  }
  return dx;
}

template <typename Scalar>
void BatchNorm2d<Scalar>::commit(ParamSet<Scalar>& params, const Saved<Scalar>& saved) const {
  if (!saved.train) return;
  const double count = static_cast<double>(saved.batch) * saved.in_shape.pixels();
  const double unbias = count / std::max(1.0, count - 1.0);
  auto& rm = params.value(running_mean_);
  auto& rv = params.value(running_var_);
  const auto m = static_cast<Scalar>(momentum_);
  for (int c = 0; c < channels_; ++c) {
    rm(c, 0) = (Scalar(1) - m) * rm(c, 0) + m * saved.mean(c);
    rv(c, 0) = (Scalar(1) - m) * rv(c, 0) + m * static_cast<Scalar>(saved.var(c) * unbias);
  }
}

// ---------------------------------------------------------------- Linear

template <typename Scalar>
Linear<Scalar>::Linear(ParamSet<Scalar>& params, const std::string& name, int in_features, int out_features, Rng& rng)
    : in_(in_features), out_(out_features) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_features));
  weight_ = params.add(name + ".weight", uniform_init<Scalar>(out_features, in_features, bound, rng));
  bias_ = params.add(name + ".bias", uniform_init<Scalar>(out_features, 1, bound, rng));
}

template <typename Scalar>
Shape Linear<Scalar>::output_shape(const Shape& in) const {
  if (in.size() != in_) throw std::invalid_argument("linear: expected " + std::to_string(in_) + " inputs, got " + in.str());
  return {out_, 1, 1};
}

template <typename Scalar>
Batch<Scalar> Linear<Scalar>::forward(const ParamSet<Scalar>& params, const Batch<Scalar>& x, Mode,
                                      Saved<Scalar>* saved) const {
  Batch<Scalar> y;
  y.shape = output_shape(x.shape);
  y.data.noalias() = x.data * params.value(weight_).transpose();
  y.data.rowwise() += params.value(bias_).col(0).transpose();
  if (saved) {
    saved->in_shape = x.shape;
    saved->batch = x.size();
    saved->a = x.data;
  }
  return y;
}

template <typename Scalar>
Batch<Scalar> Linear<Scalar>::backward(const ParamSet<Scalar>& params, const Saved<Scalar>& saved,
                                       const Batch<Scalar>& dy, GradSet<Scalar>* grads, bool need_dx) const {
  if (grads) {
    (*grads)[weight_].noalias() += dy.data.transpose() * saved.a;
    (*grads)[bias_].col(0) += dy.data.colwise().sum().transpose();
  }
  Batch<Scalar> dx;
  if (need_dx) {
    dx.shape = saved.in_shape;
    dx.data.noalias() = dy.data * params.value(weight_);
  }
  return dx;
}

// ------------------------------------------------------- pointwise layers

template <typename Scalar>
Batch<Scalar> ReLU<Scalar>::forward(const ParamSet<Scalar>&, const Batch<Scalar>& x, Mode, Saved<Scalar>* saved) const {
  Batch<Scalar> y(x.shape, x.data.cwiseMax(Scalar(0)));
  if (saved) {
    saved->in_shape = x.shape;
    saved->batch = x.size();
    saved->a = y.data;
  }
  return y;
}

template <typename Scalar>
Batch<Scalar> ReLU<Scalar>::backward(const ParamSet<Scalar>&, const Saved<Scalar>& saved, const Batch<Scalar>& dy,
                                     GradSet<Scalar>*, bool need_dx) const {
  if (!need_dx) return {};
  return Batch<Scalar>(dy.shape, (saved.a.array() > Scalar(0)).select(dy.data, Scalar(0)));
}

template <typename Scalar>
Batch<Scalar> Sigmoid<Scalar>::forward(const ParamSet<Scalar>&, const Batch<Scalar>& x, Mode,
                                       Saved<Scalar>* saved) const {
  Batch<Scalar> y(x.shape, (Scalar(1) / (Scalar(1) + (-x.data.array()).exp())).matrix());
  if (saved) {
    saved->in_shape = x.shape;
    saved->batch = x.size();
    saved->a = y.data;
  }
  return y;
}

template <typename Scalar>
Batch<Scalar> Sigmoid<Scalar>::backward(const ParamSet<Scalar>&, const Saved<Scalar>& saved, const Batch<Scalar>& dy,
                                        GradSet<Scalar>*, bool need_dx) const {
  if (!need_dx) return {};
  return Batch<Scalar>(dy.shape, (dy.data.array() * saved.a.array() * (Scalar(1) - saved.a.array())).matrix());
}

template <typename Scalar>
Batch<Scalar> GlobalAvgPool<Scalar>::forward(const ParamSet<Scalar>&, const Batch<Scalar>& x, Mode,
                                             Saved<Scalar>* saved) const {
  const int n = x.size(), c = x.shape.channels, p = x.shape.pixels();
  Batch<Scalar> y(n, output_shape(x.shape));
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) y.data(i, ch) = x.data.row(i).segment(ch * p, p).mean();
  if (saved) {
    saved->in_shape = x.shape;
    saved->batch = n;
  }
  return y;
}

template <typename Scalar>
Batch<Scalar> GlobalAvgPool<Scalar>::backward(const ParamSet<Scalar>&, const Saved<Scalar>& saved,
                                              const Batch<Scalar>& dy, GradSet<Scalar>*, bool need_dx) const {
  if (!need_dx) return {};
  const int n = saved.batch, c = saved.in_shape.channels, p = saved.in_shape.pixels();
  Batch<Scalar> dx(n, saved.in_shape);
  const Scalar inv = Scalar(1) / static_cast<Scalar>(p);
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) dx.data.row(i).segment(ch * p, p).setConstant(dy.data(i, ch) * inv);
  return dx;
}

template <typename Scalar>
Shape Unflatten<Scalar>::output_shape(const Shape& in) const {
  if (in.size() != target_.size())
    throw std::invalid_argument("unflatten: cannot view " + in.str() + " as " + target_.str());
  return target_;
}

template <typename Scalar>
Batch<Scalar> Unflatten<Scalar>::forward(const ParamSet<Scalar>&, const Batch<Scalar>& x, Mode,
                                         Saved<Scalar>* saved) const {
  if (saved) {
    saved->in_shape = x.shape;
    saved->batch = x.size();
  }
  return Batch<Scalar>(output_shape(x.shape), x.data);
}

template <typename Scalar>
Batch<Scalar> Unflatten<Scalar>::backward(const ParamSet<Scalar>&, const Saved<Scalar>& saved, const Batch<Scalar>& dy,
                                          GradSet<Scalar>*, bool need_dx) const {
  if (!need_dx) return {};
  return Batch<Scalar>(saved.in_shape, dy.data);
}

#define SYNPAIR_INSTANTIATE_LAYERS(S)                                                                   \
  template void im2col<S>(const Matrix<S>&, const Shape&, const ConvGeometry&, int, int, Matrix<S>&); \
  template void col2im<S>(const Matrix<S>&, const Shape&, const ConvGeometry&, int, int, Matrix<S>&); \
  template class Conv2d<S>;                                                                            \
  template class ConvTranspose2d<S>;                                                                   \
  template class BatchNorm2d<S>;                                                                       \
  template class Linear<S>;                                                                            \
  template class ReLU<S>;                                                                              \
  template class Sigmoid<S>;                                                                           \
  template class GlobalAvgPool<S>;                                                                     \
  template class Unflatten<S>;

SYNPAIR_INSTANTIATE_LAYERS(float)
SYNPAIR_INSTANTIATE_LAYERS(double)

}  // namespace synpair::nn
