#include "doctest.h"
#include "support.hpp"

#include "synpair/losses.hpp"
#include "synpair/nets.hpp"
#include "synpair/saliency.hpp"

#include <functional>

using namespace synpair;
using testsupport::random_matrix;
using testsupport::tiny_arch;

namespace {

using Md = Matrix<double>;

Batch<double> random_images(int n, const ArchConfig& a, std::uint64_t seed) {
  Md d = random_matrix(n, a.image_shape().size(), seed);
  d = (d.array() * 0.25 + 0.5).cwiseMax(0.0).cwiseMin(1.0).matrix();
  return Batch<double>(a.image_shape(), d);
}

// Central difference at one coordinate. Coordinates whose one-sided slopes
// disagree straddle a ReLU kink within the step and are reported as unusable.
struct Fd {
  double value = 0;
  bool smooth = true;
};

Fd central(double& x, const std::function<double()>& loss, double h, double floor) {
  const double keep = x;
  const double mid = loss();
  x = keep + h;
  const double up = loss();
  x = keep - h;
  const double down = loss();
  x = keep;
  const double fwd = (up - mid) / h, bwd = (mid - down) / h;
  const double scale = std::max({std::abs(fwd), std::abs(bwd), floor, 1e-12});
  return {(up - down) / (2 * h), std::abs(fwd - bwd) < 0.01 * scale};
}

struct FdTally {
  double num = 0, den = 0;
  int used = 0, skipped = 0;
  void add(double g, const Fd& fd) {
    if (!fd.smooth) {
      ++skipped;
      return;
    }
    ++used;
    num += (g - fd.value) * (g - fd.value);
    den += fd.value * fd.value;
  }
  // Relative error; any kink-dominated probe counts as a failure.
  double error() const {
    if (skipped * 4 > used + skipped) return 1.0;
    return std::sqrt(num / std::max(den, 1e-30));
  }
};

// Relative error of an analytic gradient against central differences over a
// subset of entries of every trainable array.
double param_fd_error(ParamSet<double>& params, const GradSet<double>& grads,
                      const std::function<double()>& loss, int per_array = 6, double h = 1e-3) {
  FdTally t;
  std::mt19937_64 pick(7);
  for (int p = 0; p < params.size(); ++p) {
    if (!params[p].trainable) continue;
    Md& w = params.value(p);
    const double floor = grads[p].norm() / std::sqrt(static_cast<double>(grads[p].size()));
    for (int k = 0; k < per_array; ++k) {
      const Eigen::Index idx = static_cast<Eigen::Index>(pick() % static_cast<std::uint64_t>(w.size()));
      t.add(grads[p].data()[idx], central(w.data()[idx], loss, h, floor));
    }
  }
  return t.error();
}

double input_fd_error(Md& x, const Md& grad, const std::function<double()>& loss, double h = 1e-3) {
  FdTally t;
  const double floor = grad.norm() / std::sqrt(static_cast<double>(grad.size()));
  for (Eigen::Index i = 0; i < x.size(); ++i) t.add(grad.data()[i], central(x.data()[i], loss, h, floor));
  return t.error();
}

}  // namespace

TEST_CASE("network shapes") {
  ArchConfig a;
  auto m = Model<float>::create(a, 1);
  Batch<float> x(4, a.image_shape());
  x.data.setConstant(0.5f);
  const auto v = encode(*m.nets, m.encoder_q, x, Mode::Eval);
  CHECK(v.data.rows() == 4);
  CHECK(v.data.cols() == 128);
  const auto z = project(*m.nets, m.projector_q, v, true);
  CHECK(z.values.rows() == 4);
  CHECK(z.values.cols() == 64);
  for (int i = 0; i < 4; ++i) CHECK(std::abs(z.values.row(i).norm() - 1.0f) < 1e-5f);
  const auto xh = decode(*m.nets, m.decoder, as_features<float>(v.data.topRows(1)), Mode::Eval);
  CHECK(xh.shape == a.image_shape());
  CHECK(xh.data.rows() == 1);
  CHECK(xh.data.minCoeff() >= 0.0f);
  CHECK(xh.data.maxCoeff() <= 1.0f);
}

TEST_CASE("encoder is deterministic in eval mode and key copies start equal") {
  const ArchConfig a = tiny_arch();
  auto m = Model<float>::create(a, 3);
  const auto x = random_images(3, a, 1).cast<float>();
  CHECK(encode(*m.nets, m.encoder_q, x, Mode::Eval).data == encode(*m.nets, m.encoder_q, x, Mode::Eval).data);
  for (int i = 0; i < m.encoder_q.size(); ++i) CHECK(m.encoder_q.value(i) == m.encoder_k.value(i));
  auto m2 = Model<float>::create(a, 3);
  for (int i = 0; i < m.decoder.size(); ++i) CHECK(m.decoder.value(i) == m2.decoder.value(i));
}

TEST_CASE("decoder output stays in [0,1] for extreme features") {
  const ArchConfig a = tiny_arch();
  auto m = Model<float>::create(a, 5);
  const MatrixXf f = (random_matrix(4, a.feature_dim(), 2) * 100.0).cast<float>();
  const auto xh = decode(*m.nets, m.decoder, as_features<float>(f), Mode::Train);
  CHECK(xh.data.minCoeff() >= 0.0f);
  CHECK(xh.data.maxCoeff() <= 1.0f);
}

TEST_CASE("identity projector reproduces row normalization") {
  ArchConfig a = tiny_arch();
  a.projector_layers = 1;
  a.projection_dim = a.feature_dim();
  auto m = Model<double>::create(a, 9);
  m.projector_q.value(m.projector_q.find("fc1.weight")).setIdentity();
  m.projector_q.value(m.projector_q.find("fc1.bias")).setZero();
  const Md v = random_matrix(5, a.feature_dim(), 4);
  const auto z = project(*m.nets, m.projector_q, as_features<double>(v), true);
  CHECK((z.values - normalize_rows<double>(v)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("encoder parameter gradient matches finite differences") {
  const ArchConfig a = tiny_arch(8);
  auto m = Model<double>::create(a, 11);
  const auto x = random_images(3, a, 2);
  const Md r = random_matrix(3, a.feature_dim(), 3);
  EncoderTrace<double> tr;
  encode(*m.nets, m.encoder_q, x, Mode::Train, &tr);
  GradSet<double> g(m.encoder_q);
  encode_backward(*m.nets, m.encoder_q, tr, as_features<double>(r), &g, false);
  auto loss = [&] { return encode(*m.nets, m.encoder_q, x, Mode::Train).data.cwiseProduct(r).sum(); };
  CHECK(param_fd_error(m.encoder_q, g, loss, 8) < 1e-3);
}

TEST_CASE("encoder input gradient matches finite differences") {
  const ArchConfig a = tiny_arch(8);
  auto m = Model<double>::create(a, 12);
  auto x = random_images(2, a, 5);
  const Md r = random_matrix(2, a.feature_dim(), 6);
  EncoderTrace<double> tr;
  encode(*m.nets, m.encoder_q, x, Mode::Train, &tr);
  const auto dx = encode_backward<double>(*m.nets, m.encoder_q, tr, as_features<double>(r), nullptr, true);
  auto loss = [&] { return encode(*m.nets, m.encoder_q, x, Mode::Train).data.cwiseProduct(r).sum(); };
  CHECK(input_fd_error(x.data, dx.data, loss) < 1e-3);
}

TEST_CASE("projector gradients match finite differences (through normalization)") {
  const ArchConfig a = tiny_arch();
  auto m = Model<double>::create(a, 13);
  Md v = random_matrix(4, a.feature_dim(), 7);
  const Md r = random_matrix(4, a.projection_dim, 8);
  auto loss = [&] { return project(*m.nets, m.projector_q, as_features<double>(v), true).values.cwiseProduct(r).sum(); };
  const auto z = project(*m.nets, m.projector_q, as_features<double>(v), true);
  GradSet<double> g(m.projector_q);
  const auto dv = project_backward(*m.nets, m.projector_q, z, r, &g);
  CHECK(param_fd_error(m.projector_q, g, loss, 10) < 1e-3);
  CHECK(input_fd_error(v, dv.data, loss) < 1e-3);
}

TEST_CASE("decoder gradients match finite differences") {
  const ArchConfig a = tiny_arch(8);
  auto m = Model<double>::create(a, 14);
  Md v = random_matrix(3, a.feature_dim(), 9);
  Trace<double> tr;
  const auto xh = decode(*m.nets, m.decoder, as_features<double>(v), Mode::Train, &tr);
  // Probe: mean pixel.
  const Md d = Md::Constant(xh.data.rows(), xh.data.cols(), 1.0 / static_cast<double>(xh.data.size()));
  GradSet<double> g(m.decoder);
  const auto dv = decode_backward(*m.nets, m.decoder, tr, Batch<double>(xh.shape, d), &g, true);
  auto loss = [&] { return decode(*m.nets, m.decoder, as_features<double>(v), Mode::Train).data.mean(); };
  CHECK(param_fd_error(m.decoder, g, loss, 8) < 1e-3);
  CHECK(input_fd_error(v, dv.data, loss) < 1e-3);

  const Md r = random_matrix(xh.data.rows(), xh.data.cols(), 10);
  GradSet<double> g2(m.decoder);
  decode_backward(*m.nets, m.decoder, tr, Batch<double>(xh.shape, r), &g2, false);
  auto loss2 = [&] { return decode(*m.nets, m.decoder, as_features<double>(v), Mode::Train).data.cwiseProduct(r).sum(); };
  CHECK(param_fd_error(m.decoder, g2, loss2, 8) < 1e-3);
}

TEST_CASE("normalize_rows keeps zero rows at zero") {
  Md u = Md::Zero(2, 3);
  u(1, 2) = 4;
  const Md z = normalize_rows<double>(u);
  CHECK(z.row(0).isZero(0));
  CHECK(z(1, 2) == doctest::Approx(1.0));
}

TEST_CASE("momentum update fixed points and arithmetic") {
  ParamSet<double> k, q;
  k.add("w", Md::Constant(1, 1, 1.0));
  q.add("w", Md::Constant(1, 1, 0.0));
  k.add("buf", Md::Constant(1, 1, 5.0), false);
  q.add("buf", Md::Constant(1, 1, -5.0), false);
  auto k1 = k;
  nn::momentum_update(k1, q, 1.0);
  CHECK(k1.value(0)(0, 0) == 1.0);
  auto k0 = k;
  nn::momentum_update(k0, q, 0.0);
  CHECK(k0.value(0)(0, 0) == 0.0);
  nn::momentum_update(k, q, 0.999);
  CHECK(k.value(0)(0, 0) == doctest::Approx(0.999).epsilon(1e-15));
  CHECK(k.value(1)(0, 0) == 5.0);
  CHECK_THROWS(nn::momentum_update(k, q, 1.5));
}

TEST_CASE("momentum update matches the closed-form moving average of a query trajectory") {
  const double m = 0.9;
  ParamSet<double> k, q;
  k.add("w", Md::Constant(1, 1, 0.3));
  q.add("w", Md::Constant(1, 1, 0.0));
  std::vector<double> traj;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  const int steps = 40;
  for (int t = 0; t < steps; ++t) {
    q.value(0)(0, 0) = n(rng);
    traj.push_back(q.value(0)(0, 0));
    nn::momentum_update(k, q, m);
  }
  double closed = std::pow(m, steps) * 0.3;
  for (int t = 0; t < steps; ++t) closed += (1 - m) * std::pow(m, steps - 1 - t) * traj[t];
  CHECK(k.value(0)(0, 0) == doctest::Approx(closed).epsilon(1e-12));
}

TEST_CASE("saliency from hand-differentiated probes") {
  Md g(1, 2), v(1, 2);
  g << 1, -6;  // dL/dv for L = v1 (first entry) and L = -v^2 at v = 3 (second)
  v << 2, 3;
  const Md eta = gradcam_from_gradient<double>(g, v);
  CHECK(eta(0, 0) == 2.0);
  CHECK(eta(0, 1) == 0.0);
  CHECK(gradcam_from_gradient<double>(Md::Zero(2, 3), random_matrix(2, 3, 1)).isZero(0));
}

TEST_CASE("contrastive feature gradient matches finite differences") {
  const ArchConfig a = tiny_arch();
  auto m = Model<double>::create(a, 15);
  Md v = random_matrix(4, a.feature_dim(), 11);
  const Md v2 = random_matrix(4, a.feature_dim(), 12);
  const ContrastiveOptions opt{0.2};
  const Md g = contrastive_feature_gradient(*m.nets, m.projector_q, as_features<double>(v), as_features<double>(v2), opt);
  auto loss = [&] {
    const auto z1 = project(*m.nets, m.projector_q, as_features<double>(v), true);
    const auto z2 = project(*m.nets, m.projector_q, as_features<double>(v2), true);
    Md z(8, z1.values.cols());
    z << z1.values, z2.values;
    return info_nce_batch<double>(z, {}, opt).value;
  };
  CHECK(input_fd_error(v, g, loss) < 1e-3);
  const Md eta = feature_saliency(*m.nets, m.projector_q, as_features<double>(v), as_features<double>(v2), opt);
  CHECK((eta - gradcam_from_gradient<double>(g, v)).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(eta.minCoeff() >= 0.0);
}

TEST_CASE("image-level saliency is non-negative and leaves buffers untouched") {
  const ArchConfig a = tiny_arch();
  auto m = Model<float>::create(a, 16);
  const auto before = m.encoder_q;
  const auto x = random_images(4, a, 1).cast<float>(), x2 = random_images(4, a, 2).cast<float>();
  const MatrixXf eta = gradcam_feature_scores(*m.nets, m.encoder_q, m.projector_q, x, x2, ContrastiveOptions{0.2});
  CHECK(eta.rows() == 4);
  CHECK(eta.cols() == a.feature_dim());
  CHECK(eta.minCoeff() >= 0.0f);
  for (int i = 0; i < before.size(); ++i) CHECK(before.value(i) == m.encoder_q.value(i));
  const Eigen::MatrixXd eb = normalize_scores(eta.cast<double>());
  CHECK(eb.minCoeff() >= 0.0);
  CHECK(eb.maxCoeff() <= 1.0);
}

TEST_CASE("spatial attention maps") {
  const Eigen::MatrixXd maps = random_matrix(3, 16, 1).cwiseAbs();
  CHECK(gradcam_map(maps, Eigen::MatrixXd::Zero(3, 16), 12, 12).isZero(0));

  const ArchConfig a = tiny_arch();
  auto m = Model<float>::create(a, 17);
  const auto x = random_images(3, a, 3).cast<float>(), x2 = random_images(3, a, 4).cast<float>();
  const auto hm = spatial_attention_map(*m.nets, m.encoder_q, m.projector_q, x, x2, ContrastiveOptions{0.2});
  REQUIRE(hm.size() == 3);
  for (const auto& h : hm) {
    CHECK(h.rows() == a.image_size);
    CHECK(h.cols() == a.image_size);
    CHECK(h.minCoeff() >= 0.0);
    CHECK(h.maxCoeff() <= 1.0);
  }
}

TEST_CASE("bilinear resize preserves constants and copies at equal size") {
  const Eigen::MatrixXd c = Eigen::MatrixXd::Constant(4, 4, 0.7);
  CHECK((resize_bilinear(c, 9, 9).array() - 0.7).abs().maxCoeff() < 1e-15);
  const Eigen::MatrixXd r = random_matrix(5, 5, 2);
  CHECK(resize_bilinear(r, 5, 5) == r);
}
