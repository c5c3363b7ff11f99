#include "doctest.h"
#include "support.hpp"

#include "synpair/perturb.hpp"
#include "synpair/trainer.hpp"

#include <deque>

using namespace synpair;
using testsupport::random_matrix;

namespace {

// Sum of squared deviations of the unit-normalized column, computed directly.
double dispersion_oracle(const Eigen::VectorXd& col) {
  const double norm = col.norm();
  if (norm == 0) return 0;
  const Eigen::VectorXd w = col / norm;
  const double mean = w.sum() / static_cast<double>(w.size());
  double s = 0;
  for (double x : w) s += (x - mean) * (x - mean);
  return s;
}

struct Moments {
  double mean = 0, std = 0;
};

Moments moments(const std::vector<double>& xs) {
  double m = 0;
  for (double x : xs) m += x;
  m /= static_cast<double>(xs.size());
  double v = 0;
  for (double x : xs) v += (x - m) * (x - m);
  return {m, std::sqrt(v / static_cast<double>(xs.size() - 1))};
}

}  // namespace

TEST_CASE("min-max normalization examples") {
  Eigen::VectorXd a(3), b(3), c(4);
  a << 2, 4, 6;
  b << 3, 3, 3;
  c << 0.1, 0.9, 0.5, 0.3;
  CHECK((min_max_normalize(a) - Eigen::Vector3d(0, 0.5, 1)).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(min_max_normalize(b).isZero(0));
  Eigen::VectorXd ce(4);
  ce << 0, 1, 0.5, 0.25;
  CHECK((min_max_normalize(c) - ce).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("min-max normalization: range and affine invariance") {
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    const Eigen::VectorXd v = random_matrix(9, 1, seed).col(0);
    const Eigen::VectorXd n = min_max_normalize(v);
    CHECK(n.minCoeff() == 0.0);
    CHECK(n.maxCoeff() == doctest::Approx(1.0).epsilon(1e-15));
    const double scale = 0.5 + static_cast<double>(seed), shift = -3.0 + static_cast<double>(seed) * 0.1;
    const Eigen::VectorXd moved = (scale * v.array() + shift).matrix();
    CHECK((min_max_normalize(moved) - n).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("dispersion closed forms") {
  Eigen::MatrixXd m(5, 3);
  m.col(0).setConstant(2.5);
  m.col(1).setZero();
  m(2, 1) = 7.0;
  m.col(2).setZero();
  const Eigen::VectorXd s = dispersion_scores(m);
  CHECK(std::abs(s(0)) < 1e-15);
  CHECK(s(1) == doctest::Approx(1.0 - 1.0 / 5).epsilon(1e-14));
  CHECK(s(2) == 0.0);
}

TEST_CASE("dispersion matches the direct computation on Gaussian columns") {
  const Eigen::MatrixXd m = random_matrix(8, 6, 17);
  const Eigen::VectorXd s = dispersion_scores(m);
  for (int i = 0; i < 6; ++i) {
    CHECK(std::abs(s(i) - dispersion_oracle(m.col(i))) < 1e-10);
    CHECK(s(i) >= 0);
    CHECK(s(i) <= 1 + 1e-12);
  }
}

TEST_CASE("dispersion of a bank uses only filled rows") {
  FeatureBank bank(6, 3);
  const MatrixXf rows = random_matrix(4, 3, 5).cast<float>();
  bank.push(rows);
  const auto d = dispersion_scores(bank, 0.02);
  const Eigen::VectorXd direct = dispersion_scores(rows.cast<double>());
  CHECK((d.s - direct).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((d.s_bar - min_max_normalize(direct)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(d.kappa == 0.02);
}

TEST_CASE("saliency noise: degenerate cases are exactly zero") {
  Rng rng(1);
  Eigen::VectorXd eta = Eigen::VectorXd::Ones(5);
  CHECK(sample_gradcam_noise(eta, 0.1, rng).isZero(0));
  eta.setConstant(0.3);
  CHECK(sample_gradcam_noise(eta, 0.0, rng).isZero(0));
}

TEST_CASE("saliency noise: 1e5 draws match the configured standard deviation") {
  Rng rng(12345);
  Eigen::VectorXd eta(3);
  eta << 0.5, 1.0, 0.0;
  std::vector<double> d0, d2;
  for (int t = 0; t < 100000; ++t) {
    const Eigen::VectorXd n = sample_gradcam_noise(eta, 0.1, rng);
    REQUIRE(n(1) == 0.0);
    d0.push_back(n(0));
    d2.push_back(n(2));
  }
  const auto m0 = moments(d0), m2 = moments(d2);
  CHECK(std::abs(m0.mean) < 1e-3);
  CHECK(std::abs(m0.std - 0.05) / 0.05 < 0.02);
  CHECK(std::abs(m2.std - 0.1) / 0.1 < 0.02);
  CHECK((gradcam_noise_std(eta, 0.1) - Eigen::Vector3d(0.05, 0.0, 0.1)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("dispersion noise: mask and standard deviation") {
  NoiseConfig cfg;
  Eigen::VectorXd s(4), sb(4);
  s << 0.01, 0.5, 0.02, 0.3;  // only dimension 0 is below kappa (strict)
  sb << 0.0, 1.0, 0.04, 0.6;
  Rng rng(777);
  std::vector<double> d0;
  for (int t = 0; t < 100000; ++t) {
    const Eigen::VectorXd n = sample_variance_noise(s, sb, cfg, rng);
    REQUIRE(n(1) == 0.0);
    REQUIRE(n(2) == 0.0);
    REQUIRE(n(3) == 0.0);
    d0.push_back(n(0));
  }
  CHECK(std::abs(moments(d0).std - 0.05) / 0.05 < 0.02);

  Rng r2(1);
  Eigen::VectorXd high = Eigen::VectorXd::Constant(4, 0.5);
  CHECK(sample_variance_noise(high, sb, cfg, r2).isZero(0));
  NoiseConfig off = cfg;
  off.eps_var = 0;
  CHECK(sample_variance_noise(s, sb, off, r2).isZero(0));
  Eigen::VectorXd expect(4);
  expect << 0.05, 0, 0, 0;
  CHECK((variance_noise_std(s, sb, cfg) - expect).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("perturb_features modes") {
  const Eigen::VectorXd v = random_matrix(5, 1, 1).col(0), ng = random_matrix(5, 1, 2).col(0),
                        nv = random_matrix(5, 1, 3).col(0), z = Eigen::VectorXd::Zero(5);
  NoiseConfig cfg;
  cfg.mode = NoiseMode::None;
  CHECK(perturb_features(v, ng, nv, cfg) == v);
  cfg.mode = NoiseMode::Both;
  CHECK(perturb_features(v, z, z, cfg) == v);
  CHECK((perturb_features(v, ng, nv, cfg) - (v + ng + nv)).isZero(1e-15));
  cfg.mode = NoiseMode::GradcamOnly;
  CHECK((perturb_features(v, ng, nv, cfg) - (v + ng)).isZero(1e-15));
  cfg.mode = NoiseMode::LowvarOnly;
  CHECK((perturb_features(v, ng, nv, cfg) - (v + nv)).isZero(1e-15));
  CHECK_THROWS(perturb_features(v, Eigen::VectorXd::Zero(3), nv, cfg));
}

TEST_CASE("perturbation energy equals the summed variances") {
  NoiseConfig cfg;
  const int n = 16;
  Eigen::VectorXd eta = (random_matrix(n, 1, 4).col(0).array().abs()).matrix();
  eta = min_max_normalize(eta);
  Eigen::VectorXd s = (random_matrix(n, 1, 5).col(0).array().abs() * 0.02).matrix();
  const Eigen::VectorXd sb = min_max_normalize(s);
  const Eigen::VectorXd v = random_matrix(n, 1, 6).col(0);
  const double expected = gradcam_noise_std(eta, cfg.eps_g).squaredNorm() + variance_noise_std(s, sb, cfg).squaredNorm();
  Rng rng(99);
  double acc = 0;
  const int draws = 10000;
  for (int t = 0; t < draws; ++t) {
    const Eigen::VectorXd vp =
        perturb_features(v, sample_gradcam_noise(eta, cfg.eps_g, rng), sample_variance_noise(s, sb, cfg, rng), cfg);
    acc += (vp - v).squaredNorm();
  }
  CHECK(std::abs(acc / draws - expected) / expected < 0.03);
}

TEST_CASE("perturb_batch leaves rows unchanged in mode none and is seeded") {
  const Eigen::MatrixXd f = random_matrix(4, 6, 8);
  const Eigen::MatrixXd eta = Eigen::MatrixXd::Constant(4, 6, 0.5);
  NoiseConfig cfg;
  cfg.mode = NoiseMode::None;
  Rng r(3);
  CHECK(perturb_batch(f, eta, nullptr, cfg, r) == f);
  cfg.mode = NoiseMode::GradcamOnly;
  Rng a(5), b(5);
  CHECK(perturb_batch(f, eta, nullptr, cfg, a) == perturb_batch(f, eta, nullptr, cfg, b));
  CHECK_THROWS(perturb_batch(f, Eigen::MatrixXd(), nullptr, cfg, a));
}

TEST_CASE("ring store examples") {
  RingStore<float> bank(4, 1);
  auto rows = [](std::initializer_list<float> v) {
    MatrixXf m(static_cast<int>(v.size()), 1);
    int i = 0;
    for (float x : v) m(i++, 0) = x;
    return m;
  };
  bank.push(rows({1, 2}));
  bank.push(rows({3, 4}));
  bank.push(rows({5, 6}));
  CHECK(bank.fill() == 4);
  CHECK(bank.rows() == rows({5, 6, 3, 4}));
  CHECK(bank.chronological() == rows({3, 4, 5, 6}));

  RingStore<float> fresh(3, 1);
  fresh.push(rows({7, 8, 9}));
  CHECK(fresh.full());
  CHECK(fresh.chronological() == rows({7, 8, 9}));
  CHECK_THROWS(fresh.push(rows({1, 2, 3, 4})));
}

TEST_CASE("ring store and key queue match a shadow list over 1000 random pushes") {
  std::mt19937_64 rng(2024);
  for (int capacity : {1, 5, 32}) {
    RingStore<float> bank(capacity, 3);
    KeyQueue queue(capacity, 3);
    std::deque<Eigen::RowVector3f> shadow;
    for (int t = 0; t < 1000; ++t) {
      const int b = 1 + static_cast<int>(rng() % static_cast<unsigned>(capacity));
      MatrixXf batch(b, 3);
      for (int i = 0; i < b; ++i) {
        Eigen::RowVector3f r(static_cast<float>(rng() % 1000) + 1, static_cast<float>(t), static_cast<float>(i));
        batch.row(i) = r.normalized();
        shadow.push_back(batch.row(i));
      }
      while (static_cast<int>(shadow.size()) > capacity) shadow.pop_front();
      const int before = bank.fill();
      bank.push(batch);
      queue.push(batch);
      REQUIRE(bank.fill() == std::min(capacity, before + b));
      const MatrixXf chrono = bank.chronological(), qchrono = queue.chronological();
      REQUIRE(chrono.rows() == static_cast<int>(shadow.size()));
      for (int i = 0; i < chrono.rows(); ++i) {
        REQUIRE(chrono.row(i) == shadow[i]);
        REQUIRE(qchrono.row(i) == shadow[i]);
      }
    }
  }
}

TEST_CASE("key queue rejects unnormalized keys") {
  KeyQueue q(4, 2);
  CHECK_THROWS(q.push(MatrixXf::Constant(1, 2, 3.0f)));
}
