#include "synpair/perturb.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace synpair {

std::string to_string(NoiseMode m) {
  switch (m) {
    case NoiseMode::Both: return "both";
    case NoiseMode::GradcamOnly: return "gradcam_only";
    case NoiseMode::LowvarOnly: return "lowvar_only";
    case NoiseMode::RandomAll: return "random_all";
    case NoiseMode::None: return "none";
  }
  return "?";
}

NoiseMode parse_noise_mode(const std::string& s) {
  for (auto m : {NoiseMode::Both, NoiseMode::GradcamOnly, NoiseMode::LowvarOnly, NoiseMode::RandomAll, NoiseMode::None})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown noise mode '" + s + "' (expected both, gradcam_only, lowvar_only, random_all, none)");
}

void NoiseConfig::validate() const {
  if (!(eps_g >= 0.0) || !std::isfinite(eps_g)) throw ConfigError("eps_g must be finite and >= 0");
  if (!(eps_var >= 0.0) || !std::isfinite(eps_var)) throw ConfigError("eps_var must be finite and >= 0");
  if (std::isnan(kappa)) throw ConfigError("kappa must be a number");
}

bool needs_saliency(NoiseMode m) { return m == NoiseMode::Both || m == NoiseMode::GradcamOnly; }
bool needs_dispersion(NoiseMode m) { return m == NoiseMode::Both || m == NoiseMode::LowvarOnly; }

Eigen::VectorXd dispersion_scores(const Eigen::Ref<const Eigen::MatrixXd>& rows) {
  const Eigen::Index d = rows.rows();
  if (d < 2) throw std::invalid_argument("dispersion_scores: need at least 2 filled rows, have " + std::to_string(d));
  Eigen::VectorXd s(rows.cols());
  for (Eigen::Index i = 0; i < rows.cols(); ++i) {
    const double norm = rows.col(i).norm();
    if (norm == 0.0) {
      s(i) = 0.0;
      continue;
    }
    const Eigen::VectorXd w = rows.col(i) / norm;
    const double mean = w.mean();
    s(i) = std::min(1.0, (w.array() - mean).square().sum());
  }
  return s;
}

DispersionScores dispersion_scores(const FeatureBank& bank, double kappa) {
  DispersionScores out;
  out.s = dispersion_scores(bank.rows().cast<double>());
  out.s_bar = min_max_normalize(out.s);
  out.kappa = kappa;
  return out;
}

Eigen::VectorXd min_max_normalize(const Eigen::Ref<const Eigen::VectorXd>& vec) {
  if (vec.size() == 0) throw std::invalid_argument("min_max_normalize: empty input");
  if (!vec.allFinite()) throw std::invalid_argument("min_max_normalize: non-finite input");
  const double lo = vec.minCoeff();
  const double hi = vec.maxCoeff();
  if (!(hi > lo)) return Eigen::VectorXd::Zero(vec.size());
  return ((vec.array() - lo) / (hi - lo)).matrix();
}

Eigen::VectorXd gradcam_noise_std(const Eigen::Ref<const Eigen::VectorXd>& eta_bar, double eps_g) {
  if ((eta_bar.array() < 0.0).any() || (eta_bar.array() > 1.0).any() || !eta_bar.allFinite())
    throw std::invalid_argument("gradcam noise: normalized scores must lie in [0,1]");
  return (eps_g * (1.0 - eta_bar.array())).matrix();
}

Eigen::VectorXd variance_noise_std(const Eigen::Ref<const Eigen::VectorXd>& s,
                                   const Eigen::Ref<const Eigen::VectorXd>& s_bar, const NoiseConfig& cfg) {
  if (s.size() != s_bar.size()) throw std::invalid_argument("variance noise: s and s_bar lengths differ");
  Eigen::VectorXd std_dev(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) std_dev(i) = s(i) < cfg.kappa ? cfg.eps_var * (1.0 - s_bar(i)) : 0.0;
  return std_dev;
}

namespace {

Eigen::VectorXd draw(const Eigen::VectorXd& std_dev, Rng& rng) {
  Eigen::VectorXd out(std_dev.size());
  // One normal per dimension regardless of masking keeps stream use fixed.
  for (Eigen::Index i = 0; i < std_dev.size(); ++i) {
    const double z = standard_normal(rng);
    out(i) = std_dev(i) == 0.0 ? 0.0 : std_dev(i) * z;
  }
  return out;
}

}  // namespace

Eigen::VectorXd sample_gradcam_noise(const Eigen::Ref<const Eigen::VectorXd>& eta_bar, double eps_g, Rng& rng) {
  return draw(gradcam_noise_std(eta_bar, eps_g), rng);
}

Eigen::VectorXd sample_variance_noise(const Eigen::Ref<const Eigen::VectorXd>& s,
                                      const Eigen::Ref<const Eigen::VectorXd>& s_bar, const NoiseConfig& cfg,
                                      Rng& rng) {
  return draw(variance_noise_std(s, s_bar, cfg), rng);
}

Eigen::VectorXd perturb_features(const Eigen::Ref<const Eigen::VectorXd>& v,
                                 const Eigen::Ref<const Eigen::VectorXd>& ng,
                                 const Eigen::Ref<const Eigen::VectorXd>& nv, const NoiseConfig& cfg) {
  if (ng.size() != v.size() || nv.size() != v.size())
    throw std::invalid_argument("perturb_features: noise length does not match feature length");
  switch (cfg.mode) {
    case NoiseMode::Both: return v + ng + nv;
    case NoiseMode::GradcamOnly:
    case NoiseMode::RandomAll: return v + ng;
    case NoiseMode::LowvarOnly: return v + nv;
    case NoiseMode::None: return v;
  }
  return v;
}

Eigen::MatrixXd perturb_batch(const Eigen::Ref<const Eigen::MatrixXd>& features,
                              const Eigen::Ref<const Eigen::MatrixXd>& eta_bar, const DispersionScores* dispersion,
                              const NoiseConfig& cfg, Rng& rng) {
  const Eigen::Index b = features.rows(), n = features.cols();
  if (needs_saliency(cfg.mode) && (eta_bar.rows() != b || eta_bar.cols() != n))
    throw std::invalid_argument("perturb_batch: saliency scores missing or mis-shaped for mode " + to_string(cfg.mode));
  const Eigen::VectorXd zeros = Eigen::VectorXd::Zero(n);
  Eigen::MatrixXd out(b, n);
  for (Eigen::Index i = 0; i < b; ++i) {
    Eigen::VectorXd ng = zeros, nv = zeros;
    if (needs_saliency(cfg.mode)) ng = sample_gradcam_noise(eta_bar.row(i).transpose(), cfg.eps_g, rng);
    if (cfg.mode == NoiseMode::RandomAll) ng = sample_gradcam_noise(zeros, cfg.eps_g, rng);
    if (needs_dispersion(cfg.mode) && dispersion) nv = sample_variance_noise(dispersion->s, dispersion->s_bar, cfg, rng);
    out.row(i) = perturb_features(features.row(i).transpose(), ng, nv, cfg).transpose();
  }
  return out;
}

}  // namespace synpair
