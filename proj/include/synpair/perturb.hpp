#pragma once

#include "synpair/ring_store.hpp"
#include "synpair/rng.hpp"

#include <string>

namespace synpair {

/// Memory bank M (D x n) of recent feature vectors.
using FeatureBank = RingStore<float>;

/// Which noise components build v_p.
enum class NoiseMode { Both, GradcamOnly, LowvarOnly, RandomAll, None };

std::string to_string(NoiseMode m);
NoiseMode parse_noise_mode(const std::string& s);

struct NoiseConfig {
  double eps_g = 0.1;
  double eps_var = 0.05;
  double kappa = 0.02;
  NoiseMode mode = NoiseMode::Both;
  void validate() const;
};

/// Per-dimension dispersion of a bank snapshot.
struct DispersionScores {
  Eigen::VectorXd s;      // total squared deviation of each unit-normalized column, in [0,1]
  Eigen::VectorXd s_bar;  // min-max normalized s
  double kappa = 0.0;
};

/// Column-wise dispersion: for column i scaled to unit norm over the rows,
/// s_i = sum_j (w_ji - mean_i)^2 = 1 - rows * mean_i^2. Zero columns score 0.
/// Requires at least two rows.
Eigen::VectorXd dispersion_scores(const Eigen::Ref<const Eigen::MatrixXd>& rows);

/// Dispersion of a bank's filled rows, plus the normalized scores.
DispersionScores dispersion_scores(const FeatureBank& bank, double kappa);

/// (vec - min) / (max - min); constant vectors map to all zeros.
Eigen::VectorXd min_max_normalize(const Eigen::Ref<const Eigen::VectorXd>& vec);

/// Standard deviations eps_g * (1 - eta_bar_i).
Eigen::VectorXd gradcam_noise_std(const Eigen::Ref<const Eigen::VectorXd>& eta_bar, double eps_g);

/// Standard deviations eps_var * (1 - s_bar_i) where s_i < kappa, else 0.
Eigen::VectorXd variance_noise_std(const Eigen::Ref<const Eigen::VectorXd>& s,
                                   const Eigen::Ref<const Eigen::VectorXd>& s_bar, const NoiseConfig& cfg);

/// One draw of the saliency-guided noise vector.
Eigen::VectorXd sample_gradcam_noise(const Eigen::Ref<const Eigen::VectorXd>& eta_bar, double eps_g, Rng& rng);

/// One draw of the low-dispersion noise vector; exactly zero where s_i >= kappa.
Eigen::VectorXd sample_variance_noise(const Eigen::Ref<const Eigen::VectorXd>& s,
                                      const Eigen::Ref<const Eigen::VectorXd>& s_bar, const NoiseConfig& cfg,
                                      Rng& rng);

/// v_p from v and the two noise vectors according to cfg.mode. For
/// RandomAll, `ng` is expected to come from a flat (eta_bar = 0) profile.
Eigen::VectorXd perturb_features(const Eigen::Ref<const Eigen::VectorXd>& v,
                                 const Eigen::Ref<const Eigen::VectorXd>& ng,
                                 const Eigen::Ref<const Eigen::VectorXd>& nv, const NoiseConfig& cfg);

/// Batch driver used by training and exports: perturbs every row of
/// `features`. `eta_bar` holds one normalized saliency row per sample (may be
/// empty when the mode does not need it); `dispersion` may be null, which
/// disables the low-dispersion component.
Eigen::MatrixXd perturb_batch(const Eigen::Ref<const Eigen::MatrixXd>& features,
                              const Eigen::Ref<const Eigen::MatrixXd>& eta_bar, const DispersionScores* dispersion,
                              const NoiseConfig& cfg, Rng& rng);

bool needs_saliency(NoiseMode m);
bool needs_dispersion(NoiseMode m);

}  // namespace synpair
