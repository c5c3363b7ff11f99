#pragma once

#include "synpair/trainer.hpp"

#include <array>
#include <string>
#include <vector>

namespace synpair {

/// Frozen encoder features (eval mode) for the listed items, one row each.
Eigen::MatrixXd extract_features(const Model<float>& model, const Dataset& data, const std::vector<int>& idx,
                                 int batch_size = 64);

struct LinearEvalConfig {
  double lr = 30.0;
  double momentum = 0.9;
  double weight_decay = 0.0;
  int epochs = 30;
  int batch_size = 128;
  bool normalize_features = true;  // l2-normalize rows before the probe
};

struct LinearEvalResult {
  double top1 = 0;  // percent
  double label_fraction = 1.0;
  std::uint64_t seed = 0;
  std::vector<int> labeled_per_class;
};

/// Class-stratified subset: floor(fraction * n_c) items of each class,
/// chosen by a seeded shuffle. Throws DataError naming any class left empty.
std::vector<int> stratified_subset(const std::vector<int>& items, const std::vector<int>& labels, int num_classes,
                                   double fraction, std::uint64_t seed);

/// Softmax linear probe on precomputed features; accuracy on the test rows.
LinearEvalResult linear_eval_features(const Eigen::MatrixXd& train_x, const std::vector<int>& train_y,
                                      const Eigen::MatrixXd& test_x, const std::vector<int>& test_y,
                                      int num_classes, double label_fraction, std::uint64_t seed,
                                      const LinearEvalConfig& cfg = {});

LinearEvalResult linear_eval(const Model<float>& model, const Dataset& data, double label_fraction,
                             std::uint64_t seed, const LinearEvalConfig& cfg = {});

struct RetrievalResult {
  double rank1 = 0, rank5 = 0, mAP = 0;  // percent
  int queries = 0;
  int excluded = 0;  // queries without any same-class gallery item
};

/// Leave-one-out cosine retrieval among the given rows.
RetrievalResult retrieval_eval_features(const Eigen::MatrixXd& feats, const std::vector<int>& labels);
RetrievalResult retrieval_eval(const Model<float>& model, const Dataset& data);

struct CollapseReport {
  Eigen::VectorXd dispersion;  // per dimension, over the rows
  Eigen::VectorXd separation;  // between-class / within-class variance
  int argmin_dispersion = 0, argmax_dispersion = 0, argmax_separation = 0;

  void write_csv(const std::string& path) const;
  std::string summary_json() const;
};

CollapseReport collapse_report_features(const Eigen::MatrixXd& feats, const std::vector<int>& labels);
CollapseReport collapse_report(const Model<float>& model, const Dataset& data);

/// Original | x_hat | x_hat_p strips, one PNG per input. Saliency uses a
/// seeded augmented view of each input; dispersion uses the state's bank
/// when it holds at least two rows. Returns the written paths.
std::vector<std::string> export_pairs(const TrainState& state, const TrainConfig& cfg,
                                      const std::vector<ImageArray>& images, const NoiseConfig& noise,
                                      const std::string& out_dir, std::uint64_t seed);

/// Decoded pairs without writing files (x_hat, x_hat_p), same semantics.
std::pair<Batch<float>, Batch<float>> generate_pairs(const TrainState& state, const TrainConfig& cfg,
                                                     const std::vector<ImageArray>& images, const NoiseConfig& noise,
                                                     std::uint64_t seed);

/// Grad-CAM maps for the images (augmented partner drawn from `seed`).
std::vector<Eigen::MatrixXd> attention_maps(const TrainState& state, const TrainConfig& cfg,
                                            const std::vector<ImageArray>& images, std::uint64_t seed);

/// Original | heat map | overlay strips, one PNG per input.
std::vector<std::string> export_attention(const TrainState& state, const TrainConfig& cfg,
                                          const std::vector<ImageArray>& images, const std::string& out_dir,
                                          std::uint64_t seed);

/// Share of total attention inside box (x0, y0, x1, y1).
double attention_mass_in_box(const Eigen::MatrixXd& map, const std::array<int, 4>& box);

}  // namespace synpair
