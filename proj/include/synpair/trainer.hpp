#pragma once

#include "synpair/augment.hpp"
#include "synpair/datagen.hpp"
#include "synpair/losses.hpp"
#include "synpair/nets.hpp"
#include "synpair/optim.hpp"
#include "synpair/perturb.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace synpair {

struct TrainConfig {
  ArchConfig arch;
  AugmentConfig augment;

  int epochs = 30;
  int batch_size = 32;
  double lr = 0.03;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double key_momentum = 0.999;
  int queue_capacity = 1024;
  int bank_capacity = 256;

  int decoder_epochs = 40;
  double decoder_lr = 1e-4;

  NoiseConfig noise;
  LossWeights weights;
  TemperatureConfig temperature;
  Denominator denominator = Denominator::WithPositive;

  std::uint64_t seed = 0;
  bool deterministic = true;
  int checkpoint_every = 0;  // epochs between checkpoints; 0 = only at the end
  bool allow_untrained_decoder = false;

  void validate() const;
  ContrastiveOptions contrastive() const { return {temperature.tau, denominator, true}; }
};

/// Canonical `key = value` text of every field that influences training.
std::string describe(const TrainConfig& cfg);

/// 64-bit FNV-1a of describe(cfg), as 16 hex digits.
std::string config_hash(const TrainConfig& cfg);

/// FIFO of unit-norm key representations.
class KeyQueue : public RingStore<float> {
 public:
  KeyQueue() = default;
  KeyQueue(int capacity, int dim) : RingStore<float>(capacity, dim) {}
  /// Rejects rows whose norm differs from 1 by more than 1e-3.
  void push(const MatrixXf& keys);
};

struct MetricsRecord {
  long step = 0;
  int epoch = 0;
  double loss_C = 0;
  double loss_R = 0;
  double loss_Cp = 0;
  double total = 0;
  double learning_rate = 0;
  double wall_time = 0;
};

std::string to_json_line(const MetricsRecord& r);
MetricsRecord parse_metrics_line(const std::string& line);
std::vector<MetricsRecord> read_metrics(const std::string& path);

/// Gradients for the three trained networks.
struct ModelGrads {
  GradSet<float> encoder, projector, decoder;

  ModelGrads() = default;
  explicit ModelGrads(const Model<float>& m) : encoder(m.encoder_q), projector(m.projector_q), decoder(m.decoder) {}
  void add_scaled(const ModelGrads& o, double a);
  double squared_norm() const;
};

struct TrainState {
  Model<float> model;
  KeyQueue queue;
  FeatureBank bank;
  Sgd<float> opt_encoder, opt_projector, opt_decoder;
  long step = 0;
  int epoch = 0;  // completed epochs
  Rng noise_rng;
  bool decoder_pretrained = false;

  /// Fresh state: random weights, key copies equal to queries, queue filled
  /// with random unit vectors, empty bank.
  static TrainState create(const TrainConfig& cfg);
};

/// Per-term quantities of one step, for gradient-flow probes and exports.
struct StepProbe {
  ModelGrads grad_C, grad_R, grad_Cp;
  Eigen::MatrixXd eta_bar;                    // B x n (empty when unused)
  std::optional<DispersionScores> dispersion;  // absent before the bank holds 2B rows
  MatrixXf features, perturbed;                // v, v_p
  int queue_fill_before = 0, queue_fill_after = 0;
  int bank_fill_before = 0, bank_fill_after = 0;
};

/// Image batches for one step: sources x and two augmented views.
struct StepBatch {
  Batch<float> x, x1, x2;
};

StepBatch make_step_batch(const Dataset& data, const std::vector<int>& idx, const AugmentConfig& aug,
                          std::uint64_t seed, int epoch);

/// One optimization step. `lr` is the scheduled learning rate.
MetricsRecord train_step(TrainState& state, const TrainConfig& cfg, const StepBatch& batch, double lr,
                         StepProbe* probe = nullptr);

/// Decoder-only training on resize-only training images with the encoder
/// frozen. Returns the mean loss of each epoch.
std::vector<double> pretrain_decoder(TrainState& state, const TrainConfig& cfg, const Dataset& data, int epochs);

/// Mean reconstruction MSE over one split.
double reconstruction_mse(const TrainState& state, const Dataset& data, Split split, int batch_size = 64);

struct TrainOptions {
  std::string out_dir;         // checkpoint.bin and metrics.jsonl go here; empty = nothing written
  int stop_after_epoch = -1;   // simulate an interruption after this many completed epochs
  std::function<void(const MetricsRecord&)> on_record;
};

/// Runs epochs state.epoch .. cfg.epochs-1. Metrics are appended to
/// out_dir/metrics.jsonl; checkpoints written at the configured cadence and
/// at the end. Refuses an untrained decoder unless allowed.
std::vector<MetricsRecord> train(TrainState& state, const TrainConfig& cfg, const Dataset& data,
                                 const TrainOptions& opts = {});

/// Atomic write (temp file then rename).
void save_checkpoint(const TrainState& state, const TrainConfig& cfg, const std::string& path);

/// Restores a checkpoint into a state built from the same architecture.
/// When `cfg` is given the stored config hash must match.
TrainState load_checkpoint(const std::string& path, const TrainConfig& cfg, bool check_hash = true);

/// Metadata block of a checkpoint (JSON text).
std::string checkpoint_metadata(const std::string& path);

}  // namespace synpair
