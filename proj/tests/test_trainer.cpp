#include "doctest.h"
#include "support.hpp"

#include "synpair/trainer.hpp"

#include <filesystem>
#include <fstream>

using namespace synpair;
using testsupport::tiny_config;
namespace fs = std::filesystem;

namespace {

const Dataset& data16() {
  static const Dataset d = testsupport::small_dataset(2, 20, 16, 5);
  return d;
}

StepBatch first_batch(const TrainConfig& cfg, const Dataset& d) {
  auto idx = d.indices(Split::Train);
  idx.resize(cfg.batch_size);
  return make_step_batch(d, idx, cfg.augment, cfg.seed, 0);
}

double max_param_diff(const ParamSet<float>& a, const ParamSet<float>& b) {
  double m = 0;
  for (int i = 0; i < a.size(); ++i) m = std::max(m, static_cast<double>((a.value(i) - b.value(i)).cwiseAbs().maxCoeff()));
  return m;
}

double max_model_diff(const Model<float>& a, const Model<float>& b) {
  return std::max({max_param_diff(a.encoder_q, b.encoder_q), max_param_diff(a.projector_q, b.projector_q),
                   max_param_diff(a.encoder_k, b.encoder_k), max_param_diff(a.projector_k, b.projector_k),
                   max_param_diff(a.decoder, b.decoder)});
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("config validation") {
  auto cfg = tiny_config();
  CHECK_NOTHROW(cfg.validate());
  cfg.batch_size = cfg.bank_capacity + 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.noise.eps_g = -1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.batch_size = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK(config_hash(tiny_config()) == config_hash(tiny_config()));
  auto other = tiny_config();
  other.weights.nu = 0.1;
  CHECK(config_hash(other) != config_hash(tiny_config()));
}

TEST_CASE("oversized batch is rejected before any compute") {
  auto cfg = tiny_config();
  cfg.bank_capacity = 4;
  cfg.batch_size = 8;
  TrainState st;
  CHECK_THROWS_AS(st = TrainState::create(cfg), ConfigError);
}

TEST_CASE("baseline step: total equals the queue loss") {
  auto cfg = tiny_config();
  cfg.weights = {0.0, 0.0};
  auto st = TrainState::create(cfg);
  const auto rec = train_step(st, cfg, first_batch(cfg, data16()), cfg.lr);
  CHECK(rec.total == rec.loss_C);
  CHECK(rec.loss_R == 0.0);
  CHECK(rec.loss_Cp == 0.0);
  CHECK(st.bank.fill() == 0);
}

TEST_CASE("reconstruction-only step: total = L_C + alpha L_R") {
  auto cfg = tiny_config();
  cfg.weights = {1.0, 0.0};
  cfg.allow_untrained_decoder = true;
  auto st = TrainState::create(cfg);
  const auto rec = train_step(st, cfg, first_batch(cfg, data16()), cfg.lr);
  CHECK(rec.total == doctest::Approx(rec.loss_C + rec.loss_R).epsilon(1e-12));
  CHECK(rec.loss_R > 0.0);
}

TEST_CASE("gradient-flow contract on a full step") {
  auto cfg = tiny_config();
  auto st = TrainState::create(cfg);
  const auto batch = first_batch(cfg, data16());
  // Fill the bank so the dispersion branch is active.
  auto warm = cfg;
  for (int i = 0; i < 4; ++i) train_step(st, warm, batch, 0.0);
  const auto before = st.model;
  StepProbe probe;
  const auto rec = train_step(st, cfg, batch, cfg.lr, &probe);

  for (int i = 0; i < probe.grad_Cp.decoder.size(); ++i) CHECK(probe.grad_Cp.decoder[i].cwiseAbs().maxCoeff() == 0.0f);
  CHECK(probe.grad_R.decoder.squared_norm() > 0.0f);
  CHECK(probe.grad_R.encoder.squared_norm() > 0.0f);
  CHECK(probe.grad_Cp.encoder.squared_norm() > 0.0f);
  CHECK(probe.grad_C.encoder.squared_norm() > 0.0f);
  CHECK(probe.grad_C.decoder.squared_norm() == 0.0f);
  CHECK(probe.grad_R.projector.squared_norm() == 0.0f);
  CHECK(probe.dispersion.has_value());
  CHECK(probe.eta_bar.rows() == cfg.batch_size);
  CHECK(probe.eta_bar.minCoeff() >= 0.0);
  CHECK(probe.eta_bar.maxCoeff() <= 1.0);
  CHECK((probe.perturbed - probe.features).cwiseAbs().maxCoeff() > 0.0f);
  CHECK(std::isfinite(rec.total));

  // Keys receive no gradient: they move exactly by the moving average.
  auto expected = before.encoder_k;
  nn::momentum_update(expected, before.encoder_q, cfg.key_momentum);
  for (int i = 0; i < expected.size(); ++i)
    if (expected[i].trainable) CHECK((expected.value(i) - st.model.encoder_k.value(i)).cwiseAbs().maxCoeff() == 0.0f);

  CHECK(probe.queue_fill_after - probe.queue_fill_before == 0);  // queue was pre-filled at capacity
  CHECK(probe.bank_fill_after == std::min(cfg.bank_capacity, probe.bank_fill_before + cfg.batch_size));
}

TEST_CASE("bank fill advances by B per step until saturation") {
  auto cfg = tiny_config();
  cfg.bank_capacity = 20;
  auto st = TrainState::create(cfg);
  const auto batch = first_batch(cfg, data16());
  CHECK(st.queue.fill() == cfg.queue_capacity);
  int expect = 0;
  for (int t = 0; t < 4; ++t) {
    StepProbe p;
    train_step(st, cfg, batch, cfg.lr, &p);
    CHECK(p.bank_fill_before == expect);
    expect = std::min(20, expect + cfg.batch_size);
    CHECK(p.bank_fill_after == expect);
    CHECK(st.queue.fill() == cfg.queue_capacity);
  }
}

TEST_CASE("one epoch over 200 training items with B = 20 yields 10 records") {
  const Dataset d = testsupport::small_dataset(5, 50, 16, 8);
  REQUIRE(d.indices(Split::Train).size() == 200);
  auto cfg = tiny_config();
  cfg.arch.image_size = 16;
  cfg.epochs = 1;
  cfg.batch_size = 20;
  cfg.weights = {0.0, 0.0};
  auto st = TrainState::create(cfg);
  CHECK(train(st, cfg, d).size() == 10);
}

TEST_CASE("training refuses an untrained decoder unless allowed") {
  auto cfg = tiny_config();
  auto st = TrainState::create(cfg);
  CHECK_THROWS_AS(train(st, cfg, data16()), ConfigError);
  cfg.allow_untrained_decoder = true;
  cfg.epochs = 1;
  CHECK_NOTHROW(train(st, cfg, data16()));
}

TEST_CASE("deterministic runs write identical metrics") {
  auto cfg = tiny_config();
  cfg.allow_untrained_decoder = true;
  const auto a = testsupport::scratch("det_a"), b = testsupport::scratch("det_b");
  auto sa = TrainState::create(cfg), sb = TrainState::create(cfg);
  train(sa, cfg, data16(), {a.string()});
  train(sb, cfg, data16(), {b.string()});
  CHECK(slurp(a / "metrics.jsonl") == slurp(b / "metrics.jsonl"));
  CHECK(!slurp(a / "metrics.jsonl").empty());
  CHECK(max_model_diff(sa.model, sb.model) == 0.0);
}

TEST_CASE("resume reproduces the uninterrupted run") {
  auto cfg = tiny_config();
  cfg.epochs = 4;
  cfg.allow_untrained_decoder = true;
  const auto full = testsupport::scratch("resume_full"), part = testsupport::scratch("resume_part");
  auto s1 = TrainState::create(cfg);
  train(s1, cfg, data16(), {full.string()});

  auto s2 = TrainState::create(cfg);
  TrainOptions stop{part.string(), 2, {}};
  train(s2, cfg, data16(), stop);
  CHECK(s2.epoch == 2);
  auto s3 = load_checkpoint((part / "checkpoint.bin").string(), cfg);
  CHECK(s3.epoch == 2);
  train(s3, cfg, data16(), {part.string()});
  CHECK(max_model_diff(s1.model, s3.model) <= 1e-6);
  CHECK(slurp(full / "metrics.jsonl") == slurp(part / "metrics.jsonl"));
  const auto c1 = load_checkpoint((full / "checkpoint.bin").string(), cfg);
  CHECK(max_model_diff(c1.model, s1.model) == 0.0);
  CHECK((c1.queue.storage() - s1.queue.storage()).cwiseAbs().maxCoeff() == 0.0f);
  CHECK((c1.bank.storage() - s1.bank.storage()).cwiseAbs().maxCoeff() == 0.0f);
  CHECK(rng_state(c1.noise_rng) == rng_state(s1.noise_rng));
}

TEST_CASE("checkpoint rejects a different configuration") {
  auto cfg = tiny_config();
  const auto dir = testsupport::scratch("ckpt_hash");
  auto st = TrainState::create(cfg);
  save_checkpoint(st, cfg, (dir / "c.bin").string());
  auto other = cfg;
  other.weights.nu = 1.0;
  CHECK_THROWS_AS(load_checkpoint((dir / "c.bin").string(), other), ConfigError);
  CHECK_NOTHROW(load_checkpoint((dir / "c.bin").string(), other, false));
  CHECK(checkpoint_metadata((dir / "c.bin").string()).find("config_hash") != std::string::npos);
  std::ofstream(dir / "junk.bin") << "garbage";
  CHECK_THROWS_AS(load_checkpoint((dir / "junk.bin").string(), cfg), IoError);
}

TEST_CASE("metrics lines round-trip") {
  MetricsRecord r{17, 3, 1.25, 0.5, 2.0, 3.25, 0.01, 0.0};
  const auto back = parse_metrics_line(to_json_line(r));
  CHECK(back.step == 17);
  CHECK(back.epoch == 3);
  CHECK(back.loss_C == 1.25);
  CHECK(back.total == 3.25);
  CHECK(back.learning_rate == 0.01);
}

TEST_CASE("decoder pre-training") {
  auto cfg = tiny_config();
  auto st = TrainState::create(cfg);
  const auto init = st.model.decoder;
  CHECK(pretrain_decoder(st, cfg, data16(), 0).empty());
  CHECK(max_param_diff(init, st.model.decoder) == 0.0);
  CHECK_FALSE(st.decoder_pretrained);

  auto a = TrainState::create(cfg), b = TrainState::create(cfg);
  const double before = reconstruction_mse(a, data16(), Split::Train);
  const auto ha = pretrain_decoder(a, cfg, data16(), 3);
  const auto hb = pretrain_decoder(b, cfg, data16(), 3);
  CHECK(ha == hb);
  CHECK(max_param_diff(a.model.decoder, b.model.decoder) == 0.0);
  CHECK(a.decoder_pretrained);
  CHECK(reconstruction_mse(a, data16(), Split::Train) < before);
  // The encoder stays frozen.
  CHECK(max_param_diff(a.model.encoder_q, TrainState::create(cfg).model.encoder_q) == 0.0);
}

namespace {

std::vector<MetricsRecord> fifty_steps(const TrainConfig& cfg, const Dataset& d) {
  auto st = TrainState::create(cfg);
  std::vector<MetricsRecord> out;
  const auto train_idx = d.indices(Split::Train);
  for (int epoch = 0; out.size() < 50; ++epoch)
    for (const auto& idx : shuffled_batches(train_idx, cfg.batch_size, derive_seed(1, {static_cast<std::uint64_t>(epoch)}), true)) {
      if (out.size() == 50) break;
      out.push_back(train_step(st, cfg, make_step_batch(d, idx, cfg.augment, cfg.seed, epoch), cfg.lr));
    }
  return out;
}

double window_mean(const std::vector<MetricsRecord>& r, int from, double MetricsRecord::*field) {
  double s = 0;
  for (int i = from; i < from + 10; ++i) s += r[i].*field;
  return s / 10;
}

}  // namespace

TEST_CASE("loss over the first 50 steps on a two-class set") {
  const Dataset d = testsupport::small_dataset(2, 100, 32, 21);
  TrainConfig cfg;
  cfg.arch.image_size = 32;
  cfg.allow_untrained_decoder = true;

  // Default queue: the generated-pair and reconstruction terms fall, while
  // L_C climbs as random initial negatives are replaced by real keys.
  const auto r = fifty_steps(cfg, d);
  MESSAGE("queue 1024: total " << window_mean(r, 0, &MetricsRecord::total) << " -> " << window_mean(r, 40, &MetricsRecord::total)
                               << ", L_C " << window_mean(r, 0, &MetricsRecord::loss_C) << " -> "
                               << window_mean(r, 40, &MetricsRecord::loss_C));
  CHECK(window_mean(r, 40, &MetricsRecord::loss_R) < window_mean(r, 0, &MetricsRecord::loss_R));
  CHECK(window_mean(r, 40, &MetricsRecord::loss_Cp) < window_mean(r, 0, &MetricsRecord::loss_Cp));
  CHECK(window_mean(r, 40, &MetricsRecord::loss_C) <= std::log(cfg.queue_capacity + 1.0) + 0.5);

  // Queue refreshed every step: no warm-up, the total falls.
  cfg.queue_capacity = cfg.batch_size;
  const auto q = fifty_steps(cfg, d);
  MESSAGE("queue " << cfg.batch_size << ": total " << window_mean(q, 0, &MetricsRecord::total) << " -> "
                   << window_mean(q, 40, &MetricsRecord::total));
  CHECK(window_mean(q, 40, &MetricsRecord::total) < window_mean(q, 0, &MetricsRecord::total));
}
