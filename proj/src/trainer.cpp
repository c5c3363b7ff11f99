#include "synpair/trainer.hpp"

#include "synpair/saliency.hpp"

#include "json.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <type_traits>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace synpair {

namespace {

constexpr char kMagic[8] = {'S', 'Y', 'N', 'P', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kFormatVersion = 1;

const char* denominator_name(Denominator d) { return d == Denominator::WithPositive ? "with_positive" : "negatives_only"; }

void check_finite(const ModelGrads& g) {
  if (!std::isfinite(g.squared_norm())) throw NumericError("non-finite gradient in training step");
}

}  // namespace

void TrainConfig::validate() const {
  arch.validate();
  augment.validate();
  noise.validate();
  weights.validate();
  temperature.validate();
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2 (the in-batch loss needs negatives)");
  if (queue_capacity < 1 || bank_capacity < 2) throw ConfigError("queue_capacity must be >= 1 and bank_capacity >= 2");
  if (batch_size > std::min(queue_capacity, bank_capacity))
    throw ConfigError("batch_size " + std::to_string(batch_size) + " exceeds min(queue_capacity, bank_capacity) = " +
                      std::to_string(std::min(queue_capacity, bank_capacity)));
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0,1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(key_momentum >= 0.0 && key_momentum <= 1.0)) throw ConfigError("key_momentum must lie in [0,1]");
  if (decoder_epochs < 0) throw ConfigError("decoder_epochs must be >= 0");
  if (!(decoder_lr > 0.0)) throw ConfigError("decoder_lr must be positive");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
}

std::string describe(const TrainConfig& c) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "image_size=" << c.arch.image_size << "\nimage_channels=" << c.arch.image_channels << "\nencoder_channels=";
  for (int ch : c.arch.encoder_channels) os << ch << ',';
  os << "\nprojector_layers=" << c.arch.projector_layers << "\nprojector_hidden=" << c.arch.projector_hidden
     << "\nprojection_dim=" << c.arch.projection_dim;
  const auto& a = c.augment;
  os << "\naug=" << a.crop << ',' << a.crop_scale_min << ',' << a.crop_scale_max << ',' << a.crop_ratio_min << ','
     << a.crop_ratio_max << ',' << a.flip << ',' << a.flip_p << ',' << a.jitter << ',' << a.jitter_p << ','
     << a.brightness << ',' << a.contrast << ',' << a.saturation << ',' << a.hue << ',' << a.grayscale << ','
     << a.grayscale_p << ',' << a.blur << ',' << a.blur_p << ',' << a.blur_sigma_min << ',' << a.blur_sigma_max << ','
     << a.blur_kernel;
  os << "\nepochs=" << c.epochs << "\nbatch_size=" << c.batch_size << "\nlr=" << c.lr << "\nmomentum=" << c.momentum
     << "\nweight_decay=" << c.weight_decay << "\nkey_momentum=" << c.key_momentum
     << "\nqueue_capacity=" << c.queue_capacity << "\nbank_capacity=" << c.bank_capacity
     << "\ndecoder_epochs=" << c.decoder_epochs << "\ndecoder_lr=" << c.decoder_lr << "\neps_g=" << c.noise.eps_g
     << "\neps_var=" << c.noise.eps_var << "\nkappa=" << c.noise.kappa << "\nnoise_mode=" << to_string(c.noise.mode)
     << "\nalpha=" << c.weights.alpha << "\nnu=" << c.weights.nu << "\ntau=" << c.temperature.tau
     << "\ndenominator=" << denominator_name(c.denominator) << "\nseed=" << c.seed << '\n';
  return os.str();
}

std::string config_hash(const TrainConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : describe(cfg)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

void KeyQueue::push(const MatrixXf& keys) {
  for (Eigen::Index i = 0; i < keys.rows(); ++i)
    if (std::abs(keys.row(i).norm() - 1.0f) > 1e-3f) throw std::invalid_argument("key queue: keys must be unit-norm");
  RingStore<float>::push(keys);
}

std::string to_json_line(const MetricsRecord& r) {
  json j;
  j["step"] = r.step;
  j["epoch"] = r.epoch;
  j["loss_C"] = r.loss_C;
  j["loss_R"] = r.loss_R;
  j["loss_Cp"] = r.loss_Cp;
  j["total"] = r.total;
  j["learning_rate"] = r.learning_rate;
  j["wall_time"] = r.wall_time;
  return j.dump();
}

MetricsRecord parse_metrics_line(const std::string& line) {
  const json j = json::parse(line);
  MetricsRecord r;
  r.step = j.at("step").get<long>();
  r.epoch = j.at("epoch").get<int>();
  r.loss_C = j.at("loss_C").get<double>();
  r.loss_R = j.at("loss_R").get<double>();
  r.loss_Cp = j.at("loss_Cp").get<double>();
  r.total = j.at("total").get<double>();
  r.learning_rate = j.at("learning_rate").get<double>();
  r.wall_time = j.at("wall_time").get<double>();
  return r;
}

std::vector<MetricsRecord> read_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read metrics: " + path);
  std::vector<MetricsRecord> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(parse_metrics_line(line));
  return out;
}

void ModelGrads::add_scaled(const ModelGrads& o, double a) {
  const auto s = static_cast<float>(a);
  for (int i = 0; i < encoder.size(); ++i) encoder[i] += s * o.encoder[i];
  for (int i = 0; i < projector.size(); ++i) projector[i] += s * o.projector[i];
  for (int i = 0; i < decoder.size(); ++i) decoder[i] += s * o.decoder[i];
}

double ModelGrads::squared_norm() const {
  return static_cast<double>(encoder.squared_norm()) + projector.squared_norm() + decoder.squared_norm();
}

TrainState TrainState::create(const TrainConfig& cfg) {
  cfg.validate();
  TrainState s;
  s.model = Model<float>::create(cfg.arch, cfg.seed);
  s.queue = KeyQueue(cfg.queue_capacity, cfg.arch.projection_dim);
  s.bank = FeatureBank(cfg.bank_capacity, cfg.arch.feature_dim());
  Rng qrng = make_rng(cfg.seed, Stream::Queue);
  MatrixXf init(cfg.queue_capacity, cfg.arch.projection_dim);
  for (Eigen::Index i = 0; i < init.size(); ++i) init.data()[i] = static_cast<float>(standard_normal(qrng));
  s.queue.push(normalize_rows<float>(init));
  s.noise_rng = make_rng(cfg.seed, Stream::Noise);
  auto zeros = [](const ParamSet<float>& set) {
    std::vector<MatrixXf> v;
    for (const auto& p : set) v.push_back(MatrixXf::Zero(p.value.rows(), p.value.cols()));
    return v;
  };
  s.opt_encoder.velocity = zeros(s.model.encoder_q);
  s.opt_projector.velocity = zeros(s.model.projector_q);
  s.opt_decoder.velocity = zeros(s.model.decoder);
  return s;
}

StepBatch make_step_batch(const Dataset& data, const std::vector<int>& idx, const AugmentConfig& aug,
                          std::uint64_t seed, int epoch) {
  std::vector<ImageArray> xs, v1, v2;
  for (int i : idx) {
    const auto views = make_views(data.images.at(i), aug,
                                  derive_seed(seed, {static_cast<std::uint64_t>(Stream::Augment),
                                                     static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(i)}));
    xs.push_back(views.source);
    v1.push_back(views.view1);
    v2.push_back(views.view2);
  }
  return {stack(xs), stack(v1), stack(v2)};
}

MetricsRecord train_step(TrainState& st, const TrainConfig& cfg, const StepBatch& b, double lr, StepProbe* probe) {
  auto& m = st.model;
  const auto& nets = *m.nets;
  const int batch = b.x.size();
  const auto opt = cfg.contrastive();
  const double alpha = cfg.weights.alpha, nu = cfg.weights.nu;
  ModelGrads g_c(m), g_r(m), g_cp(m);

  MetricsRecord rec;
  rec.step = st.step;
  rec.epoch = st.epoch;
  rec.learning_rate = lr;
  if (probe) {
    probe->queue_fill_before = st.queue.fill();
    probe->bank_fill_before = st.bank.fill();
  }

  // (1) key networks follow the query networks
  nn::momentum_update(m.encoder_k, m.encoder_q, cfg.key_momentum);
  nn::momentum_update(m.projector_k, m.projector_q, cfg.key_momentum);

  // (2) queue contrastive loss; keys carry no gradient
  EncoderTrace<float> key_trace;
  const Batch<float> key_feats = encode(nets, m.encoder_k, b.x2, Mode::Train, &key_trace);
  commit_encoder_stats(nets, m.encoder_k, key_trace);
  const MatrixXf keys = project(nets, m.projector_k, key_feats, true).values;

  EncoderTrace<float> q_trace;
  const Batch<float> q_feats = encode(nets, m.encoder_q, b.x1, Mode::Train, &q_trace);
  const auto q = project(nets, m.projector_q, q_feats, true);
  const auto lc = info_nce_queue<float>(q.values, keys, st.queue.rows(), opt);
  rec.loss_C = lc.value;
  encode_backward(nets, m.encoder_q, q_trace, project_backward(nets, m.projector_q, q, lc.grad, &g_c.projector),
                  &g_c.encoder, false);
  commit_encoder_stats(nets, m.encoder_q, q_trace);
  st.queue.push(keys);

  // (3) reconstruction through decoder and encoder
  if (alpha > 0 || nu > 0) {
    EncoderTrace<float> x_trace;
    nn::Trace<float> dec_trace;
    const Batch<float> v = encode(nets, m.encoder_q, b.x, Mode::Train, &x_trace);
    const Batch<float> x_hat = decode(nets, m.decoder, v, Mode::Train, &dec_trace);
    const auto lr_term = recon_loss<float>(b.x.data, x_hat.data);
    rec.loss_R = lr_term.value;
    if (alpha > 0 || probe) {
      const Batch<float> dv =
          decode_backward(nets, m.decoder, dec_trace, Batch<float>(x_hat.shape, lr_term.grad), &g_r.decoder, true);
      encode_backward(nets, m.encoder_q, x_trace, dv, &g_r.encoder, false);
    }
    commit_encoder_stats(nets, m.encoder_q, x_trace);
    nets.decoder().commit(m.decoder, dec_trace);

    // (4) bank, saliency, dispersion, perturbation
    if (nu > 0) {
      st.bank.push(v.data);
      Eigen::MatrixXd eta_bar;
      if (needs_saliency(cfg.noise.mode)) {
        const Batch<float> v2 = encode(nets, m.encoder_q, b.x2, Mode::Train);
        eta_bar = normalize_scores(feature_saliency(nets, m.projector_q, v, v2, opt).cast<double>());
      }
      std::optional<DispersionScores> disp;
      if (needs_dispersion(cfg.noise.mode) && st.bank.fill() >= 2 * batch)
        disp = dispersion_scores(st.bank, cfg.noise.kappa);
      const MatrixXf vp =
          perturb_batch(v.data.cast<double>(), eta_bar, disp ? &*disp : nullptr, cfg.noise, st.noise_rng).cast<float>();
      const Batch<float> x_hat_p = decode(nets, m.decoder, as_features<float>(vp), Mode::Train);

      // (5) generated pairs, detached from decoder and perturbation
      EncoderTrace<float> r_trace;
      const Batch<float> r_feats = encode(nets, m.encoder_q, concat_rows(x_hat, x_hat_p), Mode::Train, &r_trace);
      const auto z = project(nets, m.projector_q, r_feats, true);
      const auto lcp = info_nce_batch<float>(z.values, {}, opt);
      rec.loss_Cp = lcp.value;
      encode_backward(nets, m.encoder_q, r_trace, project_backward(nets, m.projector_q, z, lcp.grad, &g_cp.projector),
                      &g_cp.encoder, false);
      commit_encoder_stats(nets, m.encoder_q, r_trace);

      if (probe) {
        probe->eta_bar = eta_bar;
        probe->dispersion = disp;
        probe->features = v.data;
        probe->perturbed = vp;
      }
    }
  }

  // (6) weighted sum and one optimizer step
  rec.total = total_loss(rec.loss_C, rec.loss_R, rec.loss_Cp, cfg.weights);
  ModelGrads g = g_c;
  if (alpha > 0) g.add_scaled(g_r, alpha);
  if (nu > 0) g.add_scaled(g_cp, nu);
  check_finite(g);
  st.opt_encoder.momentum = st.opt_projector.momentum = st.opt_decoder.momentum = cfg.momentum;
  st.opt_encoder.weight_decay = st.opt_projector.weight_decay = st.opt_decoder.weight_decay = cfg.weight_decay;
  st.opt_encoder.step(m.encoder_q, g.encoder, lr);
  st.opt_projector.step(m.projector_q, g.projector, lr);
  if (alpha > 0 || nu > 0) st.opt_decoder.step(m.decoder, g.decoder, lr);
  if (!m.encoder_q.all_finite() || !m.decoder.all_finite()) throw NumericError("non-finite parameters after update");
  ++st.step;

  if (probe) {
    probe->grad_C = std::move(g_c);
    probe->grad_R = std::move(g_r);
    probe->grad_Cp = std::move(g_cp);
    probe->queue_fill_after = st.queue.fill();
    probe->bank_fill_after = st.bank.fill();
  }
  return rec;
}

std::vector<double> pretrain_decoder(TrainState& st, const TrainConfig& cfg, const Dataset& data, int epochs) {
  auto& m = st.model;
  const auto& nets = *m.nets;
  const auto train_idx = data.indices(Split::Train);
  const bool drop_last = static_cast<int>(train_idx.size()) >= cfg.batch_size;
  Adam<float> adam;
  std::vector<double> history;
  for (int e = 0; e < epochs; ++e) {
    const auto batches = shuffled_batches(
        train_idx, cfg.batch_size,
        derive_seed(cfg.seed, {static_cast<std::uint64_t>(Stream::Shuffle), 0xdecULL, static_cast<std::uint64_t>(e)}),
        drop_last);
    double sum = 0;
    for (const auto& idx : batches) {
      const Batch<float> x = stack(data, idx);
      const Batch<float> v = encode(nets, m.encoder_q, x, Mode::Train);  // frozen: no trace, no commit
      nn::Trace<float> trace;
      const Batch<float> x_hat = decode(nets, m.decoder, v, Mode::Train, &trace);
      const auto loss = recon_loss<float>(x.data, x_hat.data);
      if (!std::isfinite(loss.value))
        throw NumericError("decoder pre-training diverged at epoch " + std::to_string(e) + " (non-finite loss)");
      GradSet<float> grads(m.decoder);
      decode_backward(nets, m.decoder, trace, Batch<float>(x_hat.shape, loss.grad), &grads, false);
      adam.step(m.decoder, grads, cfg.decoder_lr);
      nets.decoder().commit(m.decoder, trace);
      sum += loss.value;
    }
    history.push_back(batches.empty() ? 0.0 : sum / static_cast<double>(batches.size()));
  }
  if (epochs > 0) st.decoder_pretrained = true;
  return history;
}

double reconstruction_mse(const TrainState& st, const Dataset& data, Split split, int batch_size) {
  const auto& m = st.model;
  const auto idx = data.indices(split);
  double sum = 0;
  long count = 0;
  for (std::size_t i = 0; i < idx.size(); i += batch_size) {
    const std::vector<int> chunk(idx.begin() + static_cast<long>(i),
                                 idx.begin() + static_cast<long>(std::min(idx.size(), i + batch_size)));
    const Batch<float> x = stack(data, chunk);
    const Batch<float> x_hat = decode(*m.nets, m.decoder, encode(*m.nets, m.encoder_q, x, Mode::Train), Mode::Train);
    sum += (x.data - x_hat.data).cast<double>().squaredNorm();
    count += x.data.size();
  }
  return sum / static_cast<double>(count);
}

std::vector<MetricsRecord> train(TrainState& st, const TrainConfig& cfg, const Dataset& data, const TrainOptions& opts) {
  cfg.validate();
  const bool uses_decoder = cfg.weights.alpha > 0 || cfg.weights.nu > 0;
  if (uses_decoder && !st.decoder_pretrained && !cfg.allow_untrained_decoder)
    throw ConfigError("decoder has not been pre-trained; run pretrain-decoder first or set allow_untrained_decoder = true");
  if (data.image_size != cfg.arch.image_size)
    throw DataError("dataset image size " + std::to_string(data.image_size) + " != configured " +
                    std::to_string(cfg.arch.image_size));

  std::ofstream metrics;
  std::string ckpt;
  if (!opts.out_dir.empty()) {
    fs::create_directories(opts.out_dir);
    const auto path = (fs::path(opts.out_dir) / "metrics.jsonl").string();
    metrics.open(path, st.step == 0 ? std::ios::trunc : std::ios::app);
    if (!metrics) throw IoError("cannot open metrics file: " + path);
    ckpt = (fs::path(opts.out_dir) / "checkpoint.bin").string();
  }

  const auto train_idx = data.indices(Split::Train);
  if (static_cast<int>(train_idx.size()) < cfg.batch_size)
    throw DataError("train split has " + std::to_string(train_idx.size()) + " items, fewer than batch_size");
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<MetricsRecord> out;
  while (st.epoch < cfg.epochs) {
    if (opts.stop_after_epoch >= 0 && st.epoch >= opts.stop_after_epoch) break;
    const double lr = cosine_lr(cfg.lr, st.epoch, cfg.epochs);
    const auto batches = shuffled_batches(
        train_idx, cfg.batch_size,
        derive_seed(cfg.seed, {static_cast<std::uint64_t>(Stream::Shuffle), static_cast<std::uint64_t>(st.epoch)}),
        true);
    for (const auto& idx : batches) {
      const StepBatch b = make_step_batch(data, idx, cfg.augment, cfg.seed, st.epoch);
      MetricsRecord rec = train_step(st, cfg, b, lr);
      rec.wall_time =
          cfg.deterministic ? 0.0 : std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (metrics.is_open()) {
        metrics << to_json_line(rec) << '\n';
        metrics.flush();
      }
      if (opts.on_record) opts.on_record(rec);
      out.push_back(rec);
    }
    ++st.epoch;
    const bool last = st.epoch == cfg.epochs ||
                      (opts.stop_after_epoch >= 0 && st.epoch >= opts.stop_after_epoch);
    if (!ckpt.empty() && (last || (cfg.checkpoint_every > 0 && st.epoch % cfg.checkpoint_every == 0)))
      save_checkpoint(st, cfg, ckpt);
  }
  return out;
}

// ---- checkpoint archive ----

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw IoError("checkpoint truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

struct Entry {
  std::string name;
  const MatrixXf* value;
};

void put_array(std::ostream& os, const std::string& name, const MatrixXf& a) {
  put_u32(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u32(os, static_cast<std::uint32_t>(a.rows()));
  put_u32(os, static_cast<std::uint32_t>(a.cols()));
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, a.data() + i, 4);
    put_u32(os, bits);
  }
}

template <typename State, typename Ptr = std::conditional_t<std::is_const_v<State>, const MatrixXf*, MatrixXf*>>
std::vector<std::pair<std::string, Ptr>> named_arrays(State& st) {
  std::vector<std::pair<std::string, Ptr>> out;
  auto add_set = [&](const std::string& prefix, auto& set) {
    for (auto& p : set) out.emplace_back(prefix + "/" + p.name, &p.value);
  };
  add_set("encoder_q", st.model.encoder_q);
  add_set("projector_q", st.model.projector_q);
  add_set("encoder_k", st.model.encoder_k);
  add_set("projector_k", st.model.projector_k);
  add_set("decoder", st.model.decoder);
  auto add_opt = [&](const std::string& prefix, auto& opt, const auto& set) {
    if (opt.velocity.size() != static_cast<std::size_t>(set.size()))
      throw std::logic_error("optimizer state not sized for " + prefix);
    for (int i = 0; i < set.size(); ++i) out.emplace_back("opt/" + prefix + "/" + set[i].name, &opt.velocity[i]);
  };
  add_opt("encoder_q", st.opt_encoder, st.model.encoder_q);
  add_opt("projector_q", st.opt_projector, st.model.projector_q);
  add_opt("decoder", st.opt_decoder, st.model.decoder);
  return out;
}

struct Archive {
  json meta;
  std::vector<std::pair<std::string, MatrixXf>> arrays;
};

Archive read_archive(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw IoError("not a checkpoint archive: " + path);
  const std::uint32_t version = get_u32(in);
  if (version != kFormatVersion) throw IoError("unsupported checkpoint format version " + std::to_string(version));
  Archive ar;
  std::string meta(get_u32(in), '\0');
  if (!in.read(meta.data(), static_cast<std::streamsize>(meta.size()))) throw IoError("checkpoint truncated: " + path);
  ar.meta = json::parse(meta);
  const std::uint32_t count = get_u32(in);
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name(get_u32(in), '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(name.size()))) throw IoError("checkpoint truncated: " + path);
    const std::uint32_t rows = get_u32(in), cols = get_u32(in);
    MatrixXf a(rows, cols);
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      const std::uint32_t bits = get_u32(in);
      std::memcpy(a.data() + i, &bits, 4);
    }
    ar.arrays.emplace_back(std::move(name), std::move(a));
  }
  return ar;
}

}  // namespace

void save_checkpoint(const TrainState& st, const TrainConfig& cfg, const std::string& path) {
  json meta;
  meta["format_version"] = kFormatVersion;
  meta["step"] = st.step;
  meta["epoch"] = st.epoch;
  meta["config_hash"] = config_hash(cfg);
  meta["decoder_pretrained"] = st.decoder_pretrained;
  meta["noise_rng"] = rng_state(st.noise_rng);
  meta["queue_cursor"] = st.queue.cursor();
  meta["queue_fill"] = st.queue.fill();
  meta["bank_cursor"] = st.bank.cursor();
  meta["bank_fill"] = st.bank.fill();
  meta["config"] = describe(cfg);
  const std::string meta_text = meta.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint: " + tmp);
    out.write(kMagic, 8);
    put_u32(out, kFormatVersion);
    put_u32(out, static_cast<std::uint32_t>(meta_text.size()));
    out.write(meta_text.data(), static_cast<std::streamsize>(meta_text.size()));
    auto arrays = named_arrays(st);
    put_u32(out, static_cast<std::uint32_t>(arrays.size() + 2));
    for (const auto& [name, value] : arrays) put_array(out, name, *value);
    put_array(out, "queue", st.queue.storage());
    put_array(out, "bank", st.bank.storage());
    if (!out) throw IoError("failed writing checkpoint: " + tmp);
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path + ": " + ec.message());
}

TrainState load_checkpoint(const std::string& path, const TrainConfig& cfg, bool check_hash) {
  Archive ar = read_archive(path);
  if (check_hash && ar.meta.at("config_hash").get<std::string>() != config_hash(cfg))
    throw ConfigError("checkpoint " + path + " was written with a different configuration (hash " +
                      ar.meta.at("config_hash").get<std::string>() + ", expected " + config_hash(cfg) + ")");
  TrainState st = TrainState::create(cfg);
  auto arrays = named_arrays(st);
  std::map<std::string, MatrixXf*> slots(arrays.begin(), arrays.end());
  MatrixXf queue, bank;
  slots["queue"] = &queue;
  slots["bank"] = &bank;
  std::size_t seen = 0;
  for (auto& [name, value] : ar.arrays) {
    auto it = slots.find(name);
    if (it == slots.end()) throw IoError("checkpoint has unexpected array '" + name + "'");
    MatrixXf* dst = it->second;
    if (dst != &queue && dst != &bank && (dst->rows() != value.rows() || dst->cols() != value.cols()))
      throw IoError("checkpoint array '" + name + "' has shape " + std::to_string(value.rows()) + "x" +
                    std::to_string(value.cols()) + ", model expects " + std::to_string(dst->rows()) + "x" +
                    std::to_string(dst->cols()));
    *dst = std::move(value);
    ++seen;
  }
  if (seen != slots.size()) throw IoError("checkpoint " + path + " is missing arrays");
  if (queue.cols() != cfg.arch.projection_dim || bank.cols() != cfg.arch.feature_dim())
    throw IoError("checkpoint queue/bank widths do not match the architecture");
  st.queue.restore(std::move(queue), ar.meta.at("queue_cursor").get<int>(), ar.meta.at("queue_fill").get<int>());
  st.bank.restore(std::move(bank), ar.meta.at("bank_cursor").get<int>(), ar.meta.at("bank_fill").get<int>());
  st.step = ar.meta.at("step").get<long>();
  st.epoch = ar.meta.at("epoch").get<int>();
  st.decoder_pretrained = ar.meta.at("decoder_pretrained").get<bool>();
  restore_rng(st.noise_rng, ar.meta.at("noise_rng").get<std::string>());
  return st;
}

std::string checkpoint_metadata(const std::string& path) { return read_archive(path).meta.dump(2); }

}  // namespace synpair
