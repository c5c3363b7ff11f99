#include "synpair/cli.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace synpair {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& key, const std::string& s) {
  double v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw ConfigError("key '" + key + "': expected a number, got '" + s + "'");
  return v;
}

long long parse_int(const std::string& key, const std::string& s) {
  long long v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw ConfigError("key '" + key + "': expected an integer, got '" + s + "'");
  return v;
}

std::uint64_t parse_u64(const std::string& key, const std::string& s) {
  std::uint64_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + s + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError("key '" + key + "': expected true or false, got '" + s + "'");
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  return out;
}

struct Key {
  std::string name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

// Field accessors are expressed as lambdas returning a reference.
template <typename F>
Key real(std::string name, F field) {
  return {name, [field](const RunConfig& c) { return fmt(field(const_cast<RunConfig&>(c))); },
          [field, name](RunConfig& c, const std::string& v) { field(c) = parse_double(name, v); }};
}

template <typename F>
Key integer(std::string name, F field) {
  return {name, [field](const RunConfig& c) { return std::to_string(field(const_cast<RunConfig&>(c))); },
          [field, name](RunConfig& c, const std::string& v) {
            field(c) = static_cast<std::remove_reference_t<decltype(field(c))>>(parse_int(name, v));
          }};
}

template <typename F>
Key unsigned64(std::string name, F field) {
  return {name, [field](const RunConfig& c) { return std::to_string(field(const_cast<RunConfig&>(c))); },
          [field, name](RunConfig& c, const std::string& v) { field(c) = parse_u64(name, v); }};
}

template <typename F>
Key boolean(std::string name, F field) {
  return {name, [field](const RunConfig& c) { return std::string(field(const_cast<RunConfig&>(c)) ? "true" : "false"); },
          [field, name](RunConfig& c, const std::string& v) { field(c) = parse_bool(name, v); }};
}

template <typename F>
Key text(std::string name, F field) {
  return {name, [field](const RunConfig& c) { return field(const_cast<RunConfig&>(c)); },
          [field](RunConfig& c, const std::string& v) { field(c) = v; }};
}

#define FIELD(expr) [](RunConfig& c) -> auto& { return c.expr; }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = [] {
    std::vector<Key> k;
    // dataset
    k.push_back(integer("num_classes", FIELD(data.num_classes)));
    k.push_back(integer("per_class", FIELD(data.per_class)));
    k.push_back({"image_size", [](const RunConfig& c) { return std::to_string(c.data.image_size); },
                 [](RunConfig& c, const std::string& v) {
                   c.data.image_size = c.train.arch.image_size = static_cast<int>(parse_int("image_size", v));
                 }});
    k.push_back(real("subtlety", FIELD(data.subtlety)));
    k.push_back(unsigned64("data_seed", FIELD(data.seed)));
    k.push_back(real("train_fraction", FIELD(data.train_fraction)));
    k.push_back(text("data_dir", FIELD(data_dir)));
    k.push_back(text("manifest", FIELD(manifest)));
    // architecture
    k.push_back({"encoder_channels",
                 [](const RunConfig& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.train.arch.encoder_channels.size(); ++i)
                     s += (i ? "," : "") + std::to_string(c.train.arch.encoder_channels[i]);
                   return s;
                 },
                 [](RunConfig& c, const std::string& v) {
                   std::vector<int> ch;
                   for (const auto& part : split(v, ',')) ch.push_back(static_cast<int>(parse_int("encoder_channels", part)));
                   c.train.arch.encoder_channels = ch;
                 }});
    k.push_back(integer("projector_layers", FIELD(train.arch.projector_layers)));
    k.push_back(integer("projector_hidden", FIELD(train.arch.projector_hidden)));
    k.push_back(integer("projection_dim", FIELD(train.arch.projection_dim)));
    // augmentation
    k.push_back(boolean("aug_crop", FIELD(train.augment.crop)));
    k.push_back(real("aug_crop_scale_min", FIELD(train.augment.crop_scale_min)));
    k.push_back(real("aug_crop_scale_max", FIELD(train.augment.crop_scale_max)));
    k.push_back(real("aug_crop_ratio_min", FIELD(train.augment.crop_ratio_min)));
    k.push_back(real("aug_crop_ratio_max", FIELD(train.augment.crop_ratio_max)));
    k.push_back(boolean("aug_flip", FIELD(train.augment.flip)));
    k.push_back(real("aug_flip_p", FIELD(train.augment.flip_p)));
    k.push_back(boolean("aug_jitter", FIELD(train.augment.jitter)));
    k.push_back(real("aug_jitter_p", FIELD(train.augment.jitter_p)));
    k.push_back(real("aug_brightness", FIELD(train.augment.brightness)));
    k.push_back(real("aug_contrast", FIELD(train.augment.contrast)));
    k.push_back(real("aug_saturation", FIELD(train.augment.saturation)));
    k.push_back(real("aug_hue", FIELD(train.augment.hue)));
    k.push_back(boolean("aug_grayscale", FIELD(train.augment.grayscale)));
    k.push_back(real("aug_grayscale_p", FIELD(train.augment.grayscale_p)));
    k.push_back(boolean("aug_blur", FIELD(train.augment.blur)));
    k.push_back(real("aug_blur_p", FIELD(train.augment.blur_p)));
    k.push_back(real("aug_blur_sigma_min", FIELD(train.augment.blur_sigma_min)));
    k.push_back(real("aug_blur_sigma_max", FIELD(train.augment.blur_sigma_max)));
    k.push_back(integer("aug_blur_kernel", FIELD(train.augment.blur_kernel)));
    // optimisation
    k.push_back(integer("epochs", FIELD(train.epochs)));
    k.push_back(integer("batch_size", FIELD(train.batch_size)));
    k.push_back(real("lr", FIELD(train.lr)));
    k.push_back(real("momentum", FIELD(train.momentum)));
    k.push_back(real("weight_decay", FIELD(train.weight_decay)));
    k.push_back(real("key_momentum", FIELD(train.key_momentum)));
    k.push_back(integer("queue_capacity", FIELD(train.queue_capacity)));
    k.push_back(integer("bank_capacity", FIELD(train.bank_capacity)));
    k.push_back(integer("decoder_epochs", FIELD(train.decoder_epochs)));
    k.push_back(real("decoder_lr", FIELD(train.decoder_lr)));
    // method
    k.push_back(real("eps_g", FIELD(train.noise.eps_g)));
    k.push_back(real("eps_var", FIELD(train.noise.eps_var)));
    k.push_back(real("kappa", FIELD(train.noise.kappa)));
    k.push_back({"noise_mode", [](const RunConfig& c) { return to_string(c.train.noise.mode); },
                 [](RunConfig& c, const std::string& v) { c.train.noise.mode = parse_noise_mode(v); }});
    k.push_back(real("alpha", FIELD(train.weights.alpha)));
    k.push_back(real("nu", FIELD(train.weights.nu)));
    k.push_back(real("tau", FIELD(train.temperature.tau)));
    k.push_back({"denominator",
                 [](const RunConfig& c) {
                   return std::string(c.train.denominator == Denominator::WithPositive ? "with_positive"
                                                                                      : "negatives_only");
                 },
                 [](RunConfig& c, const std::string& v) {
                   if (v == "with_positive") c.train.denominator = Denominator::WithPositive;
                   else if (v == "negatives_only") c.train.denominator = Denominator::NegativesOnly;
                   else throw ConfigError("key 'denominator': expected with_positive or negatives_only, got '" + v + "'");
                 }});
    // run control
    k.push_back(unsigned64("seed", FIELD(train.seed)));
    k.push_back(boolean("deterministic", FIELD(train.deterministic)));
    k.push_back(integer("checkpoint_every", FIELD(train.checkpoint_every)));
    k.push_back(boolean("allow_untrained_decoder", FIELD(train.allow_untrained_decoder)));
    k.push_back(text("checkpoint", FIELD(checkpoint)));
    k.push_back(text("decoder_checkpoint", FIELD(decoder_checkpoint)));
    k.push_back(boolean("resume", FIELD(resume)));
    // evaluation
    k.push_back(real("probe_lr", FIELD(probe.lr)));
    k.push_back(real("probe_momentum", FIELD(probe.momentum)));
    k.push_back(real("probe_weight_decay", FIELD(probe.weight_decay)));
    k.push_back(integer("probe_epochs", FIELD(probe.epochs)));
    k.push_back(integer("probe_batch_size", FIELD(probe.batch_size)));
    k.push_back(boolean("probe_normalize", FIELD(probe.normalize_features)));
    k.push_back({"label_fractions",
                 [](const RunConfig& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.label_fractions.size(); ++i) s += (i ? "," : "") + fmt(c.label_fractions[i]);
                   return s;
                 },
                 [](RunConfig& c, const std::string& v) {
                   std::vector<double> f;
                   for (const auto& part : split(v, ',')) f.push_back(parse_double("label_fractions", part));
                   c.label_fractions = f;
                 }});
    k.push_back(integer("export_count", FIELD(export_count)));
    k.push_back(unsigned64("export_seed", FIELD(export_seed)));
    // sweeps
    k.push_back(text("sweep", FIELD(sweep)));
    k.push_back(integer("sweep_replicates", FIELD(sweep_replicates)));
    return k;
  }();
  return table;
}

#undef FIELD

const Key& find_key(const std::string& name) {
  for (const auto& k : keys())
    if (k.name == name) return k;
  throw ConfigError("unknown config key '" + name + "'");
}

fs::path under(const fs::path& root, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : root / path;
}

struct Paths {
  fs::path out, data_dir, manifest, checkpoint, decoder;
};

Paths resolve(const RunConfig& cfg, const fs::path& out) {
  Paths p;
  p.out = out;
  p.data_dir = under(out, cfg.data_dir);
  p.manifest = cfg.manifest.empty() ? p.data_dir / "manifest.csv" : under(out, cfg.manifest);
  p.checkpoint = cfg.checkpoint.empty() ? out / "checkpoint.bin" : under(out, cfg.checkpoint);
  p.decoder = cfg.decoder_checkpoint.empty() ? out / "decoder.bin" : under(out, cfg.decoder_checkpoint);
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

Dataset load_for(const RunConfig& cfg, const Paths& p) {
  if (!fs::exists(p.manifest)) throw DataError("manifest not found: " + p.manifest.string());
  return load_dataset(p.manifest.string(), cfg.train.arch.image_size);
}

std::vector<ImageArray> export_inputs(const Dataset& data, int count) {
  const auto te = data.indices(Split::Test);
  if (count < 1) throw ConfigError("export_count must be >= 1");
  std::vector<ImageArray> imgs;
  for (int i = 0; i < count; ++i) imgs.push_back(data.images[te[i % te.size()]]);
  return imgs;
}

// Starting state for training: resume, else a pre-trained decoder, else fresh.
TrainState initial_state(const RunConfig& cfg, const Paths& p, const fs::path& ckpt, std::ostream& log) {
  if (cfg.resume && fs::exists(ckpt)) {
    TrainState st = load_checkpoint(ckpt.string(), cfg.train, true);
    log << "resuming from " << ckpt.string() << " at epoch " << st.epoch << " step " << st.step << '\n';
    return st;
  }
  if (fs::exists(p.decoder)) {
    TrainState st = load_checkpoint(p.decoder.string(), cfg.train, false);
    if (st.step != 0) throw ConfigError("decoder checkpoint " + p.decoder.string() + " is not a fresh pre-training state");
    log << "using pre-trained decoder " << p.decoder.string() << '\n';
    return st;
  }
  return TrainState::create(cfg.train);
}

json eval_json(const Model<float>& model, const Dataset& data, const RunConfig& cfg) {
  json j;
  j["linear_eval"] = json::array();
  for (double f : cfg.label_fractions) {
    const auto r = linear_eval(model, data, f, cfg.train.seed, cfg.probe);
    j["linear_eval"].push_back({{"label_fraction", f}, {"top1", r.top1}, {"seed", r.seed},
                                {"labeled_per_class", r.labeled_per_class}});
  }
  const auto rr = retrieval_eval(model, data);
  j["retrieval"] = {{"rank1", rr.rank1}, {"rank5", rr.rank5}, {"mAP", rr.mAP}, {"queries", rr.queries},
                    {"excluded", rr.excluded}};
  return j;
}

int cmd_gen_data(const RunConfig& cfg, const Paths& p, std::ostream& log) {
  const Manifest m = generate_dataset(cfg.data, p.data_dir.string());
  log << "wrote " << m.rows.size() << " images (" << m.count(Split::Train) << " train, " << m.count(Split::Test)
      << " test) to " << p.data_dir.string() << '\n';
  return 0;
}

int cmd_pretrain(const RunConfig& cfg, const Paths& p, std::ostream& log) {
  const Dataset data = load_for(cfg, p);
  TrainState st = TrainState::create(cfg.train);
  const auto hist = pretrain_decoder(st, cfg.train, data, cfg.train.decoder_epochs);
  const double test_mse = reconstruction_mse(st, data, Split::Test);
  save_checkpoint(st, cfg.train, p.decoder.string());
  write_text(p.out / "decoder_pretrain.json",
             json{{"epoch_loss", hist}, {"test_mse", test_mse}, {"epochs", cfg.train.decoder_epochs}}.dump(2) + "\n");
  log << "decoder pre-trained for " << hist.size() << " epochs; held-out MSE " << test_mse << '\n';
  return 0;
}

int cmd_train(const RunConfig& cfg, const Paths& p, std::ostream& log) {
  const Dataset data = load_for(cfg, p);
  const fs::path ckpt = p.out / "checkpoint.bin";
  TrainState st = initial_state(cfg, p, ckpt, log);
  TrainOptions opts;
  opts.out_dir = p.out.string();
  const auto records = train(st, cfg.train, data, opts);
  if (records.empty()) log << "nothing to do: already trained for " << st.epoch << " epochs\n";
  else log << "trained " << records.size() << " steps; final total loss " << records.back().total << '\n';
  if (records.empty() && !fs::exists(ckpt)) save_checkpoint(st, cfg.train, ckpt.string());
  return 0;
}

TrainState load_trained(const RunConfig& cfg, const Paths& p) {
  if (!fs::exists(p.checkpoint)) throw IoError("checkpoint not found: " + p.checkpoint.string());
  return load_checkpoint(p.checkpoint.string(), cfg.train, false);
}

int cmd_linear_eval(const RunConfig& cfg, const Paths& p, std::ostream& log) {
  const Dataset data = load_for(cfg, p);
  const TrainState st = load_trained(cfg, p);
  json j = json::array();
  for (double f : cfg.label_fractions) {
    const auto r = linear_eval(st.model, data, f, cfg.train.seed, cfg.probe);
    j.push_back({{"label_fraction", f}, {"top1", r.top1}, {"seed", r.seed}, {"labeled_per_class", r.labeled_per_class}});
    log << "label fraction " << f << ": top-1 " << r.top1 << "%\n";
  }
  write_text(p.out / "linear_eval.json", j.dump(2) + "\n");
  return 0;
}

int cmd_retrieval(const RunConfig& cfg, const Paths& p, std::ostream& log) {
  const Dataset data = load_for(cfg, p);
  const TrainState st = load_trained(cfg, p);
  const auto r = retrieval_eval(st.model, data);
  write_text(p.out / "retrieval.json", json{{"rank1", r.rank1}, {"rank5", r.rank5}, {"mAP", r.mAP},
                                            {"queries", r.queries}, {"excluded", r.excluded}}
                                           .dump(2) + "\n");
  log << "rank-1 " << r.rank1 << "% rank-5 " << r.rank5 << "% mAP " << r.mAP << "%\n";
  return 0;
}

int cmd_collapse(const RunConfig& cfg, const Paths& p, std::ostream& log) {
  const Dataset data = load_for(cfg, p);
  const TrainState st = load_trained(cfg, p);
  const auto rep = collapse_report(st.model, data);
  rep.write_csv((p.out / "collapse.csv").string());
  write_text(p.out / "collapse_summary.json", rep.summary_json() + "\n");
  log << "lowest dispersion dim " << rep.argmin_dispersion << ", highest " << rep.argmax_dispersion << '\n';
  return 0;
}

int cmd_export_pairs(const RunConfig& cfg, const Paths& p, std::ostream& log) {
  const Dataset data = load_for(cfg, p);
  const TrainState st = load_trained(cfg, p);
  const auto files = export_pairs(st, cfg.train, export_inputs(data, cfg.export_count), cfg.train.noise,
                                  (p.out / "pairs").string(), cfg.export_seed);
  log << "wrote " << files.size() << " pair strips to " << (p.out / "pairs").string() << '\n';
  return 0;
}

int cmd_export_attention(const RunConfig& cfg, const Paths& p, std::ostream& log) {
  const Dataset data = load_for(cfg, p);
  const TrainState st = load_trained(cfg, p);
  const auto files = export_attention(st, cfg.train, export_inputs(data, cfg.export_count),
                                      (p.out / "attention").string(), cfg.export_seed);
  log << "wrote " << files.size() << " attention strips to " << (p.out / "attention").string() << '\n';
  return 0;
}

std::string decoder_cache_key(const TrainConfig& c) {
  std::ostringstream os;
  os << c.seed << '|' << c.batch_size << '|' << fmt(c.decoder_lr) << '|' << c.decoder_epochs << '|' << c.arch.image_size
     << '|' << c.arch.projector_layers << '|' << c.arch.projector_hidden << '|' << c.arch.projection_dim;
  for (int ch : c.arch.encoder_channels) os << ',' << ch;
  return os.str();
}

int cmd_sweep(const RunConfig& cfg, const Paths& p, std::ostream& log) {
  const auto axes = parse_sweep(cfg.sweep);
  if (cfg.sweep_replicates < 1) throw ConfigError("sweep_replicates must be >= 1");
  const Dataset data = load_for(cfg, p);

  std::vector<std::vector<std::pair<std::string, std::string>>> cells = {{}};
  for (const auto& axis : axes) {
    std::vector<std::vector<std::pair<std::string, std::string>>> next;
    for (const auto& cell : cells)
      for (const auto& v : axis.values) {
        auto c = cell;
        c.emplace_back(axis.key, v);
        next.push_back(c);
      }
    cells = next;
  }
  // Validate every cell before any compute.
  for (const auto& cell : cells) {
    RunConfig c = cfg;
    for (const auto& [k, v] : cell) set_config_value(c, k, v);
    c.validate();
  }

  const fs::path root = p.out / "sweep";
  fs::create_directories(root);
  std::map<std::string, fs::path> decoders;
  json summary = json::array();
  for (const auto& cell : cells) {
    std::string name;
    for (const auto& [k, v] : cell) name += (name.empty() ? "" : "_") + k + "=" + v;
    const fs::path dir = root / name;
    fs::create_directories(dir);
    json reps = json::array();
    std::vector<double> top1, rank1;
    for (int r = 0; r < cfg.sweep_replicates; ++r) {
      RunConfig c = cfg;
      c.sweep.clear();
      for (const auto& [k, v] : cell) set_config_value(c, k, v);
      // Replicate seeds are shared by all cells so cells compare matched runs.
      c.train.seed = derive_seed(cfg.train.seed, {0x5eedULL, static_cast<std::uint64_t>(r)});
      const fs::path rdir = dir / ("rep" + std::to_string(r));
      fs::create_directories(rdir);
      write_text(rdir / "config.train.conf", echo_config(c));

      TrainState st;
      const bool uses_decoder = c.train.weights.alpha > 0 || c.train.weights.nu > 0;
      if (cfg.resume && fs::exists(rdir / "checkpoint.bin")) {
        st = load_checkpoint((rdir / "checkpoint.bin").string(), c.train, true);
      } else if (uses_decoder && !c.train.allow_untrained_decoder) {
        const std::string key = decoder_cache_key(c.train);
        if (!decoders.count(key)) {
          TrainState pre = TrainState::create(c.train);
          pretrain_decoder(pre, c.train, data, c.train.decoder_epochs);
          const fs::path path = root / ("decoder_" + std::to_string(decoders.size()) + ".bin");
          save_checkpoint(pre, c.train, path.string());
          decoders[key] = path;
        }
        st = load_checkpoint(decoders[key].string(), c.train, false);
      } else {
        st = TrainState::create(c.train);
      }
      TrainOptions opts;
      opts.out_dir = rdir.string();
      train(st, c.train, data, opts);
      json ev = eval_json(st.model, data, c);
      ev["seed"] = c.train.seed;
      write_text(rdir / "eval.json", ev.dump(2) + "\n");
      collapse_report(st.model, data).write_csv((rdir / "collapse.csv").string());
      top1.push_back(ev["linear_eval"][0]["top1"].get<double>());
      rank1.push_back(ev["retrieval"]["rank1"].get<double>());
      reps.push_back(ev);
    }
    auto mean = [](const std::vector<double>& v) {
      double s = 0;
      for (double x : v) s += x;
      return s / static_cast<double>(v.size());
    };
    json settings = json::object();
    for (const auto& [k, v] : cell) settings[k] = v;
    json row{{"cell", name}, {"settings", settings}, {"label_fraction", cfg.label_fractions.front()},
             {"top1_mean", mean(top1)}, {"rank1_mean", mean(rank1)}, {"top1", top1}, {"rank1", rank1}};
    write_text(dir / "results.json", row.dump(2) + "\n");
    summary.push_back(row);
    log << "cell " << name << ": top-1 " << mean(top1) << "% rank-1 " << mean(rank1) << "%\n";
  }
  write_text(root / "summary.json", summary.dump(2) + "\n");
  return 0;
}

}  // namespace

void RunConfig::validate() const {
  data.validate();
  train.validate();
  if (data.image_size != train.arch.image_size) throw ConfigError("image_size mismatch between dataset and network");
  if (label_fractions.empty()) throw ConfigError("label_fractions must not be empty");
  for (double f : label_fractions)
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("label_fractions entries must lie in (0,1]");
  if (probe.epochs < 1 || probe.batch_size < 1) throw ConfigError("probe_epochs and probe_batch_size must be >= 1");
  if (!(probe.lr > 0.0)) throw ConfigError("probe_lr must be positive");
  if (export_count < 1) throw ConfigError("export_count must be >= 1");
  if (sweep_replicates < 1) throw ConfigError("sweep_replicates must be >= 1");
  if (!sweep.empty()) parse_sweep(sweep);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : keys()) out.push_back(k.name);
  return out;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  find_key(key).set(cfg, value);
}

std::string get_config_value(const RunConfig& cfg, const std::string& key) { return find_key(key).get(cfg); }

RunConfig parse_config(const std::string& text, const RunConfig& base, const std::string& origin) {
  RunConfig cfg = base;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    try {
      set_config_value(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig load_config(const std::string& path, const RunConfig& base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), base, path);
}

std::string echo_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : keys()) out += k.name + " = " + k.get(cfg) + "\n";
  return out;
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + o + "' must have the form key=value");
    set_config_value(cfg, trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
  }
}

std::vector<SweepAxis> parse_sweep(const std::string& spec) {
  std::vector<SweepAxis> axes;
  for (const auto& part : split(spec, ';')) {
    if (part.empty()) continue;
    const auto eq = part.find('=');
    if (eq == std::string::npos) throw ConfigError("sweep axis '" + part + "' must have the form key=v1,v2,...");
    SweepAxis a{trim(part.substr(0, eq)), split(part.substr(eq + 1), ',')};
    find_key(a.key);
    if (a.key == "sweep" || a.key == "sweep_replicates") throw ConfigError("cannot sweep over '" + a.key + "'");
    if (a.values.empty()) throw ConfigError("sweep axis '" + a.key + "' has no values");
    axes.push_back(a);
  }
  if (axes.empty()) throw ConfigError("sweep needs at least one axis (set sweep = key=v1,v2,...)");
  return axes;
}

int run_command(const std::string& command, const std::string& config_path, const std::string& out_dir,
                const std::vector<std::string>& overrides, std::ostream& log, std::ostream& err) {
  static const std::map<std::string, std::function<int(const RunConfig&, const Paths&, std::ostream&)>> commands = {
      {"gen-data", cmd_gen_data},
      {"pretrain-decoder", cmd_pretrain},
      {"train", cmd_train},
      {"linear-eval", cmd_linear_eval},
      {"retrieval-eval", cmd_retrieval},
      {"collapse-report", cmd_collapse},
      {"export-pairs", cmd_export_pairs},
      {"export-attention", cmd_export_attention},
      {"sweep", cmd_sweep},
  };
  auto fail = [&](const char* category, int code, const std::string& msg) {
    err << "error[" << category << "]: " << msg << '\n';
    return code;
  };
  try {
    const auto it = commands.find(command);
    if (it == commands.end()) throw ConfigError("unknown command '" + command + "'");
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
    apply_overrides(cfg, overrides);
    cfg.validate();
    if (out_dir.empty()) throw ConfigError("an output directory (--out) is required");
    const Paths paths = resolve(cfg, out_dir);
    std::error_code ec;
    fs::create_directories(paths.out, ec);
    if (ec) throw IoError("cannot create output directory " + paths.out.string() + ": " + ec.message());
    std::string snapshot_name = "config." + command + ".conf";
    write_text(paths.out / snapshot_name, echo_config(cfg));
    return it->second(cfg, paths, log);
  } catch (const ConfigError& e) {
    return fail("config", 1, e.what());
  } catch (const DataError& e) {
    return fail("data", 2, e.what());
  } catch (const NumericError& e) {
    return fail("numeric", 3, e.what());
  } catch (const IoError& e) {
    return fail("io", 4, e.what());
  } catch (const fs::filesystem_error& e) {
    return fail("io", 4, e.what());
  } catch (const std::invalid_argument& e) {
    return fail("config", 1, e.what());
  } catch (const std::exception& e) {
    return fail("io", 4, e.what());
  }
}

int run_cli(int argc, const char* const* argv, std::ostream& log, std::ostream& err) {
  CLI::App app{"synpair: contrastive pre-training with synthesized feature-perturbation pairs"};
  std::string command, config, out;
  std::vector<std::string> overrides;
  bool list_keys = false;
  app.add_option("command", command,
                 "gen-data | pretrain-decoder | train | linear-eval | retrieval-eval | collapse-report | "
                 "export-pairs | export-attention | sweep");
  app.add_option("-c,--config", config, "config file with key = value lines");
  app.add_option("-o,--out", out, "output root; relative paths in the config resolve against it");
  app.add_option("-s,--set", overrides, "override, key=value (repeatable)");
  app.add_flag("--list-keys", list_keys, "print every config key with its default and exit");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    log << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error[config]: " << e.what() << '\n';
    return 1;
  }
  if (list_keys) {
    log << echo_config(RunConfig{});
    return 0;
  }
  if (command.empty()) {
    err << "error[config]: missing command\n";
    return 1;
  }
  return run_command(command, config, out, overrides, log, err);
}

}  // namespace synpair
