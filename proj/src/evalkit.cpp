#include "synpair/evalkit.hpp"

#include "synpair/saliency.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

namespace fs = std::filesystem;

namespace synpair {

namespace {

Eigen::MatrixXd rows_of(const Eigen::MatrixXd& m, const std::vector<int>& idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(idx[i]);
  return out;
}

Eigen::MatrixXd l2_rows(Eigen::MatrixXd m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) m.row(i) /= m.row(i).norm() + 1e-12;
  return m;
}

void seeded_shuffle(std::vector<int>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[static_cast<std::size_t>(uniform01(rng) * i)]);
}

std::string numbered(const std::string& dir, const char* stem, std::size_t i) {
  char name[64];
  std::snprintf(name, sizeof name, "%s_%03zu.png", stem, i);
  return (fs::path(dir) / name).string();
}

std::vector<ImageArray> fit(const std::vector<ImageArray>& images, int size) {
  std::vector<ImageArray> out;
  for (const auto& img : images) out.push_back(resize(img, size, size));
  return out;
}

Batch<float> partner_views(const std::vector<ImageArray>& images, const AugmentConfig& aug, std::uint64_t seed) {
  std::vector<ImageArray> views;
  for (std::size_t i = 0; i < images.size(); ++i) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(Stream::Augment), i}));
    views.push_back(augment(images[i], aug, rng));
  }
  return stack(views);
}

}  // namespace

Eigen::MatrixXd extract_features(const Model<float>& model, const Dataset& data, const std::vector<int>& idx,
                                 int batch_size) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), model.nets->arch().feature_dim());
  for (std::size_t i = 0; i < idx.size(); i += batch_size) {
    const std::vector<int> chunk(idx.begin() + static_cast<long>(i),
                                 idx.begin() + static_cast<long>(std::min(idx.size(), i + batch_size)));
    const Batch<float> v = encode(*model.nets, model.encoder_q, stack(data, chunk), Mode::Eval);
    out.middleRows(static_cast<Eigen::Index>(i), v.size()) = v.data.cast<double>();
  }
  return out;
}

std::vector<int> stratified_subset(const std::vector<int>& items, const std::vector<int>& labels, int num_classes,
                                   double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("label_fraction must lie in (0,1]");
  if (items.size() != labels.size()) throw std::invalid_argument("stratified_subset: items and labels differ in length");
  std::vector<std::vector<int>> by_class(num_classes);
  for (std::size_t i = 0; i < items.size(); ++i) by_class.at(labels[i]).push_back(items[i]);
  std::vector<int> out;
  for (int c = 0; c < num_classes; ++c) {
    auto& members = by_class[c];
    const auto take = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(members.size()) + 1e-9));
    if (take == 0)
      throw DataError("label fraction " + std::to_string(fraction) + " leaves class " + std::to_string(c) +
                      " with no labeled examples (" + std::to_string(members.size()) + " available)");
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(Stream::Probe), static_cast<std::uint64_t>(c)}));
    seeded_shuffle(members, rng);
    out.insert(out.end(), members.begin(), members.begin() + static_cast<long>(take));
  }
  std::sort(out.begin(), out.end());
  return out;
}

LinearEvalResult linear_eval_features(const Eigen::MatrixXd& train_x, const std::vector<int>& train_y,
                                      const Eigen::MatrixXd& test_x, const std::vector<int>& test_y,
                                      int num_classes, double label_fraction, std::uint64_t seed,
                                      const LinearEvalConfig& cfg) {
  if (train_x.rows() != static_cast<Eigen::Index>(train_y.size()) ||
      test_x.rows() != static_cast<Eigen::Index>(test_y.size()))
    throw std::invalid_argument("linear_eval: feature rows and labels differ in count");
  if (test_y.empty()) throw DataError("linear_eval: empty test split");
  std::vector<int> all(train_y.size());
  std::iota(all.begin(), all.end(), 0);
  const std::vector<int> subset = stratified_subset(all, train_y, num_classes, label_fraction, seed);

  const Eigen::MatrixXd xs = cfg.normalize_features ? l2_rows(rows_of(train_x, subset)) : rows_of(train_x, subset);
  const Eigen::MatrixXd xt = cfg.normalize_features ? l2_rows(test_x) : test_x;
  const Eigen::Index d = xs.cols();
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(num_classes, d), vw = w;
  Eigen::VectorXd b = Eigen::VectorXd::Zero(num_classes), vb = b;

  std::vector<int> positions(subset.size());
  std::iota(positions.begin(), positions.end(), 0);
  for (int e = 0; e < cfg.epochs; ++e) {
    const double lr = cosine_lr(cfg.lr, e, cfg.epochs);
    const auto batches = shuffled_batches(
        positions, cfg.batch_size,
        derive_seed(seed, {static_cast<std::uint64_t>(Stream::Probe), 0x11bULL, static_cast<std::uint64_t>(e)}), false);
    for (const auto& bi : batches) {
      const Eigen::MatrixXd xb = rows_of(xs, bi);
      Eigen::MatrixXd p = (xb * w.transpose()).rowwise() + b.transpose();
      for (Eigen::Index r = 0; r < p.rows(); ++r) {
        p.row(r).array() -= p.row(r).maxCoeff();
        p.row(r) = p.row(r).array().exp().matrix();
        p.row(r) /= p.row(r).sum();
        p(r, train_y[subset[bi[r]]]) -= 1.0;
      }
      p /= static_cast<double>(bi.size());
      const Eigen::MatrixXd gw = p.transpose() * xb + cfg.weight_decay * w;
      const Eigen::VectorXd gb = p.colwise().sum().transpose();
      vw = cfg.momentum * vw + gw;
      vb = cfg.momentum * vb + gb;
      w -= lr * vw;
      b -= lr * vb;
    }
  }
  if (!w.allFinite()) throw NumericError("linear probe diverged");

  const Eigen::MatrixXd logits = (xt * w.transpose()).rowwise() + b.transpose();
  int correct = 0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Eigen::Index arg;
    logits.row(r).maxCoeff(&arg);
    correct += static_cast<int>(arg) == test_y[r];
  }
  LinearEvalResult res;
  res.top1 = 100.0 * correct / static_cast<double>(test_y.size());
  res.label_fraction = label_fraction;
  res.seed = seed;
  res.labeled_per_class.assign(num_classes, 0);
  for (int i : subset) ++res.labeled_per_class[train_y[i]];
  return res;
}

LinearEvalResult linear_eval(const Model<float>& model, const Dataset& data, double label_fraction,
                             std::uint64_t seed, const LinearEvalConfig& cfg) {
  const auto tr = data.indices(Split::Train), te = data.indices(Split::Test);
  std::vector<int> ytr, yte;
  for (int i : tr) ytr.push_back(data.labels[i]);
  for (int i : te) yte.push_back(data.labels[i]);
  return linear_eval_features(extract_features(model, data, tr), ytr, extract_features(model, data, te), yte,
                              data.num_classes, label_fraction, seed, cfg);
}

RetrievalResult retrieval_eval_features(const Eigen::MatrixXd& feats, const std::vector<int>& labels) {
  const auto n = static_cast<int>(labels.size());
  if (feats.rows() != n) throw std::invalid_argument("retrieval: feature rows and labels differ in count");
  const Eigen::MatrixXd z = l2_rows(feats);
  const Eigen::MatrixXd sim = z * z.transpose();
  RetrievalResult res;
  double r1 = 0, r5 = 0, ap_sum = 0;
  std::vector<int> order;
  for (int q = 0; q < n; ++q) {
    order.clear();
    for (int j = 0; j < n; ++j)
      if (j != q) order.push_back(j);
    const auto relevant = std::count_if(order.begin(), order.end(), [&](int j) { return labels[j] == labels[q]; });
    if (relevant == 0) {
      ++res.excluded;
      continue;
    }
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return sim(q, a) > sim(q, b); });
    int hits = 0;
    double ap = 0;
    bool top1 = false, top5 = false;
    for (std::size_t r = 0; r < order.size(); ++r) {
      if (labels[order[r]] != labels[q]) continue;
      ++hits;
      ap += hits / static_cast<double>(r + 1);
      if (r < 1) top1 = true;
      if (r < 5) top5 = true;
    }
    r1 += top1;
    r5 += top5;
    ap_sum += ap / static_cast<double>(relevant);
    ++res.queries;
  }
  if (res.excluded > 0)
    std::fprintf(stderr, "warning: retrieval excluded %d queries with no same-class gallery item\n", res.excluded);
  if (res.queries > 0) {
    res.rank1 = 100.0 * r1 / res.queries;
    res.rank5 = 100.0 * r5 / res.queries;
    res.mAP = 100.0 * ap_sum / res.queries;
  }
  return res;
}

RetrievalResult retrieval_eval(const Model<float>& model, const Dataset& data) {
  const auto te = data.indices(Split::Test);
  std::vector<int> y;
  for (int i : te) y.push_back(data.labels[i]);
  return retrieval_eval_features(extract_features(model, data, te), y);
}

CollapseReport collapse_report_features(const Eigen::MatrixXd& feats, const std::vector<int>& labels) {
  if (feats.rows() != static_cast<Eigen::Index>(labels.size()))
    throw std::invalid_argument("collapse_report: feature rows and labels differ in count");
  CollapseReport rep;
  rep.dispersion = dispersion_scores(feats);
  const int classes = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  const double n = static_cast<double>(feats.rows());
  const Eigen::RowVectorXd mu = feats.colwise().mean();
  Eigen::MatrixXd class_mean = Eigen::MatrixXd::Zero(classes, feats.cols());
  Eigen::VectorXd count = Eigen::VectorXd::Zero(classes);
  for (Eigen::Index i = 0; i < feats.rows(); ++i) {
    class_mean.row(labels[i]) += feats.row(i);
    count(labels[i]) += 1;
  }
  for (int c = 0; c < classes; ++c)
    if (count(c) > 0) class_mean.row(c) /= count(c);
  Eigen::VectorXd between = Eigen::VectorXd::Zero(feats.cols()), within = between;
  for (int c = 0; c < classes; ++c)
    between += count(c) * (class_mean.row(c) - mu).array().square().matrix().transpose();
  for (Eigen::Index i = 0; i < feats.rows(); ++i)
    within += (feats.row(i) - class_mean.row(labels[i])).array().square().matrix().transpose();
  between /= n;
  within /= n;
  rep.separation.resize(feats.cols());
  for (Eigen::Index d = 0; d < feats.cols(); ++d) {
    if (within(d) > 0) rep.separation(d) = between(d) / within(d);
    else rep.separation(d) = between(d) > 0 ? std::numeric_limits<double>::infinity() : 0.0;
  }
  Eigen::Index i;
  rep.dispersion.minCoeff(&i);
  rep.argmin_dispersion = static_cast<int>(i);
  rep.dispersion.maxCoeff(&i);
  rep.argmax_dispersion = static_cast<int>(i);
  rep.separation.maxCoeff(&i);
  rep.argmax_separation = static_cast<int>(i);
  return rep;
}

CollapseReport collapse_report(const Model<float>& model, const Dataset& data) {
  const auto te = data.indices(Split::Test);
  std::vector<int> y;
  for (int i : te) y.push_back(data.labels[i]);
  return collapse_report_features(extract_features(model, data, te), y);
}

void CollapseReport::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write collapse report: " + path);
  out.precision(17);
  out << "dim,dispersion,separation\n";
  for (Eigen::Index d = 0; d < dispersion.size(); ++d) out << d << ',' << dispersion(d) << ',' << separation(d) << '\n';
  if (!out) throw IoError("failed writing collapse report: " + path);
}

std::string CollapseReport::summary_json() const {
  nlohmann::json j;
  j["dims"] = dispersion.size();
  j["argmin_dispersion"] = argmin_dispersion;
  j["argmax_dispersion"] = argmax_dispersion;
  j["min_dispersion"] = dispersion(argmin_dispersion);
  j["max_dispersion"] = dispersion(argmax_dispersion);
  j["mean_dispersion"] = dispersion.mean();
  j["argmax_separation"] = argmax_separation;
  j["separation_at_min_dispersion"] = separation(argmin_dispersion);
  j["separation_at_max_dispersion"] = separation(argmax_dispersion);
  return j.dump(2);
}

std::pair<Batch<float>, Batch<float>> generate_pairs(const TrainState& state, const TrainConfig& cfg,
                                                     const std::vector<ImageArray>& images, const NoiseConfig& noise,
                                                     std::uint64_t seed) {
  const auto& m = state.model;
  if (m.decoder.size() == 0) throw IoError("model has no decoder parameters");
  noise.validate();
  const auto sized = fit(images, cfg.arch.image_size);
  const Batch<float> x = stack(sized);
  const Batch<float> v = encode(*m.nets, m.encoder_q, x, Mode::Eval);
  Eigen::MatrixXd eta_bar;
  if (needs_saliency(noise.mode)) {
    const Batch<float> v2 = encode(*m.nets, m.encoder_q, partner_views(sized, cfg.augment, seed), Mode::Eval);
    eta_bar = normalize_scores(feature_saliency(*m.nets, m.projector_q, v, v2, cfg.contrastive()).cast<double>());
  }
  std::optional<DispersionScores> disp;
  if (needs_dispersion(noise.mode) && state.bank.fill() >= 2) disp = dispersion_scores(state.bank, noise.kappa);
  Rng rng = make_rng(seed, Stream::Noise);
  const MatrixXf vp = perturb_batch(v.data.cast<double>(), eta_bar, disp ? &*disp : nullptr, noise, rng).cast<float>();
  return {decode(*m.nets, m.decoder, v, Mode::Eval), decode(*m.nets, m.decoder, as_features<float>(vp), Mode::Eval)};
}

std::vector<std::string> export_pairs(const TrainState& state, const TrainConfig& cfg,
                                      const std::vector<ImageArray>& images, const NoiseConfig& noise,
                                      const std::string& out_dir, std::uint64_t seed) {
  const auto [x_hat, x_hat_p] = generate_pairs(state, cfg, images, noise, seed);
  fs::create_directories(out_dir);
  const int s = cfg.arch.image_size;
  std::vector<std::string> paths;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto row = static_cast<int>(i);
    const auto path = numbered(out_dir, "pair", i);
    write_png(path, hconcat({resize(images[i], s, s), unstack(x_hat, row, s, s), unstack(x_hat_p, row, s, s)}));
    paths.push_back(path);
  }
  return paths;
}

std::vector<Eigen::MatrixXd> attention_maps(const TrainState& state, const TrainConfig& cfg,
                                            const std::vector<ImageArray>& images, std::uint64_t seed) {
  const auto& m = state.model;
  const auto sized = fit(images, cfg.arch.image_size);
  return spatial_attention_map(*m.nets, m.encoder_q, m.projector_q, stack(sized),
                               partner_views(sized, cfg.augment, seed), cfg.contrastive(), Mode::Eval);
}

std::vector<std::string> export_attention(const TrainState& state, const TrainConfig& cfg,
                                          const std::vector<ImageArray>& images, const std::string& out_dir,
                                          std::uint64_t seed) {
  const auto maps = attention_maps(state, cfg, images, seed);
  fs::create_directories(out_dir);
  const int s = cfg.arch.image_size;
  std::vector<std::string> paths;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const ImageArray img = resize(images[i], s, s);
    ImageArray heat(3, s, s), overlay = img;
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) {
        const auto a = static_cast<float>(maps[i](y, x));
        for (int c = 0; c < 3; ++c) heat.at(c, y, x) = a;
        overlay.at(0, y, x) = 0.5f * img.at(0, y, x) + 0.5f * a;
        overlay.at(1, y, x) = 0.5f * img.at(1, y, x);
        overlay.at(2, y, x) = 0.5f * img.at(2, y, x) + 0.5f * (1.0f - a);
      }
    const auto path = numbered(out_dir, "attention", i);
    write_png(path, hconcat({img, heat, overlay}));
    paths.push_back(path);
  }
  return paths;
}

double attention_mass_in_box(const Eigen::MatrixXd& map, const std::array<int, 4>& box) {
  const double total = map.sum();
  if (!(total > 0)) return 0.0;
  const int x0 = std::max(0, box[0]), y0 = std::max(0, box[1]);
  const int x1 = std::min(static_cast<int>(map.cols()), box[2]), y1 = std::min(static_cast<int>(map.rows()), box[3]);
  if (x1 <= x0 || y1 <= y0) return 0.0;
  return map.block(y0, x0, y1 - y0, x1 - x0).sum() / total;
}

}  // namespace synpair
