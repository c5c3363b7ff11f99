#include "synpair/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

namespace fs = std::filesystem;

namespace synpair {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kNotchHalfWidth = 0.5;  // radians
constexpr int kSupersample = 4;

struct Rgb {
  double r, g, b;
};

Rgb hsv(double h, double s, double v) {
  h = h - std::floor(h);
  const double i = std::floor(h * 6.0), f = h * 6.0 - i;
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (static_cast<int>(i) % 6) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

void put(ImageArray& img, int y, int x, const Rgb& c) {
  img.at(0, y, x) = static_cast<float>(c.r);
  img.at(1, y, x) = static_cast<float>(c.g);
  img.at(2, y, x) = static_cast<float>(c.b);
}

Rgb mix(const Rgb& a, const Rgb& b, double t) {
  return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

// Background texture families: 0 stripes, 1 checker, 2 gradient, 3 blobs.
double background_value(int family, double x, double y, int size, const std::vector<double>& p) {
  switch (family) {
    case 0: return 0.5 + 0.5 * std::sin(2 * kPi * (x * std::cos(p[0]) + y * std::sin(p[0])) / p[1] + p[2]);
    case 1: {
      const auto cx = static_cast<long>(std::floor((x + p[1]) / p[0]));
      const auto cy = static_cast<long>(std::floor((y + p[2]) / p[0]));
      return ((cx + cy) & 1) ? 1.0 : 0.0;
    }
    case 2: {
      const double d = (x - size / 2.0) * std::cos(p[0]) + (y - size / 2.0) * std::sin(p[0]);
      return std::clamp(0.5 + d / (size * 0.75), 0.0, 1.0);
    }
    default: {
      double t = 0;
      for (std::size_t b = 0; b + 2 < p.size(); b += 3) {
        const double dx = x - p[b], dy = y - p[b + 1];
        t += std::exp(-(dx * dx + dy * dy) / (2 * p[b + 2] * p[b + 2]));
      }
      return std::min(1.0, t);
    }
  }
}

bool in_glyph(double x, double y, double cx, double cy, double radius, const GlyphClass& g) {
  const double dx = x - cx, dy = cy - y;  // y axis up
  const double r = std::hypot(dx, dy);
  if (r > radius || r < g.hole * radius) return false;
  double diff = std::atan2(dy, dx) - g.notch;
  diff = std::remainder(diff, 2 * kPi);
  return std::abs(diff) > kNotchHalfWidth;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && s[i] == ' ') ++i;
  return s.substr(i);
}

}  // namespace

std::string to_string(Split s) { return s == Split::Train ? "train" : "test"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  throw DataError("unknown split '" + s + "' (expected train or test)");
}

void DatasetSpec::validate() const {
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (per_class < 2) throw ConfigError("per_class must be >= 2");
  if (image_size < 8) throw ConfigError("image_size must be >= 8");
  if (!(subtlety >= 0.0 && subtlety <= 1.0)) throw ConfigError("subtlety must lie in [0,1]");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train_fraction must lie in (0,1)");
  const long train = std::lround(train_fraction * per_class);
  if (train < 1 || train >= per_class) throw ConfigError("train_fraction leaves a split empty for per_class");
}

GlyphClass glyph_class(int label, int num_classes, double subtlety) {
  const double m = 1.0 - 0.8 * subtlety;
  GlyphClass g;
  g.notch = m * kPi * label / num_classes;
  g.hole = 0.25 + 0.35 * m * label / std::max(1, num_classes - 1);
  return g;
}

std::array<double, 3> glyph_parameters(const GlyphClass& g) { return {std::cos(g.notch), std::sin(g.notch), g.hole}; }

ImageArray render_item(const DatasetSpec& spec, int label, Rng& rng, GlyphRecord* record) {
  const int s = spec.image_size;
  ImageArray img(3, s, s);

  const int family = static_cast<int>(uniform01(rng) * 4);
  const double hue = uniform01(rng);
  const double brightness = uniform(rng, 0.35, 0.85);
  const Rgb c1 = hsv(hue, uniform(rng, 0.3, 0.8), brightness);
  const Rgb c2 = hsv(hue + uniform(rng, 0.1, 0.4), uniform(rng, 0.3, 0.8), std::clamp(brightness + uniform(rng, -0.3, 0.3), 0.1, 1.0));
  std::vector<double> p;
  switch (family) {
    case 0: p = {uniform(rng, 0, kPi), uniform(rng, 4, 12), uniform(rng, 0, 2 * kPi)}; break;
    case 1: p = {uniform(rng, 4, 12), uniform(rng, 0, 12), uniform(rng, 0, 12)}; break;
    case 2: p = {uniform(rng, 0, 2 * kPi)}; break;
    default: {
      const int blobs = 3 + static_cast<int>(uniform01(rng) * 4);
      for (int b = 0; b < blobs; ++b) {
        p.push_back(uniform(rng, 0, s));
        p.push_back(uniform(rng, 0, s));
        p.push_back(uniform(rng, s / 16.0, s / 4.0));
      }
    }
  }

  const GlyphClass g = glyph_class(label, spec.num_classes, spec.subtlety);
  const double radius = uniform(rng, 0.2, 0.32) * s;
  const double cx = uniform(rng, radius + 1, s - radius - 1);
  const double cy = uniform(rng, radius + 1, s - radius - 1);
  const Rgb glyph = hsv(hue + 0.5, uniform(rng, 0.6, 1.0), brightness > 0.6 ? uniform(rng, 0.05, 0.25) : uniform(rng, 0.85, 1.0));

  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      const double jitter = uniform(rng, -0.03, 0.03);
      const Rgb bg = mix(c1, c2, background_value(family, x + 0.5, y + 0.5, s, p));
      int hits = 0;
      for (int sy = 0; sy < kSupersample; ++sy)
        for (int sx = 0; sx < kSupersample; ++sx)
          hits += in_glyph(x + (sx + 0.5) / kSupersample, y + (sy + 0.5) / kSupersample, cx, cy, radius, g);
      Rgb c = mix(bg, glyph, static_cast<double>(hits) / (kSupersample * kSupersample));
      c = {std::clamp(c.r + jitter, 0.0, 1.0), std::clamp(c.g + jitter, 0.0, 1.0), std::clamp(c.b + jitter, 0.0, 1.0)};
      put(img, y, x, c);
    }
  }

  if (record) {
    record->label = label;
    record->params = glyph_parameters(g);
    record->box = {std::max(0, static_cast<int>(std::floor(cx - radius))), std::max(0, static_cast<int>(std::floor(cy - radius))),
                   std::min(s, static_cast<int>(std::ceil(cx + radius)) + 1),
                   std::min(s, static_cast<int>(std::ceil(cy + radius)) + 1)};
  }
  return img;
}

Manifest generate_dataset(const DatasetSpec& spec, const std::string& out_dir) {
  spec.validate();
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  if (ec) throw IoError("cannot create output directory '" + out_dir + "': " + ec.message());

  Manifest manifest;
  manifest.root = out_dir;
  std::vector<GlyphRecord> records;
  const int n_train = static_cast<int>(std::lround(spec.train_fraction * spec.per_class));
  for (int label = 0; label < spec.num_classes; ++label) {
    std::vector<int> order(spec.per_class);
    std::iota(order.begin(), order.end(), 0);
    Rng split_rng(derive_seed(spec.seed, {static_cast<std::uint64_t>(Stream::Shuffle), static_cast<std::uint64_t>(label)}));
    std::shuffle(order.begin(), order.end(), split_rng);
    std::vector<bool> is_train(spec.per_class, false);
    for (int i = 0; i < n_train; ++i) is_train[order[i]] = true;

    for (int i = 0; i < spec.per_class; ++i) {
      char name[64];
      std::snprintf(name, sizeof name, "images/c%02d_%04d.png", label, i);
      Rng rng(derive_seed(spec.seed, {static_cast<std::uint64_t>(Stream::Data), static_cast<std::uint64_t>(label),
                                      static_cast<std::uint64_t>(i)}));
      GlyphRecord rec;
      const ImageArray img = render_item(spec, label, rng, &rec);
      rec.path = name;
      write_png((fs::path(out_dir) / name).string(), img);
      records.push_back(rec);
      manifest.rows.push_back({name, label, is_train[i] ? Split::Train : Split::Test});
    }
  }
  manifest.write((fs::path(out_dir) / "manifest.csv").string());

  std::ofstream glyphs(fs::path(out_dir) / "glyphs.csv");
  if (!glyphs) throw IoError("cannot write glyphs.csv in '" + out_dir + "'");
  glyphs << "path,label,cos_notch,sin_notch,hole,x0,y0,x1,y1\n";
  glyphs.precision(17);
  for (const auto& r : records) {
    glyphs << r.path << ',' << r.label << ',' << r.params[0] << ',' << r.params[1] << ',' << r.params[2];
    for (int b : r.box) glyphs << ',' << b;
    glyphs << '\n';
  }
  if (!glyphs) throw IoError("failed writing glyphs.csv in '" + out_dir + "'");
  return manifest;
}

std::vector<GlyphRecord> read_glyph_records(const std::string& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw DataError("cannot open glyph records: " + csv_path);
  std::string line;
  std::getline(in, line);
  std::vector<GlyphRecord> out;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 9) throw DataError("malformed glyph record in " + csv_path + ": " + line);
    GlyphRecord r;
    r.path = cells[0];
    r.label = std::stoi(cells[1]);
    for (int i = 0; i < 3; ++i) r.params[i] = std::stod(cells[2 + i]);
    for (int i = 0; i < 4; ++i) r.box[i] = std::stoi(cells[5 + i]);
    out.push_back(r);
  }
  return out;
}

int Manifest::num_classes() const {
  int m = -1;
  for (const auto& r : rows) m = std::max(m, r.label);
  return m + 1;
}

std::size_t Manifest::count(Split s) const {
  return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [s](const auto& r) { return r.split == s; }));
}

Manifest Manifest::read(const std::string& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw DataError("cannot open manifest: " + csv_path);
  Manifest m;
  m.root = fs::path(csv_path).parent_path().string();
  std::string line;
  if (!std::getline(in, line) || trim(line) != "path,label,split")
    throw DataError("manifest " + csv_path + " must start with header 'path,label,split'");
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 3) throw DataError(csv_path + ":" + std::to_string(lineno) + ": expected 3 fields");
    ManifestRow row;
    row.path = trim(cells[0]);
    try {
      std::size_t used = 0;
      row.label = std::stoi(cells[1], &used);
      if (used != trim(cells[1]).size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw DataError(csv_path + ":" + std::to_string(lineno) + ": bad label '" + cells[1] + "'");
    }
    row.split = parse_split(trim(cells[2]));
    m.rows.push_back(row);
  }
  return m;
}

void Manifest::write(const std::string& csv_path) const {
  std::ofstream out(csv_path);
  if (!out) throw IoError("cannot write manifest: " + csv_path);
  out << "path,label,split\n";
  for (const auto& r : rows) out << r.path << ',' << r.label << ',' << to_string(r.split) << '\n';
  if (!out) throw IoError("failed writing manifest: " + csv_path);
}

std::vector<int> Dataset::indices(Split s) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < splits.size(); ++i)
    if (splits[i] == s) out.push_back(static_cast<int>(i));
  return out;
}

Dataset load_dataset(const Manifest& manifest, int image_size) {
  if (manifest.rows.empty()) throw DataError("manifest has no rows");
  Dataset d;
  d.image_size = image_size;
  d.num_classes = manifest.num_classes();
  for (const auto& row : manifest.rows) {
    if (row.label < 0) throw DataError("label out of range for " + row.path + ": " + std::to_string(row.label));
    const std::string path = (fs::path(manifest.root) / row.path).string();
    ImageArray img = read_png(path);
    d.images.push_back(resize(img, image_size, image_size));
    d.labels.push_back(row.label);
    d.splits.push_back(row.split);
    d.paths.push_back(path);
  }
  if (manifest.count(Split::Train) == 0) throw DataError("manifest has an empty train split");
  if (manifest.count(Split::Test) == 0) throw DataError("manifest has an empty test split");
  return d;
}

Dataset load_dataset(const std::string& manifest_path, int image_size) {
  return load_dataset(Manifest::read(manifest_path), image_size);
}

std::vector<std::vector<int>> shuffled_batches(const std::vector<int>& items, int batch_size, std::uint64_t seed,
                                               bool drop_last) {
  if (batch_size <= 0) throw std::invalid_argument("batch size must be positive");
  std::vector<int> order = items;
  Rng rng(seed);
  // Fisher-Yates on uniform01 so the order does not depend on the library.
  for (std::size_t i = order.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
    std::swap(order[i - 1], order[j]);
  }
  std::vector<std::vector<int>> out;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    const std::size_t end = std::min(order.size(), i + batch_size);
    if (drop_last && end - i < static_cast<std::size_t>(batch_size)) break;
    out.emplace_back(order.begin() + static_cast<long>(i), order.begin() + static_cast<long>(end));
  }
  return out;
}

nn::Batch<float> stack(const std::vector<ImageArray>& images) {
  if (images.empty()) throw std::invalid_argument("stack: no images");
  const nn::Shape shape{images[0].channels(), images[0].height, images[0].width};
  nn::Batch<float> b(static_cast<int>(images.size()), shape);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].height != shape.height || images[i].width != shape.width)
      throw std::invalid_argument("stack: image sizes differ");
    b.sample(static_cast<int>(i)) = images[i].pixels;
  }
  return b;
}

nn::Batch<float> stack(const Dataset& data, const std::vector<int>& idx) {
  std::vector<ImageArray> imgs;
  imgs.reserve(idx.size());
  for (int i : idx) imgs.push_back(data.images.at(i));
  return stack(imgs);
}

ImageArray unstack(const nn::Batch<float>& batch, int row, int height, int width) {
  ImageArray img(batch.shape.channels, height, width);
  img.pixels = batch.sample(row);
  return img;
}

}  // namespace synpair
