#include "doctest.h"
#include "support.hpp"

#include "synpair/augment.hpp"
#include "synpair/datagen.hpp"
#include "synpair/image.hpp"

#include <filesystem>
#include <map>
#include <numeric>

using namespace synpair;
namespace fs = std::filesystem;

namespace {

DatasetSpec spec_of(int classes, int per_class, std::uint64_t seed, double subtlety = 0.3, int size = 32) {
  DatasetSpec s;
  s.num_classes = classes;
  s.per_class = per_class;
  s.seed = seed;
  s.subtlety = subtlety;
  s.image_size = size;
  return s;
}

// Nearest-centroid accuracy (train centroids, test queries) on row features.
double nearest_centroid(const std::vector<Eigen::VectorXd>& x, const std::vector<int>& y, const std::vector<Split>& split,
                        int classes) {
  std::vector<Eigen::VectorXd> centroid(classes, Eigen::VectorXd::Zero(x[0].size()));
  std::vector<int> count(classes, 0);
  for (std::size_t i = 0; i < x.size(); ++i)
    if (split[i] == Split::Train) {
      centroid[y[i]] += x[i];
      ++count[y[i]];
    }
  for (int c = 0; c < classes; ++c) centroid[c] /= count[c];
  int right = 0, total = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (split[i] != Split::Test) continue;
    int best = 0;
    for (int c = 1; c < classes; ++c)
      if ((x[i] - centroid[c]).squaredNorm() < (x[i] - centroid[best]).squaredNorm()) best = c;
    right += best == y[i];
    ++total;
  }
  return 100.0 * right / total;
}

}  // namespace

TEST_CASE("generated manifest has the stratified split") {
  const auto dir = testsupport::scratch("gen_counts");
  const Manifest m = generate_dataset(spec_of(4, 50, 7), dir.string());
  CHECK(m.rows.size() == 200);
  CHECK(m.num_classes() == 4);
  std::map<std::pair<int, Split>, int> counts;
  for (const auto& r : m.rows) {
    ++counts[{r.label, r.split}];
    CHECK(fs::exists(dir / r.path));
  }
  for (int c = 0; c < 4; ++c) {
    CHECK(counts[{c, Split::Train}] == 40);
    CHECK(counts[{c, Split::Test}] == 10);
  }
  const Manifest back = Manifest::read((dir / "manifest.csv").string());
  CHECK(back.rows.size() == 200);
  const Dataset d = load_dataset(back, 32);
  CHECK(d.size() == 200);
  CHECK(d.num_classes == 4);
  CHECK(d.indices(Split::Train).size() == 160);
}

TEST_CASE("generation is byte-identical for equal specs") {
  const auto a = testsupport::scratch("gen_det_a"), b = testsupport::scratch("gen_det_b");
  const auto spec = spec_of(3, 6, 11);
  const Manifest ma = generate_dataset(spec, a.string());
  generate_dataset(spec, b.string());
  CHECK(testsupport::files_equal(a / "manifest.csv", b / "manifest.csv"));
  CHECK(testsupport::files_equal(a / "glyphs.csv", b / "glyphs.csv"));
  for (const auto& r : ma.rows) CHECK(testsupport::files_equal(a / r.path, b / r.path));
  const auto c = testsupport::scratch("gen_det_c");
  auto other = spec;
  other.seed = 12;
  generate_dataset(other, c.string());
  CHECK_FALSE(testsupport::files_equal(a / ma.rows[0].path, c / ma.rows[0].path));
}

TEST_CASE("pixels do not separate the classes but the glyph parameters do") {
  const auto dir = testsupport::scratch("gen_oracle");
  const Manifest m = generate_dataset(spec_of(2, 100, 3, 0.2), dir.string());
  const Dataset d = load_dataset(m, 32);
  std::vector<Eigen::VectorXd> pixels, params;
  const auto glyphs = read_glyph_records((dir / "glyphs.csv").string());
  std::map<std::string, std::array<double, 3>> by_path;
  for (const auto& g : glyphs) by_path[g.path] = g.params;
  REQUIRE(by_path.size() == d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const MatrixXf& p = d.images[i].pixels;
    pixels.push_back(Eigen::Map<const Eigen::VectorXf>(p.data(), p.size()).cast<double>());
    const auto& g = by_path.at(m.rows[i].path);
    params.push_back(Eigen::Vector3d(g[0], g[1], g[2]));
  }
  const double pix = nearest_centroid(pixels, d.labels, d.splits, 2);
  const double par = nearest_centroid(params, d.labels, d.splits, 2);
  MESSAGE("pixel centroid " << pix << "%, glyph-parameter centroid " << par << "%");
  CHECK(std::abs(pix - 50.0) <= 15.0);
  CHECK(par == 100.0);
}

TEST_CASE("glyph classes are distinct and ordered by subtlety") {
  for (double s : {0.0, 0.3, 1.0}) {
    const auto a = glyph_class(0, 8, s), b = glyph_class(1, 8, s);
    CHECK(a.notch != b.notch);
    CHECK(a.hole != b.hole);
  }
  CHECK(std::abs(glyph_class(1, 8, 0.9).notch - glyph_class(0, 8, 0.9).notch) <
        std::abs(glyph_class(1, 8, 0.1).notch - glyph_class(0, 8, 0.1).notch));
}

TEST_CASE("loading reports the missing file") {
  const auto dir = testsupport::scratch("gen_missing");
  const Manifest m = generate_dataset(spec_of(2, 4, 5), dir.string());
  fs::remove(dir / m.rows[3].path);
  try {
    load_dataset((dir / "manifest.csv").string(), 32);
    FAIL("expected a DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find(m.rows[3].path) != std::string::npos);
  }
}

TEST_CASE("manifest validation") {
  const auto dir = testsupport::scratch("gen_bad_manifest");
  generate_dataset(spec_of(2, 4, 5), dir.string());
  Manifest m = Manifest::read((dir / "manifest.csv").string());
  for (auto& r : m.rows) r.split = Split::Train;
  CHECK_THROWS_AS(load_dataset(m, 32), DataError);
  std::ofstream(dir / "bad.csv") << "file,class\n";
  CHECK_THROWS_AS(Manifest::read((dir / "bad.csv").string()), DataError);
  CHECK_THROWS_AS(spec_of(1, 4, 1).validate(), ConfigError);
  CHECK_THROWS_AS(spec_of(2, 4, 1, 1.5).validate(), ConfigError);
}

TEST_CASE("shuffled batches are seeded and cover every item") {
  std::vector<int> items(23);
  std::iota(items.begin(), items.end(), 0);
  const auto a = shuffled_batches(items, 5, 9, true), b = shuffled_batches(items, 5, 9, true);
  CHECK(a == b);
  CHECK(a.size() == 4);
  const auto c = shuffled_batches(items, 5, 10, false);
  CHECK(c.size() == 5);
  std::vector<int> seen;
  for (const auto& batch : c) seen.insert(seen.end(), batch.begin(), batch.end());
  std::sort(seen.begin(), seen.end());
  CHECK(seen == items);
  CHECK(c != shuffled_batches(items, 5, 9, false));
}

TEST_CASE("png round trip and resize") {
  const auto dir = testsupport::scratch("png");
  ImageArray img(3, 5, 7);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 7; ++x) img.at(c, y, x) = static_cast<float>((c * 35 + y * 7 + x) % 256) / 255.0f;
  write_png((dir / "a.png").string(), img);
  const ImageArray back = read_png((dir / "a.png").string());
  CHECK((back.pixels - img.pixels).cwiseAbs().maxCoeff() < 1e-6f);
  CHECK(resize(img, 5, 7) == img);
  const ImageArray big = resize(img, 10, 14);
  CHECK(big.height == 10);
  CHECK(big.pixels.minCoeff() >= 0.0f);
  CHECK_THROWS_AS(read_png((dir / "nope.png").string()), DataError);
  std::ofstream(dir / "junk.png") << "not a png";
  CHECK_THROWS_AS(read_png((dir / "junk.png").string()), DataError);
}

TEST_CASE("identity augmentation returns the source") {
  Rng rng(1);
  const ImageArray x = render_item(spec_of(4, 2, 1, 0.3, 64), 2, rng);
  const ViewPair v = make_views(x, AugmentConfig::identity(), 5);
  CHECK(v.view1 == x);
  CHECK(v.view2 == x);
  CHECK(v.source == x);

  AugmentConfig off;
  off.flip_p = off.jitter_p = off.grayscale_p = off.blur_p = 0;
  off.crop_scale_min = off.crop_scale_max = 1.0;
  off.crop_ratio_min = off.crop_ratio_max = 1.0;
  const ViewPair w = make_views(x, off, 6);
  CHECK(w.view1 == x);
  CHECK(w.view2 == x);
}

TEST_CASE("default views differ, stay in range and are seeded") {
  const AugmentConfig cfg;
  const DatasetSpec spec = spec_of(8, 2, 1, 0.3, 64);
  Rng rng(42);
  int differ = 0;
  const int n = 1000;
  for (int i = 0; i < n; ++i) {
    const ImageArray x = render_item(spec, i % 8, rng);
    const ViewPair v = make_views(x, cfg, 1000 + static_cast<std::uint64_t>(i));
    differ += !(v.view1 == v.view2);
    REQUIRE(v.view1.height == 64);
    REQUIRE(v.view2.channels() == 3);
    REQUIRE(v.view1.pixels.minCoeff() >= 0.0f);
    REQUIRE(v.view1.pixels.maxCoeff() <= 1.0f);
    REQUIRE(v.view2.pixels.minCoeff() >= 0.0f);
    REQUIRE(v.view2.pixels.maxCoeff() <= 1.0f);
    if (i < 5) {
      const ViewPair again = make_views(x, cfg, 1000 + static_cast<std::uint64_t>(i));
      CHECK(again.view1 == v.view1);
      CHECK(again.view2 == v.view2);
    }
  }
  CHECK(static_cast<double>(differ) / n >= 0.99);
}

TEST_CASE("augmentation ops") {
  Rng rng(3);
  const ImageArray x = render_item(spec_of(2, 2, 1, 0.3, 32), 1, rng);
  CHECK(flip_horizontal(flip_horizontal(x)) == x);
  const ImageArray g = to_grayscale(x);
  CHECK((g.pixels.row(0) - g.pixels.row(1)).cwiseAbs().maxCoeff() == 0.0f);
  CHECK(adjust_brightness(x, 1.0) == x);
  CHECK((adjust_hue(x, 0.0).pixels - x.pixels).cwiseAbs().maxCoeff() < 1e-5f);
  ImageArray flat(3, 8, 8);
  flat.pixels.setConstant(0.4f);
  CHECK((gaussian_blur(flat, 1.5, 7).pixels.array() - 0.4f).abs().maxCoeff() < 1e-6f);
  AugmentConfig cfg;
  for (int t = 0; t < 200; ++t) {
    const CropBox b = sample_crop(32, 32, cfg, rng);
    REQUIRE(b.top >= 0);
    REQUIRE(b.left >= 0);
    REQUIRE(b.top + b.height <= 32);
    REQUIRE(b.left + b.width <= 32);
    REQUIRE(b.height * b.width >= 1);
  }
  AugmentConfig bad;
  bad.flip_p = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
