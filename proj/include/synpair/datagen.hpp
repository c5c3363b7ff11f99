#pragma once

#include "synpair/image.hpp"
#include "synpair/nn/tensor.hpp"
#include "synpair/rng.hpp"

#include <array>
#include <string>
#include <vector>

namespace synpair {

enum class Split { Train, Test };

std::string to_string(Split s);
Split parse_split(const std::string& s);

/// Synthetic fine-grained dataset description.
struct DatasetSpec {
  int num_classes = 8;
  int per_class = 250;
  int image_size = 64;
  double subtlety = 0.3;  // 0 = large class differences, 1 = tiny
  std::uint64_t seed = 0;
  double train_fraction = 0.8;
  void validate() const;
};

/// Class-defining glyph: a ring with hole ratio `hole` and a notch cut at
/// angle `notch` (radians, counter-clockwise from +x).
struct GlyphClass {
  double notch = 0.0;
  double hole = 0.0;
};

GlyphClass glyph_class(int label, int num_classes, double subtlety);

/// Ground-truth parameter vector (cos notch, sin notch, hole).
std::array<double, 3> glyph_parameters(const GlyphClass& g);

struct ManifestRow {
  std::string path;  // relative to the manifest directory
  int label = 0;
  Split split = Split::Train;
};

struct Manifest {
  std::string root;  // directory the paths are relative to
  std::vector<ManifestRow> rows;

  int num_classes() const;
  std::size_t count(Split s) const;

  /// CSV `path,label,split` with header. `root` becomes the file's directory.
  static Manifest read(const std::string& csv_path);
  void write(const std::string& csv_path) const;
};

/// Per-image generator record, written next to the manifest as glyphs.csv.
struct GlyphRecord {
  std::string path;
  int label = 0;
  std::array<double, 3> params{};
  std::array<int, 4> box{};  // x0, y0, x1, y1 (inclusive-exclusive)
};

/// Renders one image (background nuisance + class glyph).
ImageArray render_item(const DatasetSpec& spec, int label, Rng& rng, GlyphRecord* record = nullptr);

/// Writes num_classes * per_class PNGs, manifest.csv and glyphs.csv into
/// out_dir. Stratified split; deterministic given spec.seed.
Manifest generate_dataset(const DatasetSpec& spec, const std::string& out_dir);

std::vector<GlyphRecord> read_glyph_records(const std::string& csv_path);

/// In-memory dataset: images resized to a common size, labels and splits.
struct Dataset {
  std::vector<ImageArray> images;
  std::vector<int> labels;
  std::vector<Split> splits;
  std::vector<std::string> paths;
  int num_classes = 0;
  int image_size = 0;

  std::size_t size() const { return images.size(); }
  std::vector<int> indices(Split s) const;
};

/// Loads every manifest row, resizing to image_size. Missing files, corrupt
/// images, out-of-range labels and empty splits raise DataError.
Dataset load_dataset(const Manifest& manifest, int image_size);
Dataset load_dataset(const std::string& manifest_path, int image_size);

/// Seeded shuffle of `items` cut into batches of `batch_size`; the tail is
/// dropped when `drop_last` is set.
std::vector<std::vector<int>> shuffled_batches(const std::vector<int>& items, int batch_size, std::uint64_t seed,
                                               bool drop_last);

/// Stacks images (rows of the result, channel-major) into a batch.
nn::Batch<float> stack(const std::vector<ImageArray>& images);
nn::Batch<float> stack(const Dataset& data, const std::vector<int>& idx);

/// Inverse of stack for a single row.
ImageArray unstack(const nn::Batch<float>& batch, int row, int height, int width);

}  // namespace synpair
