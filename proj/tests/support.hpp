#pragma once

#include "synpair/trainer.hpp"

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

namespace testsupport {

inline synpair::ArchConfig tiny_arch(int image_size = 16) {
  synpair::ArchConfig a;
  a.image_size = image_size;
  a.encoder_channels = {4, 8};
  a.projector_hidden = 8;
  a.projection_dim = 6;
  return a;
}

inline synpair::TrainConfig tiny_config(int image_size = 16) {
  synpair::TrainConfig c;
  c.arch = tiny_arch(image_size);
  c.batch_size = 8;
  c.queue_capacity = 64;
  c.bank_capacity = 32;
  c.epochs = 2;
  c.decoder_epochs = 1;
  return c;
}

inline synpair::MatrixXd random_matrix(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  synpair::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = n(rng);
  return m;
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("synpair_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// Small generated dataset, cached per (classes, per_class, size, seed).
inline synpair::Dataset small_dataset(int classes, int per_class, int image_size, std::uint64_t seed,
                                      double subtlety = 0.3) {
  synpair::DatasetSpec spec;
  spec.num_classes = classes;
  spec.per_class = per_class;
  spec.image_size = image_size;
  spec.subtlety = subtlety;
  spec.seed = seed;
  const auto dir = std::filesystem::temp_directory_path() /
                   ("synpair_data_" + std::to_string(classes) + "x" + std::to_string(per_class) + "_" +
                    std::to_string(image_size) + "_" + std::to_string(seed) + "_" + std::to_string(subtlety));
  if (!std::filesystem::exists(dir / "manifest.csv")) {
    // Generate aside and rename, so concurrent test processes never see a partial set.
    const auto tmp = dir.string() + ".tmp" + std::to_string(std::random_device{}());
    synpair::generate_dataset(spec, tmp);
    std::error_code ec;
    std::filesystem::rename(tmp, dir, ec);
    if (ec) std::filesystem::remove_all(tmp);
  }
  return synpair::load_dataset((dir / "manifest.csv").string(), image_size);
}

inline bool files_equal(const std::filesystem::path& a, const std::filesystem::path& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(fa), {}) == std::string(std::istreambuf_iterator<char>(fb), {});
}

}  // namespace testsupport
