#pragma once

#include "synpair/common.hpp"

#include <string>
#include <vector>

namespace synpair {

/// C x H x W intensities in [0,1], stored as a C x (H*W) row-major matrix so
/// that pixels.data() is already the channel-major flat layout of a batch row.
struct ImageArray {
  int height = 0;
  int width = 0;
  MatrixXf pixels;

  ImageArray() = default;
  ImageArray(int channels, int h, int w) : height(h), width(w), pixels(MatrixXf::Zero(channels, h * w)) {}

  int channels() const { return static_cast<int>(pixels.rows()); }
  float& at(int c, int y, int x) { return pixels(c, y * width + x); }
  float at(int c, int y, int x) const { return pixels(c, y * width + x); }
  bool operator==(const ImageArray& o) const {
    return height == o.height && width == o.width && pixels.rows() == o.pixels.rows() && pixels == o.pixels;
  }
};

/// 8-bit RGB PNG; values are rounded from [0,1] to [0,255].
void write_png(const std::string& path, const ImageArray& img);

/// Grayscale PNG from an H x W map in [0,1].
void write_png_gray(const std::string& path, const Eigen::Ref<const Eigen::MatrixXd>& map);

/// Reads any PNG as 3-channel RGB scaled by 1/255. Throws DataError naming
/// the path on missing or corrupt files.
ImageArray read_png(const std::string& path);

/// Bilinear resize (half-pixel centers, edge clamp). Same size is an exact copy.
ImageArray resize(const ImageArray& img, int height, int width);

/// Horizontal concatenation of equal-height images.
ImageArray hconcat(const std::vector<ImageArray>& parts);

}  // namespace synpair
