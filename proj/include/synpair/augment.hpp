#pragma once

#include "synpair/image.hpp"
#include "synpair/rng.hpp"

namespace synpair {

/// Random view pipeline: resized crop, horizontal flip, color jitter,
/// grayscale, Gaussian blur, applied in that order.
struct AugmentConfig {
  bool crop = true;
  double crop_scale_min = 0.2;
  double crop_scale_max = 1.0;
  double crop_ratio_min = 3.0 / 4.0;
  double crop_ratio_max = 4.0 / 3.0;

  bool flip = true;
  double flip_p = 0.5;

  bool jitter = true;
  double jitter_p = 0.8;
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.4;
  double hue = 0.1;

  bool grayscale = true;
  double grayscale_p = 0.2;

  bool blur = true;
  double blur_p = 0.5;
  double blur_sigma_min = 0.1;
  double blur_sigma_max = 2.0;
  int blur_kernel = 7;

  void validate() const;

  /// Every op disabled: views equal the source.
  static AugmentConfig identity();
};

struct ViewPair {
  ImageArray view1;   // x'
  ImageArray view2;   // x''
  ImageArray source;  // x, resize only
};

/// One augmented view drawn from `rng`.
ImageArray augment(const ImageArray& x, const AugmentConfig& cfg, Rng& rng);

/// Two independent views of x plus x itself; deterministic given seed.
ViewPair make_views(const ImageArray& x, const AugmentConfig& cfg, std::uint64_t seed);

/// Crop window (top, left, height, width) as sampled by the resized-crop op.
struct CropBox {
  int top = 0, left = 0, height = 0, width = 0;
};
CropBox sample_crop(int height, int width, const AugmentConfig& cfg, Rng& rng);

// Individual ops, exposed for testing.
ImageArray crop_resize(const ImageArray& x, const CropBox& box, int out_h, int out_w);
ImageArray flip_horizontal(const ImageArray& x);
ImageArray to_grayscale(const ImageArray& x);
ImageArray gaussian_blur(const ImageArray& x, double sigma, int kernel);
ImageArray adjust_brightness(const ImageArray& x, double factor);
ImageArray adjust_contrast(const ImageArray& x, double factor);
ImageArray adjust_saturation(const ImageArray& x, double factor);
ImageArray adjust_hue(const ImageArray& x, double shift);

}  // namespace synpair
