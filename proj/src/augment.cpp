#include "synpair/augment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

namespace synpair {

namespace {

void check_p(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0,1]");
}

void clamp01(ImageArray& img) { img.pixels = img.pixels.cwiseMax(0.0f).cwiseMin(1.0f); }

Eigen::RowVectorXf luminance(const ImageArray& x) {
  return 0.299f * x.pixels.row(0) + 0.587f * x.pixels.row(1) + 0.114f * x.pixels.row(2);
}

int random_int(Rng& rng, int lo, int hi) {  // inclusive
  return lo + static_cast<int>(uniform01(rng) * (hi - lo + 1));
}

}  // namespace

void AugmentConfig::validate() const {
  if (!(crop_scale_min > 0.0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0))
    throw ConfigError("crop scale range must satisfy 0 < min <= max <= 1");
  if (!(crop_ratio_min > 0.0 && crop_ratio_min <= crop_ratio_max)) throw ConfigError("crop ratio range invalid");
  check_p(flip_p, "flip_p");
  check_p(jitter_p, "jitter_p");
  check_p(grayscale_p, "grayscale_p");
  check_p(blur_p, "blur_p");
  if (brightness < 0 || contrast < 0 || saturation < 0) throw ConfigError("jitter strengths must be >= 0");
  if (!(hue >= 0.0 && hue <= 0.5)) throw ConfigError("hue jitter must lie in [0,0.5]");
  if (!(blur_sigma_min > 0.0 && blur_sigma_min <= blur_sigma_max)) throw ConfigError("blur sigma range invalid");
  if (blur_kernel < 1 || blur_kernel % 2 == 0) throw ConfigError("blur kernel must be odd and positive");
}

AugmentConfig AugmentConfig::identity() {
  AugmentConfig c;
  c.crop = c.flip = c.jitter = c.grayscale = c.blur = false;
  return c;
}

CropBox sample_crop(int height, int width, const AugmentConfig& cfg, Rng& rng) {
  const double area = static_cast<double>(height) * width;
  const double log_lo = std::log(cfg.crop_ratio_min), log_hi = std::log(cfg.crop_ratio_max);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * uniform(rng, cfg.crop_scale_min, cfg.crop_scale_max);
    const double ratio = std::exp(uniform(rng, log_lo, log_hi));
    const int w = static_cast<int>(std::lround(std::sqrt(target * ratio)));
    const int h = static_cast<int>(std::lround(std::sqrt(target / ratio)));
    if (w > 0 && h > 0 && w <= width && h <= height) {
      CropBox box{random_int(rng, 0, height - h), random_int(rng, 0, width - w), h, w};
      return box;
    }
  }
  // Fallback: central crop at the closest admissible aspect ratio.
  const double in_ratio = static_cast<double>(width) / height;
  int w = width, h = height;
  if (in_ratio < cfg.crop_ratio_min) {
    h = std::max(1, static_cast<int>(std::lround(w / cfg.crop_ratio_min)));
  } else if (in_ratio > cfg.crop_ratio_max) {
    w = std::max(1, static_cast<int>(std::lround(h * cfg.crop_ratio_max)));
  }
  return {(height - h) / 2, (width - w) / 2, h, w};
}

ImageArray crop_resize(const ImageArray& x, const CropBox& box, int out_h, int out_w) {
  if (box.height <= 0 || box.width <= 0) throw std::invalid_argument("crop_resize: empty crop");
  ImageArray crop(x.channels(), box.height, box.width);
  for (int c = 0; c < x.channels(); ++c)
    for (int y = 0; y < box.height; ++y)
      for (int xx = 0; xx < box.width; ++xx) crop.at(c, y, xx) = x.at(c, box.top + y, box.left + xx);
  return resize(crop, out_h, out_w);
}

ImageArray flip_horizontal(const ImageArray& x) {
  ImageArray out = x;
  for (int c = 0; c < x.channels(); ++c)
    for (int y = 0; y < x.height; ++y)
      for (int xx = 0; xx < x.width; ++xx) out.at(c, y, xx) = x.at(c, y, x.width - 1 - xx);
  return out;
}

ImageArray to_grayscale(const ImageArray& x) {
  ImageArray out = x;
  const Eigen::RowVectorXf l = luminance(x);
  for (int c = 0; c < out.channels(); ++c) out.pixels.row(c) = l;
  return out;
}

ImageArray adjust_brightness(const ImageArray& x, double factor) {
  ImageArray out = x;
  out.pixels *= static_cast<float>(factor);
  clamp01(out);
  return out;
}

ImageArray adjust_contrast(const ImageArray& x, double factor) {
  ImageArray out = x;
  const float mean = luminance(x).mean();
  const auto f = static_cast<float>(factor);
  out.pixels = (f * x.pixels.array() + (1.0f - f) * mean).matrix();
  clamp01(out);
  return out;
}

ImageArray adjust_saturation(const ImageArray& x, double factor) {
  ImageArray out = x;
  const Eigen::RowVectorXf l = luminance(x);
  const auto f = static_cast<float>(factor);
  for (int c = 0; c < out.channels(); ++c) out.pixels.row(c) = f * x.pixels.row(c) + (1.0f - f) * l;
  clamp01(out);
  return out;
}

ImageArray adjust_hue(const ImageArray& x, double shift) {
  ImageArray out = x;
  const int p = x.height * x.width;
  for (int i = 0; i < p; ++i) {
    const double r = x.pixels(0, i), g = x.pixels(1, i), b = x.pixels(2, i);
    const double mx = std::max({r, g, b}), mn = std::min({r, g, b}), d = mx - mn;
    double h = 0.0;
    if (d > 0) {
      if (mx == r) h = std::fmod((g - b) / d, 6.0);
      else if (mx == g) h = (b - r) / d + 2.0;
      else h = (r - g) / d + 4.0;
      h /= 6.0;
    }
    const double s = mx > 0 ? d / mx : 0.0, v = mx;
    h += shift;
    h -= std::floor(h);
    const double hh = h * 6.0, f = hh - std::floor(hh);
    const double pp = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    std::array<double, 3> rgb;
    switch (static_cast<int>(hh) % 6) {
      case 0: rgb = {v, t, pp}; break;
      case 1: rgb = {q, v, pp}; break;
      case 2: rgb = {pp, v, t}; break;
      case 3: rgb = {pp, q, v}; break;
      case 4: rgb = {t, pp, v}; break;
      default: rgb = {v, pp, q};
    }
    for (int c = 0; c < 3; ++c) out.pixels(c, i) = static_cast<float>(rgb[c]);
  }
  clamp01(out);
  return out;
}

ImageArray gaussian_blur(const ImageArray& x, double sigma, int kernel) {
  const int r = kernel / 2;
  std::vector<float> k(kernel);
  double total = 0;
  for (int i = -r; i <= r; ++i) total += k[i + r] = static_cast<float>(std::exp(-0.5 * i * i / (sigma * sigma)));
  for (auto& v : k) v = static_cast<float>(v / total);
  auto reflect = [](int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * n - 2 - i;
    return i;
  };
  ImageArray tmp = x, out = x;
  for (int c = 0; c < x.channels(); ++c) {
    for (int y = 0; y < x.height; ++y)
      for (int xx = 0; xx < x.width; ++xx) {
        float s = 0;
        for (int i = -r; i <= r; ++i) s += k[i + r] * x.at(c, y, reflect(xx + i, x.width));
        tmp.at(c, y, xx) = s;
      }
    for (int y = 0; y < x.height; ++y)
      for (int xx = 0; xx < x.width; ++xx) {
        float s = 0;
        for (int i = -r; i <= r; ++i) s += k[i + r] * tmp.at(c, reflect(y + i, x.height), xx);
        out.at(c, y, xx) = s;
      }
  }
  clamp01(out);
  return out;
}

ImageArray augment(const ImageArray& x, const AugmentConfig& cfg, Rng& rng) {
  ImageArray img = x;
  if (cfg.crop) img = crop_resize(img, sample_crop(x.height, x.width, cfg, rng), x.height, x.width);
  if (cfg.flip && bernoulli(rng, cfg.flip_p)) img = flip_horizontal(img);
  if (cfg.jitter && bernoulli(rng, cfg.jitter_p)) {
    const double b = uniform(rng, std::max(0.0, 1 - cfg.brightness), 1 + cfg.brightness);
    const double c = uniform(rng, std::max(0.0, 1 - cfg.contrast), 1 + cfg.contrast);
    const double s = uniform(rng, std::max(0.0, 1 - cfg.saturation), 1 + cfg.saturation);
    const double h = uniform(rng, -cfg.hue, cfg.hue);
    std::array<int, 4> order{0, 1, 2, 3};
    for (int i = 3; i > 0; --i) std::swap(order[i], order[random_int(rng, 0, i)]);
    for (int op : order) {
      switch (op) {
        case 0: img = adjust_brightness(img, b); break;
        case 1: img = adjust_contrast(img, c); break;
        case 2: img = adjust_saturation(img, s); break;
        default: img = adjust_hue(img, h);
      }
    }
  }
  if (cfg.grayscale && bernoulli(rng, cfg.grayscale_p)) img = to_grayscale(img);
  if (cfg.blur && bernoulli(rng, cfg.blur_p))
    img = gaussian_blur(img, uniform(rng, cfg.blur_sigma_min, cfg.blur_sigma_max), cfg.blur_kernel);
  clamp01(img);
  return img;
}

ViewPair make_views(const ImageArray& x, const AugmentConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  ViewPair v;
  v.view1 = augment(x, cfg, rng);
  v.view2 = augment(x, cfg, rng);
  v.source = x;
  return v;
}

}  // namespace synpair
