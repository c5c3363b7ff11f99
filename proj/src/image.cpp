#include "synpair/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <vector>

namespace synpair {

namespace {

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

void write_raw(const std::string& path, std::uint32_t format, int height, int width,
               const std::vector<std::uint8_t>& bytes) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  if (!png_image_write_to_file(&image, path.c_str(), 0, bytes.data(), 0, nullptr))
    throw IoError("cannot write PNG '" + path + "': " + image.message);
}

}  // namespace

void write_png(const std::string& path, const ImageArray& img) {
  if (img.channels() != 3) throw std::invalid_argument("write_png: expected 3 channels");
  const int p = img.height * img.width;
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(p) * 3);
  for (int i = 0; i < p; ++i)
    for (int c = 0; c < 3; ++c) bytes[3 * i + c] = to_byte(img.pixels(c, i));
  write_raw(path, PNG_FORMAT_RGB, img.height, img.width, bytes);
}

void write_png_gray(const std::string& path, const Eigen::Ref<const Eigen::MatrixXd>& map) {
  const auto h = static_cast<int>(map.rows()), w = static_cast<int>(map.cols());
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) bytes[y * w + x] = to_byte(static_cast<float>(map(y, x)));
  write_raw(path, PNG_FORMAT_GRAY, h, w, bytes);
}

ImageArray read_png(const std::string& path) {
  if (!std::filesystem::exists(path)) throw DataError("missing image file: " + path);
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw DataError("corrupt image '" + path + "': " + image.message);
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, bytes.data(), 0, nullptr)) {
    png_image_free(&image);
    throw DataError("corrupt image '" + path + "': " + image.message);
  }
  ImageArray out(3, static_cast<int>(image.height), static_cast<int>(image.width));
  const int p = out.height * out.width;
  for (int i = 0; i < p; ++i)
    for (int c = 0; c < 3; ++c) out.pixels(c, i) = bytes[3 * i + c] / 255.0f;
  return out;
}

ImageArray resize(const ImageArray& img, int height, int width) {
  if (height == img.height && width == img.width) return img;
  ImageArray out(img.channels(), height, width);
  const double sy = static_cast<double>(img.height) / height, sx = static_cast<double>(img.width) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
    const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, img.height - 1);
    const float ty = static_cast<float>(fy - y0);
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
      const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, img.width - 1);
      const float tx = static_cast<float>(fx - x0);
      for (int c = 0; c < img.channels(); ++c) {
        const float top = (1 - tx) * img.at(c, y0, x0) + tx * img.at(c, y0, x1);
        const float bot = (1 - tx) * img.at(c, y1, x0) + tx * img.at(c, y1, x1);
        out.at(c, y, x) = (1 - ty) * top + ty * bot;
      }
    }
  }
  return out;
}

ImageArray hconcat(const std::vector<ImageArray>& parts) {
  if (parts.empty()) throw std::invalid_argument("hconcat: nothing to join");
  int width = 0;
  for (const auto& p : parts) {
    if (p.height != parts[0].height || p.channels() != parts[0].channels())
      throw std::invalid_argument("hconcat: heights or channels differ");
    width += p.width;
  }
  ImageArray out(parts[0].channels(), parts[0].height, width);
  int x0 = 0;
  for (const auto& p : parts) {
    for (int c = 0; c < p.channels(); ++c)
      for (int y = 0; y < p.height; ++y)
        for (int x = 0; x < p.width; ++x) out.at(c, y, x0 + x) = p.at(c, y, x);
    x0 += p.width;
  }
  return out;
}

}  // namespace synpair
