#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "roads/tensor.hpp"

namespace roads {

// Interleaved (height, width, channels) image with values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, int c, double fill = 0.0)
      : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

  double& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  double at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  std::size_t size() const { return data.size(); }

  friend bool operator==(const Image&, const Image&) = default;
};

// Binary (height, width) grid; nonzero marks an anomalous pixel.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w, 0) {}

  std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::size_t count() const;

  friend bool operator==(const Mask&, const Mask&) = default;
};

// (C, H, W) tensor for a single image and (B, C, H, W) for a batch.
Tensor image_to_chw(const Image& image);
Tensor images_to_batch(std::span<const Image> images);

Image resize_image(const Image& image, int height, int width);
Mask resize_mask(const Mask& mask, int height, int width);
// Round-trip through 8-bit storage.
Image quantize_8bit(const Image& image);

// PNG I/O. Images are always returned as 3-channel RGB.
Image load_image(const std::filesystem::path& path);
Mask load_mask(const std::filesystem::path& path);
void save_image(const Image& image, const std::filesystem::path& path);
void save_mask(const Mask& mask, const std::filesystem::path& path);

}  // namespace roads
