#include "roads/corruption.hpp"

#include <algorithm>
#include <array>
#include <opencv2/imgproc.hpp>

#include "roads/color.hpp"
#include "roads/errors.hpp"
#include "roads/rng.hpp"

namespace roads {

namespace {

constexpr std::array<double, 5> kBrightness{0.1, 0.2, 0.3, 0.4, 0.5};
constexpr std::array<double, 5> kContrast{0.4, 0.3, 0.2, 0.1, 0.05};
constexpr std::array<double, 5> kNoise{0.08, 0.12, 0.18, 0.26, 0.38};
constexpr std::array<int, 5> kDiskRadius{3, 4, 6, 8, 10};
constexpr std::array<double, 5> kDiskAlias{0.1, 0.5, 0.5, 0.5, 0.5};

Image clipped(Image img) {
  for (double& v : img.data) v = std::clamp(v, 0.0, 1.0);
  return img;
}

}  // namespace

std::string to_string(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::brightness: return "brightness";
    case CorruptionKind::contrast: return "contrast";
    case CorruptionKind::defocus_blur: return "defocus_blur";
    case CorruptionKind::gaussian_noise: return "gaussian_noise";
  }
  return "unknown";
}

CorruptionKind parse_corruption_kind(const std::string& name) {
  for (CorruptionKind k : all_corruption_kinds()) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown corruption kind '" + name +
                    "' (expected brightness, contrast, defocus_blur or gaussian_noise)");
}

const std::vector<CorruptionKind>& all_corruption_kinds() {
  static const std::vector<CorruptionKind> kinds{CorruptionKind::brightness, CorruptionKind::contrast,
                                                 CorruptionKind::defocus_blur, CorruptionKind::gaussian_noise};
  return kinds;
}

void CorruptionSpec::validate() const {
  if (severity < 1 || severity > 5) {
    throw ConfigError("corruption severity must be in 1..5, got " + std::to_string(severity));
  }
  const int k = static_cast<int>(kind);
  if (k < 0 || k > 3) throw ConfigError("corruption kind out of range");
}

double corruption_parameter(CorruptionKind kind, int severity) {
  CorruptionSpec{kind, severity, 0}.validate();
  const std::size_t i = static_cast<std::size_t>(severity - 1);
  switch (kind) {
    case CorruptionKind::brightness: return kBrightness[i];
    case CorruptionKind::contrast: return kContrast[i];
    case CorruptionKind::gaussian_noise: return kNoise[i];
    case CorruptionKind::defocus_blur: return kDiskRadius[i];
  }
  return 0.0;
}

Image add_gaussian_noise(const Image& image, std::span<const double> noise, double scale) {
  if (noise.size() != image.data.size()) throw std::invalid_argument("noise field size differs from image size");
  Image out = image;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += scale * noise[i];
  return clipped(std::move(out));
}

Image add_gaussian_noise(const Image& image, double scale, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> noise(image.data.size());
  for (double& v : noise) v = rng.normal();
  return add_gaussian_noise(image, noise, scale);
}

Image adjust_brightness(const Image& image, double shift) {
  Image out = image;
  if (image.channels < 3) {
    for (double& v : out.data) v += shift;
    return clipped(std::move(out));
  }
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      double h, s, v;
      rgb_to_hsv(image.at(y, x, 0), image.at(y, x, 1), image.at(y, x, 2), h, s, v);
      v = std::clamp(v + shift, 0.0, 1.0);
      hsv_to_rgb(h, s, v, out.at(y, x, 0), out.at(y, x, 1), out.at(y, x, 2));
    }
  }
  return clipped(std::move(out));
}

Image adjust_contrast(const Image& image, double factor) {
  Image out = image;
  const std::size_t pixels = static_cast<std::size_t>(image.height) * image.width;
  for (int c = 0; c < image.channels; ++c) {
    double mean = 0.0;
    for (std::size_t p = 0; p < pixels; ++p) mean += image.data[p * image.channels + c];
    mean /= static_cast<double>(pixels);
    for (std::size_t p = 0; p < pixels; ++p) {
      double& v = out.data[p * image.channels + c];
      v = (v - mean) * factor + mean;
    }
  }
  return clipped(std::move(out));
}

std::vector<double> disk_kernel(int radius, double alias_blur, int& side) {
  const int half = std::max(8, radius);
  side = 2 * half + 1;
  const int ksize = radius <= 8 ? 3 : 5;
  cv::Mat disk(side, side, CV_32F);
  float total = 0.0f;
  for (int y = -half; y <= half; ++y) {
    for (int x = -half; x <= half; ++x) {
      const float v = (x * x + y * y <= radius * radius) ? 1.0f : 0.0f;
      disk.at<float>(y + half, x + half) = v;
      total += v;
    }
  }
  disk /= total;
  cv::Mat blurred;
  cv::GaussianBlur(disk, blurred, cv::Size(ksize, ksize), alias_blur);
  std::vector<double> out(static_cast<std::size_t>(side) * side);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) out[static_cast<std::size_t>(y) * side + x] = blurred.at<float>(y, x);
  }
  return out;
}

Image defocus_blur(const Image& image, int radius, double alias_blur) {
  int side = 0;
  const std::vector<double> k = disk_kernel(radius, alias_blur, side);
  cv::Mat kernel(side, side, CV_64F);
  std::copy(k.begin(), k.end(), kernel.ptr<double>());
  Image out = image;
  cv::Mat plane(image.height, image.width, CV_64F), filtered;
  for (int c = 0; c < image.channels; ++c) {
    for (int y = 0; y < image.height; ++y) {
      for (int x = 0; x < image.width; ++x) plane.at<double>(y, x) = image.at(y, x, c);
    }
    cv::filter2D(plane, filtered, -1, kernel, cv::Point(-1, -1), 0.0, cv::BORDER_REFLECT_101);
    for (int y = 0; y < image.height; ++y) {
      for (int x = 0; x < image.width; ++x) out.at(y, x, c) = filtered.at<double>(y, x);
    }
  }
  return clipped(std::move(out));
}

Image corrupt(const Image& image, const CorruptionSpec& spec) {
  spec.validate();
  const std::size_t i = static_cast<std::size_t>(spec.severity - 1);
  switch (spec.kind) {
    case CorruptionKind::brightness: return adjust_brightness(image, kBrightness[i]);
    case CorruptionKind::contrast: return adjust_contrast(image, kContrast[i]);
    case CorruptionKind::defocus_blur: return defocus_blur(image, kDiskRadius[i], kDiskAlias[i]);
    case CorruptionKind::gaussian_noise: return add_gaussian_noise(image, kNoise[i], spec.seed);
  }
  throw ConfigError("unknown corruption kind");
}

}  // namespace roads
