#include "roads/image.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "roads/errors.hpp"

namespace roads {

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](std::uint8_t v) { return v != 0; }));
}

Tensor image_to_chw(const Image& image) {
  Tensor t(Shape{image.channels, image.height, image.width});
  const std::size_t plane = static_cast<std::size_t>(image.height) * image.width;
  for (int c = 0; c < image.channels; ++c) {
    for (std::size_t p = 0; p < plane; ++p) t[c * plane + p] = image.data[p * image.channels + c];
  }
  return t;
}

Tensor images_to_batch(std::span<const Image> images) {
  if (images.empty()) throw std::invalid_argument("images_to_batch: empty batch");
  const Image& first = images.front();
  Tensor t(Shape{static_cast<int>(images.size()), first.channels, first.height, first.width});
  const std::size_t per = first.size();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].height != first.height || images[i].width != first.width || images[i].channels != first.channels) {
      throw std::invalid_argument("images_to_batch: images differ in size");
    }
    const Tensor chw = image_to_chw(images[i]);
    std::copy(chw.data().begin(), chw.data().end(), t.ptr() + i * per);
  }
  return t;
}

namespace {

cv::Mat to_mat(const Image& image) {
  cv::Mat m(image.height, image.width, CV_64FC(image.channels));
  std::copy(image.data.begin(), image.data.end(), m.ptr<double>());
  return m;
}

Image from_mat(const cv::Mat& m) {
  cv::Mat d;
  m.convertTo(d, CV_64F);
  Image out(d.rows, d.cols, d.channels());
  for (int y = 0; y < d.rows; ++y) {
    const double* row = d.ptr<double>(y);
    std::copy(row, row + static_cast<std::size_t>(d.cols) * d.channels(),
              out.data.begin() + static_cast<std::ptrdiff_t>(y) * d.cols * d.channels());
  }
  return out;
}

}  // namespace

Image resize_image(const Image& image, int height, int width) {
  if (image.height == height && image.width == width) return image;
  cv::Mat out;
  const bool shrink = height < image.height && width < image.width;
  cv::resize(to_mat(image), out, cv::Size(width, height), 0, 0, shrink ? cv::INTER_AREA : cv::INTER_LINEAR);
  Image r = from_mat(out);
  for (double& v : r.data) v = std::clamp(v, 0.0, 1.0);
  return r;
}

Mask resize_mask(const Mask& mask, int height, int width) {
  if (mask.height == height && mask.width == width) return mask;
  Mask out(height, width);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(mask.height - 1, static_cast<int>((y + 0.5) * mask.height / height));
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(mask.width - 1, static_cast<int>((x + 0.5) * mask.width / width));
      out.at(y, x) = mask.at(sy, sx) ? 1 : 0;
    }
  }
  return out;
}

Image quantize_8bit(const Image& image) {
  Image out = image;
  for (double& v : out.data) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
  return out;
}

Image load_image(const std::filesystem::path& path) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) throw DataError("cannot read image " + path.string());
  const double scale = raw.depth() == CV_16U ? 1.0 / 65535.0 : 1.0 / 255.0;
  cv::Mat rgb;
  if (raw.channels() == 1) {
    cv::cvtColor(raw, rgb, cv::COLOR_GRAY2RGB);
  } else if (raw.channels() == 4) {
    cv::cvtColor(raw, rgb, cv::COLOR_BGRA2RGB);
  } else {
    cv::cvtColor(raw, rgb, cv::COLOR_BGR2RGB);
  }
  Image out = from_mat(rgb);
  for (double& v : out.data) v *= scale;
  return out;
}

Mask load_mask(const std::filesystem::path& path) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (raw.empty()) throw DataError("cannot read mask " + path.string());
  Mask out(raw.rows, raw.cols);
  for (int y = 0; y < raw.rows; ++y) {
    for (int x = 0; x < raw.cols; ++x) out.at(y, x) = raw.at<std::uint8_t>(y, x) != 0 ? 1 : 0;
  }
  return out;
}

void save_image(const Image& image, const std::filesystem::path& path) {
  cv::Mat m8(image.height, image.width, CV_8UC(image.channels));
  for (std::size_t i = 0; i < image.data.size(); ++i) {
    m8.data[i] = static_cast<std::uint8_t>(std::lround(std::clamp(image.data[i], 0.0, 1.0) * 255.0));
  }
  cv::Mat bgr;
  if (image.channels == 3) {
    cv::cvtColor(m8, bgr, cv::COLOR_RGB2BGR);
  } else {
    bgr = m8;
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), bgr)) throw DataError("cannot write image " + path.string());
}

void save_mask(const Mask& mask, const std::filesystem::path& path) {
  cv::Mat m(mask.height, mask.width, CV_8UC1);
  for (std::size_t i = 0; i < mask.data.size(); ++i) m.data[i] = mask.data[i] ? 255 : 0;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), m)) throw DataError("cannot write mask " + path.string());
}

}  // namespace roads
