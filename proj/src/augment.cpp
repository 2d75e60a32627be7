#include "roads/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "roads/color.hpp"
#include "roads/rng.hpp"

namespace roads {

Image posterize(const Image& image, int bits) {
  if (bits < 1 || bits > 8) throw std::invalid_argument("posterize: bits must be in 1..8");
  const int drop = 8 - bits;
  Image out = image;
  for (double& v : out.data) {
    const int level = static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    v = ((level >> drop) << drop) / 255.0;
  }
  return out;
}

Image solarize(const Image& image, double threshold) {
  Image out = image;
  for (double& v : out.data) {
    if (v > threshold) v = 1.0 - v;
  }
  return out;
}

Image color_jitter(const Image& image, double hue_shift, double saturation_factor) {
  if (image.channels < 3) return image;
  Image out = image;
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      double h, s, v;
      rgb_to_hsv(image.at(y, x, 0), image.at(y, x, 1), image.at(y, x, 2), h, s, v);
      h = std::fmod(h + hue_shift + 1.0, 1.0);
      s = std::clamp(s * saturation_factor, 0.0, 1.0);
      hsv_to_rgb(h, s, v, out.at(y, x, 0), out.at(y, x, 1), out.at(y, x, 2));
    }
  }
  for (double& v : out.data) v = std::clamp(v, 0.0, 1.0);
  return out;
}

AugmentParams sample_augment_params(std::uint64_t seed) {
  Rng rng(seed);
  AugmentParams p;
  // Non-empty subset of the three operators.
  const int subset = static_cast<int>(rng.uniform_int(1, 7));
  p.jitter = subset & 1;
  p.posterize = subset & 2;
  p.solarize = subset & 4;
  p.hue_shift = rng.uniform(-0.15, 0.15);
  p.saturation_factor = rng.uniform(0.5, 1.5);
  p.bits = static_cast<int>(rng.uniform_int(2, 5));
  p.threshold = rng.uniform(0.5, 0.9);
  return p;
}

Image apply_augment(const Image& image, const AugmentParams& params) {
  Image out = image;
  if (params.jitter) out = color_jitter(out, params.hue_shift, params.saturation_factor);
  if (params.posterize) out = posterize(out, params.bits);
  if (params.solarize) out = solarize(out, params.threshold);
  return out;
}

Image augment_ood(const Image& image, std::uint64_t seed) {
  return apply_augment(image, sample_augment_params(seed));
}

}  // namespace roads
