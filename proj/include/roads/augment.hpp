#pragma once

#include <cstdint>

#include "roads/image.hpp"

namespace roads {

// Point-wise colour operators only; none of them blurs or adds noise.
Image posterize(const Image& image, int bits);
Image solarize(const Image& image, double threshold);
Image color_jitter(const Image& image, double hue_shift, double saturation_factor);

struct AugmentParams {
  bool jitter = false;
  double hue_shift = 0.0;
  double saturation_factor = 1.0;
  bool posterize = false;
  int bits = 8;
  bool solarize = false;
  double threshold = 1.0;
};

// At least one operator is enabled.
AugmentParams sample_augment_params(std::uint64_t seed);
Image apply_augment(const Image& image, const AugmentParams& params);
Image augment_ood(const Image& image, std::uint64_t seed);

}  // namespace roads
