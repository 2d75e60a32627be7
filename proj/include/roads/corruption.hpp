#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "roads/image.hpp"

namespace roads {

enum class CorruptionKind { brightness, contrast, defocus_blur, gaussian_noise };

std::string to_string(CorruptionKind kind);
// Throws ConfigError for names outside the four supported kinds.
CorruptionKind parse_corruption_kind(const std::string& name);
const std::vector<CorruptionKind>& all_corruption_kinds();

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::gaussian_noise;
  int severity = 3;  // 1..5
  std::uint64_t seed = 0;

  void validate() const;
};

// Severity-table parameter: brightness shift, contrast factor, noise std, or disk radius.
double corruption_parameter(CorruptionKind kind, int severity);

// Clipped to [0,1]. Only gaussian_noise draws randomness, from spec.seed.
Image corrupt(const Image& image, const CorruptionSpec& spec);

// x + scale * noise, clipped. noise holds one standard-normal draw per stored value.
Image add_gaussian_noise(const Image& image, std::span<const double> noise, double scale);
Image add_gaussian_noise(const Image& image, double scale, std::uint64_t seed);

Image adjust_brightness(const Image& image, double shift);
Image adjust_contrast(const Image& image, double factor);
// Anti-aliased disk kernel, row-major, side length 2 * max(8, radius) + 1.
// Sums to 1 only while the disk clears the kernel border (radius < 8).
std::vector<double> disk_kernel(int radius, double alias_blur, int& side);
Image defocus_blur(const Image& image, int radius, double alias_blur);

}  // namespace roads
