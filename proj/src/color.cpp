#include "roads/color.hpp"

#include <algorithm>
#include <cmath>

namespace roads {

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  v = std::max({r, g, b});
  const double delta = v - std::min({r, g, b});
  s = v > 0.0 ? delta / v : 0.0;
  if (delta == 0.0) {
    h = 0.0;
    return;
  }
  if (b == v) {
    h = 4.0 + (r - g) / delta;
  } else if (g == v) {
    h = 2.0 + (b - r) / delta;
  } else {
    h = (g - b) / delta;
  }
  h = std::fmod(h / 6.0, 1.0);
  if (h < 0.0) h += 1.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  const double h6 = h * 6.0;
  const double fl = std::floor(h6);
  const double f = h6 - fl;
  const int i = ((static_cast<int>(fl) % 6) + 6) % 6;
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - f * s);
  const double t = v * (1.0 - (1.0 - f) * s);
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

}  // namespace roads
