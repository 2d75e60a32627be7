#pragma once

namespace roads {

// Unit-interval HSV conversions. On hue ties the later channel (b over g over r) wins.
void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v);
void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b);

}  // namespace roads
