#include "roads/toy_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "roads/color.hpp"
#include "roads/errors.hpp"

namespace roads {

std::string to_string(DefectKind kind) {
  switch (kind) {
    case DefectKind::scratch: return "scratch";
    case DefectKind::blob: return "blob";
    case DefectKind::hole: return "hole";
  }
  return "unknown";
}

DefectKind parse_defect_kind(const std::string& name) {
  if (name == "scratch") return DefectKind::scratch;
  if (name == "blob") return DefectKind::blob;
  if (name == "hole") return DefectKind::hole;
  throw ConfigError("unknown defect kind '" + name + "' (expected scratch, blob or hole)");
}

void ToySpec::validate() const {
  if (n_classes < 2) throw ConfigError("toy spec: n_classes must be >= 2");
  if (image_size < 32) throw ConfigError("toy spec: image_size must be >= 32");
  if (n_train < 1 || n_test_normal < 1 || n_test_anomalous < 1) throw ConfigError("toy spec: counts must be >= 1");
  if (defect_kinds.empty()) throw ConfigError("toy spec: at least one defect kind required");
}

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Rgb {
  double r, g, b;
};

Rgb palette_color(int class_index, double hue_offset, double sat, double val) {
  const double hue = std::fmod(class_index * 0.6180339887 + hue_offset + 1.0, 1.0);
  double r, g, b;
  hsv_to_rgb(hue, sat, val, r, g, b);
  return {r, g, b};
}

// Texture intensity in [0, 1] for pixel (x, y).
struct Texture {
  int family;
  double a, b, c, d, e;  // family-specific parameters

  double operator()(double x, double y, int size) const {
    const double u = x / size, v = y / size;
    switch (family) {
      case 0: {  // oriented stripes
        return 0.5 + 0.5 * std::sin(kTwoPi * a * (u * std::cos(b) + v * std::sin(b)) + c);
      }
      case 1: {  // checkerboard
        const int cx = static_cast<int>(std::floor((x + b) / a));
        const int cy = static_cast<int>(std::floor((y + c) / a));
        return ((cx + cy) % 2 + 2) % 2 == 0 ? 0.9 : 0.1;
      }
      case 2: {  // dot lattice
        const double fx = std::fmod(x + b + 100 * a, a) - a / 2;
        const double fy = std::fmod(y + c + 100 * a, a) - a / 2;
        const double r = std::sqrt(fx * fx + fy * fy);
        return std::clamp(0.3 * a - r + 0.5, 0.0, 1.0);
      }
      case 3: {  // concentric rings
        const double r = std::hypot(x - b, y - c);
        return 0.5 + 0.5 * std::cos(kTwoPi * r / a);
      }
      default: {  // wood grain
        return 0.5 + 0.45 * std::sin(kTwoPi * (a * u + c + 0.35 * std::sin(kTwoPi * (b * v + d))) + e * v);
      }
    }
  }
};

Texture sample_texture(int class_index, int size, Rng& rng) {
  const int family = class_index % 5;
  const int variant = class_index / 5;
  Texture t{family, 0, 0, 0, 0, 0};
  switch (family) {
    case 0:
      t.a = rng.uniform(3.5, 4.5);
      t.b = 0.5 + 0.9 * variant + rng.uniform(-0.1, 0.1);
      t.c = rng.uniform(0.0, kTwoPi);
      break;
    case 1:
      t.a = size / 32.0 * rng.uniform(6.0, 8.0);
      t.b = rng.uniform(0.0, t.a * 2);
      t.c = rng.uniform(0.0, t.a * 2);
      break;
    case 2:
      t.a = size / 32.0 * rng.uniform(7.0, 9.0);
      t.b = rng.uniform(0.0, t.a);
      t.c = rng.uniform(0.0, t.a);
      break;
    case 3:
      t.a = size / 32.0 * rng.uniform(5.0, 7.0);
      t.b = size / 2.0 + rng.uniform(-3.0, 3.0);
      t.c = size / 2.0 + rng.uniform(-3.0, 3.0);
      break;
    default:
      t.a = rng.uniform(1.5, 2.5);
      t.b = rng.uniform(0.8, 1.4);
      t.c = rng.uniform(0.0, 1.0);
      t.d = rng.uniform(0.0, 1.0);
      t.e = rng.uniform(-0.5, 0.5);
      break;
  }
  return t;
}

double point_segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double dx = bx - ax, dy = by - ay;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(px - (ax + t * dx), py - (ay + t * dy));
}

double local_luma(const Image& img, double cx, double cy, double radius) {
  double s = 0.0;
  int n = 0;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (std::hypot(x - cx, y - cy) > radius) continue;
      s += (img.at(y, x, 0) + img.at(y, x, 1) + img.at(y, x, 2)) / 3.0;
      ++n;
    }
  }
  return n ? s / n : 0.5;
}

}  // namespace

Image render_toy_normal(int class_index, int image_size, Rng& rng) {
  const Texture tex = sample_texture(class_index, image_size, rng);
  const int variant = class_index / 5;
  const double hue_shift = 0.13 * variant;
  const double gain = rng.uniform(0.96, 1.04);
  const Rgb fg = palette_color(class_index, hue_shift, 0.65, 0.85);
  const Rgb bg = palette_color(class_index, hue_shift + 0.08, 0.55, 0.35);
  Image img(image_size, image_size, 3);
  for (int y = 0; y < image_size; ++y) {
    for (int x = 0; x < image_size; ++x) {
      const double t = tex(x + 0.5, y + 0.5, image_size);
      const double rgb[3] = {bg.r + t * (fg.r - bg.r), bg.g + t * (fg.g - bg.g), bg.b + t * (fg.b - bg.b)};
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = std::clamp(gain * rgb[c] + rng.normal(0.0, 0.01), 0.0, 1.0);
    }
  }
  return quantize_8bit(img);
}

Defect inject_defect(const Image& normal, DefectKind kind, Rng& rng) {
  const int size = std::min(normal.height, normal.width);
  const double s = size / 32.0;
  Defect out{normal, Mask(normal.height, normal.width)};
  const double cx = rng.uniform(0.2, 0.8) * normal.width;
  const double cy = rng.uniform(0.2, 0.8) * normal.height;
  // Per-pixel blend weight toward the defect colour.
  std::vector<double> alpha(static_cast<std::size_t>(normal.height) * normal.width, 0.0);
  double color[3] = {0, 0, 0};

  switch (kind) {
    case DefectKind::scratch: {
      const double angle = rng.uniform(0.0, std::numbers::pi);
      const double half_len = 0.5 * rng.uniform(0.4, 0.6) * size;
      const double half_width = rng.uniform(0.9, 1.4) * s;
      const double ax = cx - half_len * std::cos(angle), ay = cy - half_len * std::sin(angle);
      const double bx = cx + half_len * std::cos(angle), by = cy + half_len * std::sin(angle);
      const double tone = local_luma(normal, cx, cy, half_len) > 0.5 ? 0.05 : 0.95;
      color[0] = color[1] = color[2] = tone;
      for (int y = 0; y < normal.height; ++y) {
        for (int x = 0; x < normal.width; ++x) {
          const double d = point_segment_distance(x + 0.5, y + 0.5, ax, ay, bx, by);
          alpha[static_cast<std::size_t>(y) * normal.width + x] = std::clamp(half_width + 0.5 - d, 0.0, 1.0);
        }
      }
      break;
    }
    case DefectKind::blob: {
      const double sigma = rng.uniform(2.4, 3.4) * s;
      const double aspect = rng.uniform(0.7, 1.4);
      const double hue = rng.uniform(0.0, 1.0);
      hsv_to_rgb(hue, 0.9, rng.uniform(0.6, 0.95), color[0], color[1], color[2]);
      for (int y = 0; y < normal.height; ++y) {
        for (int x = 0; x < normal.width; ++x) {
          const double dx = (x + 0.5 - cx) * aspect, dy = (y + 0.5 - cy) / aspect;
          const double g = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
          if (g > 0.3) alpha[static_cast<std::size_t>(y) * normal.width + x] = 0.75;
        }
      }
      break;
    }
    case DefectKind::hole: {
      const double radius = rng.uniform(3.0, 4.5) * s;
      color[0] = color[1] = color[2] = 0.03;
      for (int y = 0; y < normal.height; ++y) {
        for (int x = 0; x < normal.width; ++x) {
          if (std::hypot(x + 0.5 - cx, y + 0.5 - cy) <= radius) {
            alpha[static_cast<std::size_t>(y) * normal.width + x] = 1.0;
          }
        }
      }
      break;
    }
  }

  for (int y = 0; y < normal.height; ++y) {
    for (int x = 0; x < normal.width; ++x) {
      const double a = alpha[static_cast<std::size_t>(y) * normal.width + x];
      if (a <= 0.0) continue;
      out.mask.at(y, x) = 1;
      for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = (1 - a) * normal.at(y, x, c) + a * color[c];
    }
  }
  // Guarantee a non-empty mask even for a defect centred on a sub-pixel gap.
  if (out.mask.count() == 0) {
    const int y = std::clamp(static_cast<int>(cy), 0, normal.height - 1);
    const int x = std::clamp(static_cast<int>(cx), 0, normal.width - 1);
    out.mask.at(y, x) = 1;
    for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = color[c];
  }
  out.image = quantize_8bit(out.image);
  return out;
}

DatasetIndex generate_toy_dataset(const ToySpec& spec) {
  spec.validate();
  DatasetIndex index;
  static const char* kNames[] = {"stripes", "checker", "dots", "rings", "grain"};
  for (int c = 0; c < spec.n_classes; ++c) {
    char name[32];
    std::snprintf(name, sizeof(name), "%02d_%s", c, kNames[c % 5]);
    index.classes.emplace_back(name);
  }
  std::uint64_t counter = 0;
  auto make_name = [](int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%03d", i);
    return std::string(buf);
  };
  for (int c = 0; c < spec.n_classes; ++c) {
    for (int i = 0; i < spec.n_train; ++i) {
      Rng rng(mix_seed(spec.seed, counter++));
      SampleRecord r;
      r.image = std::make_shared<const Image>(render_toy_normal(c, spec.image_size, rng));
      r.class_index = c;
      r.split = Split::train;
      r.name = make_name(i);
      index.samples.push_back(std::move(r));
    }
    for (int i = 0; i < spec.n_test_normal; ++i) {
      Rng rng(mix_seed(spec.seed, counter++));
      SampleRecord r;
      r.image = std::make_shared<const Image>(render_toy_normal(c, spec.image_size, rng));
      r.class_index = c;
      r.split = Split::test;
      r.name = make_name(i);
      index.samples.push_back(std::move(r));
    }
    for (int i = 0; i < spec.n_test_anomalous; ++i) {
      Rng rng(mix_seed(spec.seed, counter++));
      const DefectKind kind = spec.defect_kinds[static_cast<std::size_t>(i) % spec.defect_kinds.size()];
      const Image normal = render_toy_normal(c, spec.image_size, rng);
      Defect d = inject_defect(normal, kind, rng);
      SampleRecord r;
      r.image = std::make_shared<const Image>(std::move(d.image));
      r.mask = std::make_shared<const Mask>(std::move(d.mask));
      r.class_index = c;
      r.split = Split::test;
      r.label = 1;
      r.defect = to_string(kind);
      r.name = make_name(i);
      index.samples.push_back(std::move(r));
    }
  }
  index.validate();
  return index;
}

}  // namespace roads
