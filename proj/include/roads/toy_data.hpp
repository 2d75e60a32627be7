#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "roads/dataset.hpp"
#include "roads/rng.hpp"

namespace roads {

enum class DefectKind { scratch, blob, hole };

std::string to_string(DefectKind kind);
DefectKind parse_defect_kind(const std::string& name);

// Procedural multi-class defect dataset, a desk-scale stand-in for MVTec-AD.
struct ToySpec {
  int n_classes = 4;
  int image_size = 32;
  int n_train = 200;
  int n_test_normal = 20;
  int n_test_anomalous = 20;
  std::vector<DefectKind> defect_kinds{DefectKind::scratch, DefectKind::blob, DefectKind::hole};
  std::uint64_t seed = 0;

  void validate() const;
};

// Class c is texture family c % 5 with a class-specific palette.
Image render_toy_normal(int class_index, int image_size, Rng& rng);

struct Defect {
  Image image;
  Mask mask;
};
// Injects one localized defect; the mask marks every altered pixel.
Defect inject_defect(const Image& normal, DefectKind kind, Rng& rng);

// Deterministic in spec.seed. Images are held in memory, quantized to 8 bits.
DatasetIndex generate_toy_dataset(const ToySpec& spec);

}  // namespace roads
