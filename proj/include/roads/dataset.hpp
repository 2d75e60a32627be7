#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "roads/image.hpp"

namespace roads {

enum class Split { train, test };

struct SampleRecord {
  // Exactly one of image_path / image is set.
  std::filesystem::path image_path;
  std::shared_ptr<const Image> image;
  int class_index = 0;
  Split split = Split::train;
  int label = 0;  // 0 normal, 1 anomalous
  std::string defect = "good";
  std::filesystem::path mask_path;
  std::shared_ptr<const Mask> mask;
  std::string name;  // file stem, unique within (class, split, defect)
};

struct DatasetIndex {
  std::vector<std::string> classes;
  std::vector<SampleRecord> samples;

  int num_classes() const { return static_cast<int>(classes.size()); }
  std::vector<const SampleRecord*> split(Split s) const;
  std::vector<const SampleRecord*> split(Split s, int class_index) const;
  // Throws DataError on any violated index invariant.
  void validate() const;
};

enum class DatasetLayout { mvtec };

// Reads class/train/good, class/test/<defect>, class/ground_truth/<defect>.
// Classes are indexed in lexicographic directory order.
DatasetIndex load_dataset(const std::filesystem::path& root, DatasetLayout layout = DatasetLayout::mvtec);

Image load_sample_image(const SampleRecord& sample);
// Ground-truth mask at the image's native size; all-zero for normal samples.
Mask load_sample_mask(const SampleRecord& sample, int height, int width);

// Writes the index (images and masks) in the layout load_dataset reads.
void export_dataset(const DatasetIndex& index, const std::filesystem::path& root);

}  // namespace roads
