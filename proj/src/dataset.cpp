#include "roads/dataset.hpp"

#include <algorithm>
#include <set>

#include "roads/errors.hpp"

namespace roads {

namespace fs = std::filesystem;

std::vector<const SampleRecord*> DatasetIndex::split(Split s) const {
  std::vector<const SampleRecord*> out;
  for (const SampleRecord& r : samples) {
    if (r.split == s) out.push_back(&r);
  }
  return out;
}

std::vector<const SampleRecord*> DatasetIndex::split(Split s, int class_index) const {
  std::vector<const SampleRecord*> out;
  for (const SampleRecord& r : samples) {
    if (r.split == s && r.class_index == class_index) out.push_back(&r);
  }
  return out;
}

void DatasetIndex::validate() const {
  std::set<std::string> names(classes.begin(), classes.end());
  if (names.size() != classes.size()) throw DataError("duplicate class names in dataset index");
  for (const SampleRecord& r : samples) {
    const std::string where = r.name.empty() ? r.image_path.string() : r.name;
    if (r.class_index < 0 || r.class_index >= num_classes()) {
      throw DataError("sample " + where + " has class index out of range");
    }
    if (r.label != 0 && r.label != 1) throw DataError("sample " + where + " has label outside {0,1}");
    if (r.split == Split::train && r.label != 0) throw DataError("anomalous sample " + where + " in train split");
    if (r.label == 1 && !r.mask && r.mask_path.empty()) throw DataError("anomalous sample " + where + " has no mask");
    if (r.label == 1 && r.mask) {
      if (r.mask->count() == 0) throw DataError("anomalous sample " + where + " has an empty mask");
      if (r.image && (r.image->height != r.mask->height || r.image->width != r.mask->width)) {
        throw DataError("mask size differs from image size for " + where);
      }
    }
    if (r.label == 0 && r.mask && r.mask->count() != 0) {
      throw DataError("normal sample " + where + " has a non-empty mask");
    }
  }
}

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".tif" || ext == ".tiff";
}

std::vector<fs::path> sorted_entries(const fs::path& dir, bool directories) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (directories ? e.is_directory() : (e.is_regular_file() && is_image_file(e.path()))) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

fs::path find_mask(const fs::path& gt_dir, const std::string& stem) {
  for (const char* suffix : {"_mask.png", ".png"}) {
    fs::path p = gt_dir / (stem + suffix);
    if (fs::is_regular_file(p)) return p;
  }
  return {};
}

}  // namespace

DatasetIndex load_dataset(const fs::path& root, DatasetLayout layout) {
  if (layout != DatasetLayout::mvtec) throw DataError("unsupported dataset layout");
  if (!fs::is_directory(root)) throw DataError("dataset root does not exist: " + root.string());
  DatasetIndex index;
  const auto class_dirs = sorted_entries(root, true);
  for (const fs::path& cdir : class_dirs) {
    const std::string name = cdir.filename().string();
    if (!name.empty() && name.front() == '.') continue;
    index.classes.push_back(name);
  }
  if (index.classes.empty()) throw DataError("no class directories under " + root.string());

  for (int ci = 0; ci < index.num_classes(); ++ci) {
    const fs::path cdir = root / index.classes[static_cast<std::size_t>(ci)];
    const auto train = sorted_entries(cdir / "train" / "good", false);
    if (train.empty()) throw DataError("class " + index.classes[static_cast<std::size_t>(ci)] + " has an empty train split");
    for (const fs::path& p : train) {
      SampleRecord r;
      r.image_path = p;
      r.class_index = ci;
      r.split = Split::train;
      r.name = p.stem().string();
      index.samples.push_back(std::move(r));
    }
    for (const fs::path& ddir : sorted_entries(cdir / "test", true)) {
      const std::string defect = ddir.filename().string();
      const bool normal = defect == "good";
      for (const fs::path& p : sorted_entries(ddir, false)) {
        SampleRecord r;
        r.image_path = p;
        r.class_index = ci;
        r.split = Split::test;
        r.label = normal ? 0 : 1;
        r.defect = defect;
        r.name = p.stem().string();
        if (!normal) {
          r.mask_path = find_mask(cdir / "ground_truth" / defect, r.name);
          if (r.mask_path.empty()) {
            throw DataError("missing ground-truth mask for " + p.string() + " (expected under " +
                            (cdir / "ground_truth" / defect).string() + ")");
          }
        }
        index.samples.push_back(std::move(r));
      }
    }
  }
  index.validate();
  return index;
}

Image load_sample_image(const SampleRecord& sample) {
  if (sample.image) return *sample.image;
  return load_image(sample.image_path);
}

Mask load_sample_mask(const SampleRecord& sample, int height, int width) {
  if (sample.label == 0) return Mask(height, width);
  Mask m = sample.mask ? *sample.mask : load_mask(sample.mask_path);
  if (m.height != height || m.width != width) {
    throw DataError("mask " + sample.mask_path.string() + " is " + std::to_string(m.height) + "x" +
                    std::to_string(m.width) + " but its image is " + std::to_string(height) + "x" +
                    std::to_string(width));
  }
  if (m.count() == 0) throw DataError("empty ground-truth mask for anomalous sample " + sample.name);
  return m;
}

void export_dataset(const DatasetIndex& index, const fs::path& root) {
  index.validate();
  for (const SampleRecord& r : index.samples) {
    const fs::path cdir = root / index.classes[static_cast<std::size_t>(r.class_index)];
    const std::string stem = r.name.empty() ? r.image_path.stem().string() : r.name;
    const Image image = load_sample_image(r);
    if (r.split == Split::train) {
      save_image(image, cdir / "train" / "good" / (stem + ".png"));
      continue;
    }
    save_image(image, cdir / "test" / r.defect / (stem + ".png"));
    if (r.label == 1) save_mask(load_sample_mask(r, image.height, image.width), cdir / "ground_truth" / r.defect / (stem + "_mask.png"));
  }
}

}  // namespace roads
