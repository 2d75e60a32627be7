#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "roads/corruption.hpp"
#include "roads/dataset.hpp"
#include "roads/model.hpp"

namespace roads {

struct AnomalyMap {
  int height = 0;
  int width = 0;
  std::vector<double> values;  // row-major
  double image_score = 0.0;

  double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

struct AnomalyMapOptions {
  double sigma = 4.0;  // <= 0 disables smoothing
};

// Per level 1 - cos over channels, bilinear (align-corners) upsampling to
// output_size, summed over levels, Gaussian-smoothed; one map per batch element.
std::vector<AnomalyMap> anomaly_maps(const FeatureMapSet& teacher, const FeatureMapSet& student, int output_size,
                                     const AnomalyMapOptions& options = {});

// Separable Gaussian, truncated at 4 sigma, half-sample symmetric borders.
std::vector<double> gaussian_smooth(std::span<const double> values, int height, int width, double sigma);
// Align-corners bilinear resize of a single-channel grid.
std::vector<double> bilinear_resize(std::span<const double> values, int height, int width, int out_h, int out_w);

// Mann-Whitney statistic with ties counted one half. Throws std::invalid_argument
// unless both labels occur.
double auroc(std::span<const double> scores, std::span<const int> labels);

// Connected components of a binary grid (8-connectivity); 0 = background, labels 1..count.
std::vector<int> label_components(const Mask& mask, int& count);

struct AuproOptions {
  double fpr_limit = 0.3;
  std::size_t max_thresholds = 5000;
};

// Area under the per-region-overlap curve up to fpr_limit, normalized by fpr_limit.
double aupro(std::span<const AnomalyMap> maps, std::span<const Mask> masks, const AuproOptions& options = {});

struct ClassMetrics {
  std::string name;
  double i_auroc = 0.0;
  double p_auroc = 0.0;
  double p_aupro = 0.0;
  int n_images = 0;
};

struct SampleScore {
  std::string class_name;
  std::string name;
  std::string defect;
  int label = 0;
  double score = 0.0;
  int predicted_class = -1;
};

struct EvalReport {
  std::string condition = "id";
  std::vector<ClassMetrics> classes;
  ClassMetrics aggregate;  // unweighted mean over classes
  double class_accuracy = -1.0;  // anomaly-classifier routing accuracy; -1 without prompts
  std::vector<SampleScore> samples;

  nlohmann::json to_json() const;
  std::string scores_csv() const;
};

struct EvalOptions {
  int batch_size = 32;
  AnomalyMapOptions map;
  AuproOptions pro;
  std::optional<std::filesystem::path> heatmap_dir;
};

std::string condition_name(const std::optional<CorruptionSpec>& corruption);

// Seed of the k-th corrupted test image, counting test samples class by class.
std::uint64_t test_sample_seed(std::uint64_t base, std::uint64_t k);
// In-memory copy with every test image corrupted exactly as evaluate would; train split untouched.
DatasetIndex corrupt_test_split(const DatasetIndex& data, const CorruptionSpec& spec);

// Test split through anomaly-classifier routing and per-image style codes.
EvalReport evaluate(const RoadsModel& model, const DatasetIndex& data, const std::optional<CorruptionSpec>& corruption,
                    const EvalOptions& options = {});

// Min-max normalized map blended over the image with a fixed colormap.
void save_heatmap(const Image& image, const AnomalyMap& map, const std::filesystem::path& path);

}  // namespace roads
