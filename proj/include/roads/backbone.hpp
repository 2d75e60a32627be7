#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "roads/nn.hpp"

namespace roads {

enum class FeatureSource { teacher, student };

// Multi-scale pyramid; level i is (B, C_i, H_i, W_i), shallowest first.
struct FeatureMapSet {
  std::vector<Var> levels;
  FeatureSource source = FeatureSource::teacher;

  int size() const { return static_cast<int>(levels.size()); }
};

struct LevelSpec {
  int channels = 0;
  int stride = 0;
  friend bool operator==(const LevelSpec&, const LevelSpec&) = default;
};

struct EncoderConfig {
  int in_channels = 3;
  int input_size = 32;
  int stem_channels = 16;
  // Fixed input standardization (x - input_mean) / input_std applied before the stem.
  double input_mean = 0.5;
  double input_std = 0.25;
  // One stage per emitted level; stage k halves the resolution.
  std::vector<int> channels{16, 32, 64};

  void validate() const;
  // Emitted levels: strides 4, 8, 16, ... for stem stride 2.
  std::vector<LevelSpec> levels() const;
  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

// Pluggable teacher interface.
class Encoder : public nn::Module {
 public:
  virtual FeatureMapSet encode(const Var& images) const = 0;
  virtual const EncoderConfig& config() const = 0;
};

// stem conv(stride 2) -> per stage [conv(stride 2), ReLU, residual block].
class SmallResNetEncoder : public Encoder {
 public:
  // stages < 0 builds every configured stage.
  SmallResNetEncoder(const EncoderConfig& config, Rng& rng, int stages = -1);

  FeatureMapSet encode(const Var& images) const override;
  const EncoderConfig& config() const override { return config_; }
  int stages() const { return static_cast<int>(stages_.size()); }

 private:
  struct Stage {
    Stage(int in, int out, Rng& rng) : down(in, out, 3, 2, 1, rng), block(out, rng) {}
    nn::Conv2d down;
    nn::ResidualBlock block;
  };
  EncoderConfig config_;
  nn::Conv2d stem_;
  std::vector<std::unique_ptr<Stage>> stages_;
};

// Copies every parameter of `src` whose name also exists in `dst` with equal shape.
// Returns the number of tensors copied.
int copy_matching_parameters(const nn::Module& src, nn::Module& dst);

struct TeacherPretrainConfig {
  int epochs = 3;
  int batch_size = 32;
  double lr = 2e-3;
  std::uint64_t seed = 0;
};

// Classification pretraining: GAP over the deepest level plus a linear head,
// softmax cross-entropy. images: (B, C, H, W). Returns final-epoch accuracy.
double pretrain_teacher(SmallResNetEncoder& encoder, const Tensor& images, std::span<const int> labels,
                        int num_classes, const TeacherPretrainConfig& config);

// Brings every level to the deepest resolution with stride-2 3x3 convs (one per
// halving), concatenates, projects to C_phi with a 1x1 conv, then one residual block.
class Bottleneck : public nn::Module {
 public:
  Bottleneck(const std::vector<LevelSpec>& levels, int out_channels, Rng& rng);

  Var operator()(const FeatureMapSet& features) const;
  int out_channels() const { return out_channels_; }

 private:
  std::vector<LevelSpec> levels_;
  int out_channels_;
  std::vector<std::vector<std::unique_ptr<nn::Conv2d>>> down_;
  nn::Conv2d fuse_;
  nn::ResidualBlock block_;
};

// Throws std::invalid_argument when the set does not match the declared levels.
void check_feature_shapes(const FeatureMapSet& features, const std::vector<LevelSpec>& levels, int input_size,
                          const char* what);

}  // namespace roads
