#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "roads/dataset.hpp"
#include "roads/model.hpp"
#include "roads/optim.hpp"

namespace roads {

enum class KdForm { rd, literal };
std::string to_string(KdForm form);
KdForm parse_kd_form(const std::string& name);

// rd: sum over levels of the mean per-position cosine distance, in [0, 2M].
// literal: 1 - sum over levels of the mean per-position cosine similarity.
Var kd_loss(const FeatureMapSet& teacher, const FeatureMapSet& student, KdForm form = KdForm::rd);

struct LossWeights {
  double eta = 0.95;    // knowledge distillation
  double delta = 0.025; // cross-entropy
  double mu = 0.025;    // style consistency

  void validate() const;
};

// eta * l_kd + delta * l_ce + mu * l_cs; undefined terms count as zero.
// Throws NumericalError on a non-finite term.
Var total_loss(const Var& l_kd, const Var& l_ce, const Var& l_cs, const LossWeights& w);
double total_loss(double l_kd, double l_ce, double l_cs, const LossWeights& w);

struct TrainConfig {
  std::string preset = "roads-3";
  ModelConfig model;
  LossWeights weights;
  KdForm kd_form = KdForm::rd;
  int epochs = 10;
  int batch_size = 16;
  double lr = 2e-3;
  double min_lr = 2e-5;
  double weight_decay = 1e-5;
  double adapter_trunk_lr_scale = 0.1;
  bool freeze_adapter_trunk = false;
  int teacher_epochs = 3;
  double teacher_lr = 2e-3;
  std::uint64_t seed = 0;

  void validate() const;
  // Loss weights after ablation gating: disabled components weigh zero.
  LossWeights effective_weights() const;
  nlohmann::json to_json() const;
  // Missing keys keep their current values; unknown keys raise ConfigError.
  void merge_json(const nlohmann::json& j);
};

// roads-0..3 toggle {adapter, prompts}; roads-4..7 vary (mu, delta, eta) with both on.
TrainConfig make_preset(const std::string& name);
const std::vector<std::string>& preset_names();

struct TrainBatch {
  std::vector<Image> images;
  std::vector<int> classes;
  std::vector<int> labels;  // all must be 0
  std::uint64_t augment_seed = 0;
};

struct StepMetrics {
  long step = 0;
  int epoch = 0;
  double l_kd = 0, l_ce = 0, l_cs = 0, l_total = 0, lr = 0;
  std::vector<std::string> active;  // loss terms computed this step: kd, ce, cs
  nlohmann::json to_json() const;
};

class Trainer {
 public:
  Trainer(RoadsModel& model, const TrainConfig& config, long total_steps);

  // Augments, runs the forward pass, and applies one optimizer step.
  StepMetrics train_step(const TrainBatch& batch);
  long steps() const { return optimizer_->steps(); }
  void set_epoch(int epoch) { epoch_ = epoch; }

 private:
  RoadsModel& model_;
  TrainConfig config_;
  LossWeights weights_;
  long total_steps_;
  int epoch_ = 0;
  std::unique_ptr<AdamW> optimizer_;
};

struct TrainResult {
  std::unique_ptr<RoadsModel> model;
  std::vector<StepMetrics> log;
  std::vector<double> epoch_mean_total;
};

// Teacher classification pretraining on the normal train split.
std::unique_ptr<SmallResNetEncoder> pretrain_teacher_on(const DatasetIndex& data, const TrainConfig& config);

// Full run. A supplied teacher is copied instead of pretraining a fresh one.
TrainResult train_model(const DatasetIndex& data, const TrainConfig& config,
                        const SmallResNetEncoder* teacher = nullptr,
                        const std::function<void(const StepMetrics&)>& on_step = {});

// Train images resized to the model input size, with class indices.
struct ImageSet {
  std::vector<Image> images;
  std::vector<int> classes;
};
ImageSet collect_train_images(const DatasetIndex& data, int input_size);

// Directory holding manifest.json and little-endian float64 weights.bin; written atomically.
void save_checkpoint(const RoadsModel& model, const TrainConfig& config, const std::filesystem::path& dir);
struct LoadedCheckpoint {
  std::unique_ptr<RoadsModel> model;
  TrainConfig config;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace roads
