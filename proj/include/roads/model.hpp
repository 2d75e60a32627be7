#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "roads/adapter.hpp"
#include "roads/backbone.hpp"
#include "roads/decoder.hpp"
#include "roads/prompts.hpp"

namespace roads {

struct ModelConfig {
  EncoderConfig encoder;
  int bottleneck_channels = 128;
  int blocks_per_stage = 2;
  int prompt_tokens = 4;   // l
  int token_dim = 64;      // M_t
  int heads = 4;           // h
  int ffn_hidden = 128;
  int classifier_hidden = 64;
  int style_dim = 64;      // D_s
  int adapter_trunk_stages = 2;
  bool use_prompts = true;
  bool use_adapter = true;
  std::vector<std::string> classes;

  int num_classes() const { return static_cast<int>(classes.size()); }
  int num_levels() const { return static_cast<int>(encoder.channels.size()); }
  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

struct ModelOutput {
  FeatureMapSet teacher;
  FeatureMapSet student;
  Var zeta_logits;   // (B, N), undefined without prompts
  Var final_logits;  // (B, N), undefined without prompts
  Var style_code;    // (B, D_s), undefined without adapter
  std::vector<int> routed_classes;
};

// Teacher E, bottleneck, student decoder, prompt pool with classifiers, and the domain adapter.
class RoadsModel : public nn::Module {
 public:
  RoadsModel(const ModelConfig& config, std::uint64_t seed);

  // route_classes selects prompt slices; empty means argmax of the anomaly classifier.
  ModelOutput forward(const Var& images, std::span<const int> route_classes = {}) const;
  // Style code of a batch through the adapter.
  Var style_code(const Var& images) const;
  ClassifierOutput classify(const Var& images) const;

  const ModelConfig& config() const { return config_; }
  SmallResNetEncoder& teacher() { return teacher_; }
  const SmallResNetEncoder& teacher() const { return teacher_; }
  Bottleneck& bottleneck() { return bottleneck_; }
  StudentDecoder& decoder() { return decoder_; }
  const StudentDecoder& decoder() const { return decoder_; }
  PromptPool* prompt_pool() { return pool_.get(); }
  AnomalyClassifier* anomaly_classifier() { return zeta_.get(); }
  FinalClassifier* final_classifier() { return final_.get(); }
  StyleEncoder* style_encoder() { return adapter_.get(); }
  AdaINHeads* adain_heads() { return heads_.get(); }

  // Freezes the teacher and seeds the adapter trunk from it.
  void set_teacher_weights(const SmallResNetEncoder& pretrained);

 private:
  ModelConfig config_;
  Rng rng_;
  SmallResNetEncoder teacher_;
  Bottleneck bottleneck_;
  StudentDecoder decoder_;
  std::unique_ptr<PromptPool> pool_;
  std::unique_ptr<AnomalyClassifier> zeta_;
  std::unique_ptr<FinalClassifier> final_;
  std::unique_ptr<StyleEncoder> adapter_;
  std::unique_ptr<AdaINHeads> heads_;
};

DecoderConfig make_decoder_config(const ModelConfig& config);

}  // namespace roads
