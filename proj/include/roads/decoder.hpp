#pragma once

#include <memory>
#include <vector>

#include "json.hpp"
#include "roads/adapter.hpp"
#include "roads/backbone.hpp"
#include "roads/prompts.hpp"

namespace roads {

struct DecoderConfig {
  std::vector<LevelSpec> levels;  // teacher levels, shallowest first
  int input_size = 32;
  int bottleneck_channels = 128;
  int blocks_per_stage = 2;
  int prompt_tokens = 4;
  int token_dim = 64;
  int heads = 4;
  int ffn_hidden = 128;
  bool use_prompts = true;

  void validate() const;
};

struct StageManifest {
  int level = 0;  // 1-based teacher level this stage reproduces
  int channels = 0;
  int upsample = 1;
  std::vector<int> adain_layers;  // global AdaIN layer indices
  bool prompt_injection = false;
};

struct DecoderManifest {
  std::vector<StageManifest> stages;  // deepest first, in execution order
  nlohmann::json to_json() const;
};

// conv -> AdaIN -> ReLU -> conv -> AdaIN, then ReLU(x + .).
class AdaINResidualBlock : public nn::Module {
 public:
  AdaINResidualBlock(int channels, Rng& rng);
  Var operator()(const Var& x, const Var& g1, const Var& b1, const Var& g2, const Var& b2) const;

 private:
  nn::Conv2d conv1_, conv2_;
};

// Posterior aggregation then injection at one scale, residual in feature space:
// F + proj_out(inject(T, aggregate(z, T)) - T) with T = proj_in(F).
class PromptStage : public nn::Module {
 public:
  PromptStage(int channels, int token_dim, int heads, int ffn_hidden, Rng& rng);

  struct Output {
    Var features;
    Var posterior;
  };
  Output operator()(const Var& features, const Var& prompts) const;

  PromptBlock& aggregate_block() { return aggregate_; }
  PromptBlock& inject_block() { return inject_; }
  nn::Linear& proj_out() { return proj_out_; }

 private:
  nn::Linear proj_in_;
  PromptBlock aggregate_, inject_;
  nn::Linear proj_out_;
};

struct DecodeOutput {
  FeatureMapSet features;      // student levels, shallowest first
  std::vector<Var> posteriors; // one (B, l, M_t) per prompt stage, deepest first
};

class StudentDecoder : public nn::Module {
 public:
  StudentDecoder(const DecoderConfig& config, Rng& rng);

  // prompts: (B, l, M_t) or undefined when prompts are disabled.
  DecodeOutput operator()(const Var& phi, const Var& prompts, const AdaINParams& style) const;

  const DecoderConfig& config() const { return config_; }
  const DecoderManifest& manifest() const { return manifest_; }
  // Channel count of every AdaIN layer, in global index order.
  const std::vector<int>& adain_channels() const { return adain_channels_; }
  PromptStage* prompt_stage(int level);

 private:
  struct Stage {
    std::unique_ptr<nn::Conv2d> entry;
    std::vector<std::unique_ptr<AdaINResidualBlock>> blocks;
    std::unique_ptr<PromptStage> prompt;
    bool upsample = false;
    int first_adain = 0;
  };
  DecoderConfig config_;
  DecoderManifest manifest_;
  std::vector<int> adain_channels_;
  std::vector<Stage> stages_;
};

}  // namespace roads
