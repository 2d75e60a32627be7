#include "roads/decoder.hpp"

#include <stdexcept>

#include "roads/errors.hpp"
#include "roads/ops.hpp"

namespace roads {

void DecoderConfig::validate() const {
  if (levels.size() < 2) throw ConfigError("decoder: at least two levels are required");
  for (std::size_t i = 1; i < levels.size(); ++i) {
    if (levels[i].stride != 2 * levels[i - 1].stride) throw ConfigError("decoder: level strides must double");
  }
  if (input_size / levels.back().stride < 1 || input_size % levels.back().stride != 0) {
    throw ConfigError("decoder: input size incompatible with the deepest stride");
  }
  if (input_size / levels.back().stride * (input_size / levels.back().stride) < 2) {
    throw ConfigError("decoder: deepest level needs at least two positions for AdaIN");
  }
  if (bottleneck_channels < 1 || blocks_per_stage < 1) throw ConfigError("decoder: invalid sizes");
  if (use_prompts && (prompt_tokens < 1 || token_dim < 1 || heads < 1 || token_dim % heads != 0 || ffn_hidden < 1)) {
    throw ConfigError("decoder: invalid prompt dimensions (token_dim must be divisible by heads)");
  }
}

nlohmann::json DecoderManifest::to_json() const {
  nlohmann::json out = nlohmann::json::array();
  for (const StageManifest& s : stages) {
    out.push_back({{"level", s.level},
                   {"channels", s.channels},
                   {"upsample", s.upsample},
                   {"adain_layers", s.adain_layers},
                   {"prompt_injection", s.prompt_injection}});
  }
  return out;
}

AdaINResidualBlock::AdaINResidualBlock(int channels, Rng& rng)
    : conv1_(channels, channels, 3, 1, 1, rng), conv2_(channels, channels, 3, 1, 1, rng) {
  register_module("conv1", conv1_);
  register_module("conv2", conv2_);
}

Var AdaINResidualBlock::operator()(const Var& x, const Var& g1, const Var& b1, const Var& g2, const Var& b2) const {
  const Var y = ops::relu(ops::adain(conv1_(x), g1, b1));
  return ops::relu(ops::add(x, ops::adain(conv2_(y), g2, b2)));
}

PromptStage::PromptStage(int channels, int token_dim, int heads, int ffn_hidden, Rng& rng)
    : proj_in_(channels, token_dim, rng),
      aggregate_(token_dim, heads, ffn_hidden, rng),
      inject_(token_dim, heads, ffn_hidden, rng),
      proj_out_(token_dim, channels, rng) {
  proj_out_.weight().mutable_value().fill(0.0);
  proj_out_.bias().mutable_value().fill(0.0);
  register_module("proj_in", proj_in_);
  register_module("aggregate", aggregate_);
  register_module("inject", inject_);
  register_module("proj_out", proj_out_);
}

PromptStage::Output PromptStage::operator()(const Var& features, const Var& prompts) const {
  const Var tokens = proj_in_(ops::to_tokens(features));
  const Var posterior = aggregate_posterior(aggregate_, prompts, tokens);
  const Var enhanced = inject_prompts(inject_, tokens, posterior);
  const Var delta = ops::from_tokens(proj_out_(ops::sub(enhanced, tokens)), features.dim(2), features.dim(3));
  return {ops::add(features, delta), posterior};
}

StudentDecoder::StudentDecoder(const DecoderConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const int m = static_cast<int>(config_.levels.size());
  int adain_index = 0;
  for (int level = m; level >= 1; --level) {
    const LevelSpec& spec = config_.levels[static_cast<std::size_t>(level - 1)];
    Stage stage;
    stage.upsample = level != m;
    const int in = stage.upsample ? config_.levels[static_cast<std::size_t>(level)].channels : config_.bottleneck_channels;
    stage.entry = std::make_unique<nn::Conv2d>(in, spec.channels, 3, 1, 1, rng);
    stage.first_adain = adain_index;
    StageManifest sm{level, spec.channels, stage.upsample ? 2 : 1, {}, config_.use_prompts};
    for (int b = 0; b < config_.blocks_per_stage; ++b) {
      stage.blocks.push_back(std::make_unique<AdaINResidualBlock>(spec.channels, rng));
      for (int k = 0; k < 2; ++k) {
        sm.adain_layers.push_back(adain_index++);
        adain_channels_.push_back(spec.channels);
      }
    }
    if (config_.use_prompts) {
      stage.prompt = std::make_unique<PromptStage>(spec.channels, config_.token_dim, config_.heads, config_.ffn_hidden, rng);
    }
    manifest_.stages.push_back(sm);
    stages_.push_back(std::move(stage));
  }
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    const std::string name = "level" + std::to_string(manifest_.stages[s].level);
    register_module(name + ".entry", *stages_[s].entry);
    for (std::size_t b = 0; b < stages_[s].blocks.size(); ++b) {
      register_module(name + ".block" + std::to_string(b), *stages_[s].blocks[b]);
    }
    if (stages_[s].prompt) register_module(name + ".prompt", *stages_[s].prompt);
  }
}

PromptStage* StudentDecoder::prompt_stage(int level) {
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    if (manifest_.stages[s].level == level) return stages_[s].prompt.get();
  }
  return nullptr;
}

DecodeOutput StudentDecoder::operator()(const Var& phi, const Var& prompts, const AdaINParams& style) const {
  const int m = static_cast<int>(config_.levels.size());
  const int deepest = config_.input_size / config_.levels.back().stride;
  if (phi.value().rank() != 4 || phi.dim(1) != config_.bottleneck_channels || phi.dim(2) != deepest ||
      phi.dim(3) != deepest) {
    throw std::invalid_argument("decoder: embedding shape " + shape_str(phi.shape()) + " does not match manifest");
  }
  if (style.gamma.size() != adain_channels_.size() || style.beta.size() != adain_channels_.size()) {
    throw std::invalid_argument("decoder: expected " + std::to_string(adain_channels_.size()) + " AdaIN parameter pairs");
  }
  if (config_.use_prompts) {
    if (!prompts.defined() || prompts.value().rank() != 3 || prompts.dim(0) != phi.dim(0) ||
        prompts.dim(1) != config_.prompt_tokens || prompts.dim(2) != config_.token_dim) {
      throw std::invalid_argument("decoder: prompt tokens must be (B, l, M_t)");
    }
  }
  DecodeOutput out;
  out.features.source = FeatureSource::student;
  out.features.levels.resize(static_cast<std::size_t>(m));
  Var h = phi;
  for (const Stage& stage : stages_) {
    h = ops::relu((*stage.entry)(stage.upsample ? ops::upsample_nearest2x(h) : h));
    int k = stage.first_adain;
    for (const auto& block : stage.blocks) {
      const auto i = static_cast<std::size_t>(k);
      h = (*block)(h, style.gamma[i], style.beta[i], style.gamma[i + 1], style.beta[i + 1]);
      k += 2;
    }
    if (stage.prompt) {
      PromptStage::Output p = (*stage.prompt)(h, prompts);
      h = p.features;
      out.posteriors.push_back(p.posterior);
    }
    const int level = m - static_cast<int>(&stage - stages_.data());
    out.features.levels[static_cast<std::size_t>(level - 1)] = h;
  }
  return out;
}

}  // namespace roads
