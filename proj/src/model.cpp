#include "roads/model.hpp"

#include <set>

#include "roads/errors.hpp"
#include "roads/ops.hpp"

namespace roads {

void ModelConfig::validate() const {
  encoder.validate();
  if (classes.empty()) throw ConfigError("model: class list is empty");
  if (std::set<std::string>(classes.begin(), classes.end()).size() != classes.size()) {
    throw ConfigError("model: duplicate class names");
  }
  if (bottleneck_channels < 1 || classifier_hidden < 1 || style_dim < 1) throw ConfigError("model: sizes must be positive");
  if (adapter_trunk_stages < 1 || adapter_trunk_stages > num_levels()) {
    throw ConfigError("model: adapter_trunk_stages must be within 1..M");
  }
  make_decoder_config(*this).validate();
}

nlohmann::json ModelConfig::to_json() const {
  return {{"encoder", encoder.to_json()},
          {"M", num_levels()},
          {"C_phi", bottleneck_channels},
          {"blocks_per_stage", blocks_per_stage},
          {"l", prompt_tokens},
          {"M_t", token_dim},
          {"h", heads},
          {"ffn_hidden", ffn_hidden},
          {"classifier_hidden", classifier_hidden},
          {"D_s", style_dim},
          {"adapter_trunk_stages", adapter_trunk_stages},
          {"use_prompts", use_prompts},
          {"use_adapter", use_adapter},
          {"N", num_classes()},
          {"classes", classes}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.encoder = EncoderConfig::from_json(j.at("encoder"));
  c.bottleneck_channels = j.at("C_phi");
  c.blocks_per_stage = j.at("blocks_per_stage");
  c.prompt_tokens = j.at("l");
  c.token_dim = j.at("M_t");
  c.heads = j.at("h");
  c.ffn_hidden = j.at("ffn_hidden");
  c.classifier_hidden = j.at("classifier_hidden");
  c.style_dim = j.at("D_s");
  c.adapter_trunk_stages = j.at("adapter_trunk_stages");
  c.use_prompts = j.at("use_prompts");
  c.use_adapter = j.at("use_adapter");
  c.classes = j.at("classes").get<std::vector<std::string>>();
  if (j.at("M").get<int>() != c.num_levels() || j.at("N").get<int>() != c.num_classes()) {
    throw ConfigError("model manifest: M or N disagrees with the stored lists");
  }
  c.validate();
  return c;
}

DecoderConfig make_decoder_config(const ModelConfig& config) {
  DecoderConfig d;
  d.levels = config.encoder.levels();
  d.input_size = config.encoder.input_size;
  d.bottleneck_channels = config.bottleneck_channels;
  d.blocks_per_stage = config.blocks_per_stage;
  d.prompt_tokens = config.prompt_tokens;
  d.token_dim = config.token_dim;
  d.heads = config.heads;
  d.ffn_hidden = config.ffn_hidden;
  d.use_prompts = config.use_prompts;
  return d;
}

RoadsModel::RoadsModel(const ModelConfig& config, std::uint64_t seed)
    : config_((config.validate(), config)),
      rng_(seed),
      teacher_(config_.encoder, rng_),
      bottleneck_(config_.encoder.levels(), config_.bottleneck_channels, rng_),
      decoder_(make_decoder_config(config_), rng_) {
  teacher_.set_trainable(false);
  register_module("teacher", teacher_);
  register_module("bottleneck", bottleneck_);
  register_module("decoder", decoder_);
  if (config_.use_prompts) {
    pool_ = std::make_unique<PromptPool>(config_.num_classes(), config_.prompt_tokens, config_.token_dim,
                                         mix_seed(seed, 101));
    zeta_ = std::make_unique<AnomalyClassifier>(config_.encoder.levels().back(), config_.num_classes(),
                                                config_.classifier_hidden, config_.token_dim, rng_);
    final_ = std::make_unique<FinalClassifier>(config_.token_dim, config_.num_classes(), rng_);
    register_module("prompts", *pool_);
    register_module("zeta", *zeta_);
    register_module("final_head", *final_);
  }
  if (config_.use_adapter) {
    adapter_ = std::make_unique<StyleEncoder>(config_.encoder, config_.style_dim, rng_, config_.adapter_trunk_stages);
    heads_ = std::make_unique<AdaINHeads>(config_.style_dim, decoder_.adain_channels(), rng_);
    copy_matching_parameters(teacher_, adapter_->trunk());
    register_module("adapter", *adapter_);
    register_module("adain_heads", *heads_);
  }
}

void RoadsModel::set_teacher_weights(const SmallResNetEncoder& pretrained) {
  if (!(pretrained.config() == config_.encoder)) throw ConfigError("teacher weights come from a different architecture");
  copy_matching_parameters(pretrained, teacher_);
  teacher_.set_trainable(false);
  if (adapter_) copy_matching_parameters(teacher_, adapter_->trunk());
}

Var RoadsModel::style_code(const Var& images) const {
  if (!adapter_) throw std::logic_error("style_code: model built without the domain adapter");
  return (*adapter_)(images);
}

ClassifierOutput RoadsModel::classify(const Var& images) const {
  if (!zeta_) throw std::logic_error("classify: model built without prompts");
  return (*zeta_)(teacher_.encode(images).levels.back());
}

ModelOutput RoadsModel::forward(const Var& images, std::span<const int> route_classes) const {
  ModelOutput out;
  out.teacher = teacher_.encode(images);
  const int batch = images.dim(0);
  const Var phi = bottleneck_(out.teacher);

  AdaINParams style;
  if (adapter_) {
    out.style_code = (*adapter_)(images);
    style = (*heads_)(out.style_code);
  } else {
    style = identity_adain_params(decoder_.adain_channels(), batch);
  }
  if (!config_.use_prompts) {
    out.student = decoder_(phi, Var(), style).features;
    return out;
  }

  const ClassifierOutput zeta = (*zeta_)(out.teacher.levels.back());
  out.zeta_logits = zeta.logits;
  if (route_classes.empty()) {
    out.routed_classes = argmax_rows(zeta.logits.value());
  } else {
    if (static_cast<int>(route_classes.size()) != batch) throw std::invalid_argument("route_classes size differs from batch");
    out.routed_classes.assign(route_classes.begin(), route_classes.end());
  }
  DecodeOutput dec = decoder_(phi, select_prompts(*pool_, out.routed_classes), style);
  out.student = std::move(dec.features);
  std::vector<Var> tokens{zeta.posterior};
  tokens.insert(tokens.end(), dec.posteriors.begin(), dec.posteriors.end());
  out.final_logits = (*final_)(tokens);
  return out;
}

}  // namespace roads
