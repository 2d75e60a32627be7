#include "roads/backbone.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>

#include "roads/errors.hpp"
#include "roads/ops.hpp"
#include "roads/optim.hpp"

namespace roads {

void EncoderConfig::validate() const {
  if (in_channels < 1 || stem_channels < 1) throw ConfigError("encoder: channel counts must be positive");
  if (!(input_std > 0.0)) throw ConfigError("encoder: input_std must be positive");
  if (channels.size() < 2) throw ConfigError("encoder: at least two levels are required");
  for (int c : channels) {
    if (c < 1) throw ConfigError("encoder: channel counts must be positive");
  }
  const int deepest = 2 << channels.size();
  if (input_size < deepest || input_size % deepest != 0) {
    throw ConfigError("encoder: input_size " + std::to_string(input_size) + " must be a positive multiple of " +
                      std::to_string(deepest));
  }
}

std::vector<LevelSpec> EncoderConfig::levels() const {
  std::vector<LevelSpec> out;
  int stride = 2;
  for (int c : channels) {
    stride *= 2;
    out.push_back({c, stride});
  }
  return out;
}

nlohmann::json EncoderConfig::to_json() const {
  nlohmann::json levels_json = nlohmann::json::array();
  for (const LevelSpec& l : levels()) levels_json.push_back({{"channels", l.channels}, {"stride", l.stride}});
  return {{"in_channels", in_channels},
          {"input_size", input_size},
          {"stem_channels", stem_channels},
          {"input_mean", input_mean},
          {"input_std", input_std},
          {"channels", channels},
          {"levels", levels_json}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.in_channels = j.at("in_channels");
  c.input_size = j.at("input_size");
  c.stem_channels = j.at("stem_channels");
  c.input_mean = j.at("input_mean");
  c.input_std = j.at("input_std");
  c.channels = j.at("channels").get<std::vector<int>>();
  c.validate();
  return c;
}

SmallResNetEncoder::SmallResNetEncoder(const EncoderConfig& config, Rng& rng, int stages)
    : config_(config), stem_(config.in_channels, config.stem_channels, 3, 2, 1, rng) {
  config_.validate();
  register_module("stem", stem_);
  const int n = stages < 0 ? static_cast<int>(config_.channels.size()) : stages;
  if (n < 1 || n > static_cast<int>(config_.channels.size())) throw ConfigError("encoder: invalid stage count");
  int in = config_.stem_channels;
  for (int k = 0; k < n; ++k) {
    const int out = config_.channels[static_cast<std::size_t>(k)];
    stages_.push_back(std::make_unique<Stage>(in, out, rng));
    register_module("stage" + std::to_string(k + 1) + ".down", stages_.back()->down);
    register_module("stage" + std::to_string(k + 1) + ".block", stages_.back()->block);
    in = out;
  }
}

FeatureMapSet SmallResNetEncoder::encode(const Var& images) const {
  const Tensor& x = images.value();
  if (x.rank() != 4 || x.dim(1) != config_.in_channels || x.dim(2) != config_.input_size ||
      x.dim(3) != config_.input_size) {
    throw std::invalid_argument("encoder expects (B, " + std::to_string(config_.in_channels) + ", " +
                                std::to_string(config_.input_size) + ", " + std::to_string(config_.input_size) +
                                "), got " + shape_str(x.shape()));
  }
  FeatureMapSet out;
  out.source = FeatureSource::teacher;
  const Var input = ops::affine(images, 1.0 / config_.input_std, -config_.input_mean / config_.input_std);
  Var h = ops::relu(stem_(input));
  for (const auto& stage : stages_) {
    h = stage->block(ops::relu(stage->down(h)));
    out.levels.push_back(h);
  }
  return out;
}

int copy_matching_parameters(const nn::Module& src, nn::Module& dst) {
  std::map<std::string, Var*> by_name;
  for (const nn::NamedParam& p : src.named_parameters()) by_name[p.name] = p.var;
  int copied = 0;
  for (const nn::NamedParam& p : dst.named_parameters()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end() || it->second->shape() != p.var->shape()) continue;
    p.var->mutable_value() = it->second->value();
    ++copied;
  }
  return copied;
}

namespace {

class ClassifierHead : public nn::Module {
 public:
  ClassifierHead(int in, int classes, Rng& rng) : fc_(in, classes, rng) { register_module("fc", fc_); }
  Var operator()(const Var& x) const { return fc_(ops::global_avg_pool(x)); }

 private:
  nn::Linear fc_;
};

}  // namespace

double pretrain_teacher(SmallResNetEncoder& encoder, const Tensor& images, std::span<const int> labels,
                        int num_classes, const TeacherPretrainConfig& config) {
  const int n = images.dim(0);
  if (n != static_cast<int>(labels.size())) throw std::invalid_argument("pretrain_teacher: label count mismatch");
  Rng rng(config.seed);
  ClassifierHead head(encoder.config().channels.back(), num_classes, rng);
  encoder.set_trainable(true);
  std::vector<ParamGroup> groups{{encoder.parameters(), 1.0, 1e-4, false}, {head.parameters(), 1.0, 1e-4, false}};
  AdamW opt(std::move(groups), config.lr);
  const long steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const long total = steps_per_epoch * config.epochs;
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 shuffler(config.seed);
  double accuracy = 0.0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffler);
    int correct = 0;
    for (int start = 0; start < n; start += config.batch_size) {
      const int end = std::min(n, start + config.batch_size);
      const std::span<const int> idx(order.data() + start, static_cast<std::size_t>(end - start));
      std::vector<int> y;
      for (int i : idx) y.push_back(labels[static_cast<std::size_t>(i)]);
      opt.set_lr(cosine_lr(config.lr, 0.0, opt.steps(), total));
      opt.zero_grad();
      const Var logits = head(encoder.encode(Var(take_rows(images, idx))).levels.back());
      const Var loss = ops::cross_entropy(logits, y);
      if (!std::isfinite(loss.value()[0])) throw NumericalError("non-finite loss during teacher pretraining");
      backward(loss);
      opt.step();
      const Tensor& lv = logits.value();
      for (int b = 0; b < end - start; ++b) {
        int best = 0;
        for (int c = 1; c < num_classes; ++c) {
          if (lv[static_cast<std::size_t>(b * num_classes + c)] > lv[static_cast<std::size_t>(b * num_classes + best)]) best = c;
        }
        correct += best == y[static_cast<std::size_t>(b)];
      }
    }
    accuracy = static_cast<double>(correct) / n;
  }
  encoder.set_trainable(false);
  return accuracy;
}

Bottleneck::Bottleneck(const std::vector<LevelSpec>& levels, int out_channels, Rng& rng)
    : levels_(levels),
      out_channels_(out_channels),
      fuse_(std::accumulate(levels.begin(), levels.end(), 0, [](int s, const LevelSpec& l) { return s + l.channels; }),
            out_channels, 1, 1, 0, rng),
      block_(out_channels, rng) {
  if (levels_.size() < 2) throw ConfigError("bottleneck: at least two levels are required");
  const int m = static_cast<int>(levels_.size());
  for (int i = 0; i < m; ++i) {
    down_.emplace_back();
    for (int k = i; k < m - 1; ++k) {
      const int c = levels_[static_cast<std::size_t>(i)].channels;
      down_.back().push_back(std::make_unique<nn::Conv2d>(c, c, 3, 2, 1, rng));
      register_module("down" + std::to_string(i + 1) + "." + std::to_string(k - i), *down_.back().back());
    }
  }
  register_module("fuse", fuse_);
  register_module("block", block_);
}

Var Bottleneck::operator()(const FeatureMapSet& features) const {
  if (features.size() != static_cast<int>(levels_.size())) {
    throw std::invalid_argument("bottleneck configured for " + std::to_string(levels_.size()) + " levels, got " +
                                std::to_string(features.size()));
  }
  const int deepest = features.levels.back().dim(2);
  std::vector<Var> pooled;
  for (std::size_t i = 0; i < levels_.size(); ++i) {
    Var f = features.levels[i];
    if (f.dim(1) != levels_[i].channels) throw std::invalid_argument("bottleneck: channel mismatch at level " + std::to_string(i + 1));
    for (const auto& conv : down_[i]) f = ops::relu((*conv)(f));
    if (f.dim(2) != deepest) throw std::invalid_argument("bottleneck: level " + std::to_string(i + 1) + " resolution mismatch");
    pooled.push_back(f);
  }
  return block_(ops::relu(fuse_(ops::concat_channels(pooled))));
}

void check_feature_shapes(const FeatureMapSet& features, const std::vector<LevelSpec>& levels, int input_size,
                          const char* what) {
  if (features.size() != static_cast<int>(levels.size())) {
    throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(levels.size()) + " levels, got " +
                                std::to_string(features.size()));
  }
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const Var& f = features.levels[i];
    const int side = input_size / levels[i].stride;
    if (f.value().rank() != 4 || f.dim(1) != levels[i].channels || f.dim(2) != side || f.dim(3) != side) {
      throw std::invalid_argument(std::string(what) + ": level " + std::to_string(i + 1) + " has shape " +
                                  shape_str(f.shape()) + ", expected (B, " + std::to_string(levels[i].channels) +
                                  ", " + std::to_string(side) + ", " + std::to_string(side) + ")");
    }
  }
}

}  // namespace roads
