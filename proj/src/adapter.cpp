#include "roads/adapter.hpp"

#include <cmath>

#include "roads/errors.hpp"
#include "roads/ops.hpp"

namespace roads {

namespace {

void require_nonzero_rows(const Tensor& codes, const char* what) {
  const int b = codes.dim(0);
  const std::size_t d = codes.numel() / static_cast<std::size_t>(b);
  for (int i = 0; i < b; ++i) {
    double n2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) n2 += codes[i * d + j] * codes[i * d + j];
    if (!(n2 > 0.0) || !std::isfinite(n2)) {
      throw NumericalError(std::string(what) + ": style code " + std::to_string(i) + " has zero or non-finite norm");
    }
  }
}

}  // namespace

StyleEncoder::StyleEncoder(const EncoderConfig& config, int style_dim, Rng& rng, int trunk_stages)
    : trunk_(config, rng, trunk_stages),
      proj_(2 * config.channels.at(static_cast<std::size_t>(trunk_stages - 1)), style_dim, rng) {
  register_module("trunk", trunk_);
  register_module("proj", proj_);
}

Var StyleEncoder::operator()(const Var& images) const {
  const Var code = proj_(ops::channel_moments(trunk_.encode(images).levels.back(), 1e-6));
  require_nonzero_rows(code.value(), "style_code");
  return code;
}

AdaINHeads::AdaINHeads(int style_dim, const std::vector<int>& layer_channels, Rng& rng) : channels_(layer_channels) {
  for (std::size_t k = 0; k < channels_.size(); ++k) {
    gamma_.push_back(std::make_unique<nn::Linear>(style_dim, channels_[k], rng));
    beta_.push_back(std::make_unique<nn::Linear>(style_dim, channels_[k], rng));
    gamma_.back()->weight().mutable_value().fill(0.0);
    gamma_.back()->bias().mutable_value().fill(1.0);
    beta_.back()->weight().mutable_value().fill(0.0);
    beta_.back()->bias().mutable_value().fill(0.0);
    register_module("gamma" + std::to_string(k), *gamma_.back());
    register_module("beta" + std::to_string(k), *beta_.back());
  }
}

AdaINParams AdaINHeads::operator()(const Var& code) const {
  AdaINParams p;
  for (std::size_t k = 0; k < channels_.size(); ++k) {
    p.gamma.push_back((*gamma_[k])(code));
    p.beta.push_back((*beta_[k])(code));
  }
  return p;
}

AdaINParams identity_adain_params(const std::vector<int>& layer_channels, int batch) {
  AdaINParams p;
  for (int c : layer_channels) {
    p.gamma.emplace_back(Tensor(Shape{batch, c}, 1.0));
    p.beta.emplace_back(Tensor(Shape{batch, c}, 0.0));
  }
  return p;
}

Var style_consistency_loss(const Var& code_id, const Var& code_ood) {
  if (code_id.shape() != code_ood.shape() || code_id.value().rank() != 2) {
    throw std::invalid_argument("style_consistency_loss: codes must share shape (B, D_s)");
  }
  require_nonzero_rows(code_id.value(), "style_consistency_loss");
  require_nonzero_rows(code_ood.value(), "style_consistency_loss");
  return ops::mean(ops::cosine_distance(code_id, code_ood, 1e-300));
}

}  // namespace roads
