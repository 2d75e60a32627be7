#pragma once

#include <memory>
#include <vector>

#include "roads/backbone.hpp"

namespace roads {

struct AdaINParams {
  std::vector<Var> gamma;  // per layer, (B, C_k)
  std::vector<Var> beta;
};

// Style trunk (leading encoder stages) -> channel mean/std -> linear code of length D_s.
class StyleEncoder : public nn::Module {
 public:
  StyleEncoder(const EncoderConfig& config, int style_dim, Rng& rng, int trunk_stages = 2);

  // (B, D_s). Throws NumericalError if any code has zero norm.
  Var operator()(const Var& images) const;
  SmallResNetEncoder& trunk() { return trunk_; }
  nn::Linear& projection() { return proj_; }
  int style_dim() const { return proj_.out_features(); }

 private:
  SmallResNetEncoder trunk_;
  nn::Linear proj_;
};

// One (gamma, beta) affine head pair per AdaIN layer; identity at initialization.
class AdaINHeads : public nn::Module {
 public:
  AdaINHeads(int style_dim, const std::vector<int>& layer_channels, Rng& rng);

  AdaINParams operator()(const Var& code) const;
  const std::vector<int>& layer_channels() const { return channels_; }

 private:
  std::vector<int> channels_;
  std::vector<std::unique_ptr<nn::Linear>> gamma_, beta_;
};

// gamma = 1, beta = 0 constants without gradient.
AdaINParams identity_adain_params(const std::vector<int>& layer_channels, int batch);

// Mean over the batch of 1 - cos(code_id, code_ood). Throws NumericalError on a zero-norm code.
Var style_consistency_loss(const Var& code_id, const Var& code_ood);

}  // namespace roads
