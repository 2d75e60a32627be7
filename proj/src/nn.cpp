#include "roads/nn.hpp"

#include <cmath>

#include "roads/ops.hpp"

namespace roads::nn {

std::vector<NamedParam> Module::named_parameters(const std::string& prefix) const {
  std::vector<NamedParam> out;
  for (const auto& [name, var] : params_) out.push_back({prefix + name, const_cast<Var*>(&var)});
  for (const auto& [name, child] : children_) {
    auto sub = child->named_parameters(prefix + name + ".");
    out.insert(out.end(), sub.begin(), sub.end());
  }
  return out;
}

std::vector<Var*> Module::parameters() const {
  std::vector<Var*> out;
  for (const auto& p : named_parameters()) out.push_back(p.var);
  return out;
}

std::size_t Module::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : named_parameters()) n += p.var->value().numel();
  return n;
}

void Module::set_trainable(bool on) {
  for (Var* v : parameters()) v->set_requires_grad(on);
}

void Module::zero_grad() {
  for (Var* v : parameters()) v->zero_grad();
}

Var& Module::register_parameter(std::string name, Tensor init) {
  params_.emplace_back(std::move(name), Var(std::move(init), true));
  return params_.back().second;
}

Tensor he_normal(Shape shape, int fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double sd = std::sqrt(2.0 / fan_in);
  for (double& v : t.storage()) v = rng.normal() * sd;
  return t;
}

Tensor xavier_uniform(Shape shape, int fan_in, int fan_out, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  for (double& v : t.storage()) v = rng.uniform(-bound, bound);
  return t;
}

Conv2d::Conv2d(int in, int out, int kernel, int stride, int pad, Rng& rng, bool bias)
    : in_(in), out_(out), stride_(stride), pad_(pad) {
  weight_ = &register_parameter("weight", he_normal(Shape{out, in, kernel, kernel}, in * kernel * kernel, rng));
  if (bias) bias_ = &register_parameter("bias", Tensor(Shape{out}, 0.0));
}

Var Conv2d::operator()(const Var& x) const {
  return ops::conv2d(x, *weight_, bias_ ? *bias_ : Var(), stride_, pad_);
}

Linear::Linear(int in, int out, Rng& rng, bool bias) : in_(in), out_(out) {
  weight_ = &register_parameter("weight", xavier_uniform(Shape{out, in}, in, out, rng));
  if (bias) bias_ = &register_parameter("bias", Tensor(Shape{out}, 0.0));
}

Var Linear::operator()(const Var& x) const { return ops::linear(x, *weight_, bias_ ? *bias_ : Var()); }

LayerNorm::LayerNorm(int dim) {
  gamma_ = &register_parameter("gamma", Tensor(Shape{dim}, 1.0));
  beta_ = &register_parameter("beta", Tensor(Shape{dim}, 0.0));
}

Var LayerNorm::operator()(const Var& x) const { return ops::layer_norm(x, *gamma_, *beta_); }

FeedForward::FeedForward(int dim, int hidden, Rng& rng) : fc1_(dim, hidden, rng), fc2_(hidden, dim, rng) {
  register_module("fc1", fc1_);
  register_module("fc2", fc2_);
}

Var FeedForward::operator()(const Var& x) const { return fc2_(ops::gelu(fc1_(x))); }

ResidualBlock::ResidualBlock(int channels, Rng& rng)
    : conv1_(channels, channels, 3, 1, 1, rng), conv2_(channels, channels, 3, 1, 1, rng) {
  register_module("conv1", conv1_);
  register_module("conv2", conv2_);
}

Var ResidualBlock::operator()(const Var& x) const {
  return ops::relu(ops::add(x, conv2_(ops::relu(conv1_(x)))));
}

}  // namespace roads::nn
