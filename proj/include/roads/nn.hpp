#pragma once

#include <deque>
#include <string>
#include <utility>
#include <vector>

#include "roads/autograd.hpp"
#include "roads/rng.hpp"

namespace roads::nn {

struct NamedParam {
  std::string name;
  Var* var;
};

// Owner of parameters and child modules. Registration stores addresses, so
// modules are pinned in memory (neither copyable nor movable).
class Module {
 public:
  Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;
  virtual ~Module() = default;

  std::vector<NamedParam> named_parameters(const std::string& prefix = "") const;
  std::vector<Var*> parameters() const;
  std::size_t parameter_count() const;
  void set_trainable(bool on);
  void zero_grad();

 protected:
  Var& register_parameter(std::string name, Tensor init);
  template <typename M>
  M& register_module(std::string name, M& child) {
    children_.emplace_back(std::move(name), &child);
    return child;
  }

 private:
  // deque keeps element addresses stable across registration.
  std::deque<std::pair<std::string, Var>> params_;
  std::vector<std::pair<std::string, Module*>> children_;
};

Tensor he_normal(Shape shape, int fan_in, Rng& rng);
Tensor xavier_uniform(Shape shape, int fan_in, int fan_out, Rng& rng);

class Conv2d : public Module {
 public:
  Conv2d(int in, int out, int kernel, int stride, int pad, Rng& rng, bool bias = true);
  Var operator()(const Var& x) const;

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  Var& weight() { return *weight_; }
  Var& bias() { return *bias_; }

 private:
  int in_, out_, stride_, pad_;
  Var* weight_;
  Var* bias_ = nullptr;
};

class Linear : public Module {
 public:
  Linear(int in, int out, Rng& rng, bool bias = true);
  Var operator()(const Var& x) const;

  int in_features() const { return in_; }
  int out_features() const { return out_; }
  Var& weight() { return *weight_; }
  Var& bias() { return *bias_; }

 private:
  int in_, out_;
  Var* weight_;
  Var* bias_ = nullptr;
};

class LayerNorm : public Module {
 public:
  explicit LayerNorm(int dim);
  Var operator()(const Var& x) const;

 private:
  Var* gamma_;
  Var* beta_;
};

// Two-layer MLP over the last axis: Linear -> GELU -> Linear.
class FeedForward : public Module {
 public:
  FeedForward(int dim, int hidden, Rng& rng);
  Var operator()(const Var& x) const;
  // Output layer, zeroed to make the block an exact zero map.
  Linear& output_layer() { return fc2_; }

 private:
  Linear fc1_;
  Linear fc2_;
};

// relu(x + conv(relu(conv(x)))) with channel count preserved.
class ResidualBlock : public Module {
 public:
  ResidualBlock(int channels, Rng& rng);
  Var operator()(const Var& x) const;

 private:
  Conv2d conv1_;
  Conv2d conv2_;
};

}  // namespace roads::nn
