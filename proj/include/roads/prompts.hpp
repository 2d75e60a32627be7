#pragma once

#include <cstdint>
#include <span>

#include "roads/backbone.hpp"
#include "roads/nn.hpp"

namespace roads {

// Learnable class-prior tokens Z of shape (N, l, M_t).
class PromptPool : public nn::Module {
 public:
  PromptPool(int num_classes, int tokens, int dim, std::uint64_t seed);

  int num_classes() const { return z_->dim(0); }
  int tokens() const { return z_->dim(1); }
  int dim() const { return z_->dim(2); }
  Var& z() { return *z_; }
  const Var& z() const { return *z_; }

 private:
  Var* z_;
};

// Xavier-uniform with fan_in = l, fan_out = M_t for every class slice.
Tensor init_prompt_pool(int num_classes, int tokens, int dim, std::uint64_t seed);

// (B, l, M_t); gradient reaches only the selected slices. Throws std::out_of_range.
Var select_prompts(const PromptPool& pool, std::span<const int> class_index);

// Multi-head cross-attention with per-head output projection.
class CrossAttention : public nn::Module {
 public:
  CrossAttention(int dim, int heads, Rng& rng);
  Var operator()(const Var& query, const Var& context) const;

  int heads() const { return heads_; }
  nn::Linear& wq() { return wq_; }
  nn::Linear& wk() { return wk_; }
  nn::Linear& wv() { return wv_; }
  nn::Linear& wo() { return wo_; }

 private:
  int dim_, heads_;
  nn::Linear wq_, wk_, wv_, wo_;
};

// out = FFN(LN(MCA(LN(X), LN(C)) + X)) + X; X is the query stream, C the context.
// Posterior aggregation uses X = prompts, C = features; injection swaps the roles.
class PromptBlock : public nn::Module {
 public:
  PromptBlock(int dim, int heads, int ffn_hidden, Rng& rng);
  Var operator()(const Var& x, const Var& context) const;

  CrossAttention& attention() { return mca_; }
  nn::FeedForward& ffn() { return ffn_; }
  // Zeroes the attention output projection and the FFN output layer.
  void zero_residual_branches();

 private:
  int dim_;
  nn::LayerNorm ln_q_, ln_kv_, ln_post_;
  CrossAttention mca_;
  nn::FeedForward ffn_;
};

Var aggregate_posterior(const PromptBlock& block, const Var& prompts, const Var& features);
Var inject_prompts(const PromptBlock& block, const Var& features, const Var& posterior);

struct ClassifierOutput {
  Var logits;     // (B, N)
  Var posterior;  // (B, 1, M_t), the projected penultimate feature
};

// Conv-pool blocks over the deepest teacher level followed by an MLP head.
class AnomalyClassifier : public nn::Module {
 public:
  AnomalyClassifier(const LevelSpec& deepest, int num_classes, int hidden, int token_dim, Rng& rng);
  ClassifierOutput operator()(const Var& deepest_feature) const;

 private:
  nn::Conv2d conv1_, conv2_;
  nn::Linear fc_, head_, to_token_;
};

// Logits from the token-mean of the concatenated posterior tokens.
class FinalClassifier : public nn::Module {
 public:
  FinalClassifier(int token_dim, int num_classes, Rng& rng);
  Var operator()(std::span<const Var> posterior_tokens) const;

 private:
  nn::Linear fc_;
};

std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace roads
