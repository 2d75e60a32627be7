#include "roads/prompts.hpp"

#include <cmath>
#include <stdexcept>

#include "roads/errors.hpp"
#include "roads/ops.hpp"

namespace roads {

Tensor init_prompt_pool(int num_classes, int tokens, int dim, std::uint64_t seed) {
  if (num_classes < 1 || tokens < 1 || dim < 1) throw ConfigError("prompt pool dimensions must be positive");
  Rng rng(seed);
  return nn::xavier_uniform(Shape{num_classes, tokens, dim}, tokens, dim, rng);
}

PromptPool::PromptPool(int num_classes, int tokens, int dim, std::uint64_t seed)
    : z_(&register_parameter("z", init_prompt_pool(num_classes, tokens, dim, seed))) {}

Var select_prompts(const PromptPool& pool, std::span<const int> class_index) {
  for (int i : class_index) {
    if (i < 0 || i >= pool.num_classes()) {
      throw std::out_of_range("class index " + std::to_string(i) + " outside prompt pool of " +
                              std::to_string(pool.num_classes()) + " classes");
    }
  }
  return ops::gather_rows(pool.z(), class_index);
}

CrossAttention::CrossAttention(int dim, int heads, Rng& rng)
    : dim_(dim), heads_(heads), wq_(dim, dim, rng, false), wk_(dim, dim, rng, false), wv_(dim, dim, rng, false),
      wo_(dim, dim, rng) {
  if (heads < 1 || dim % heads != 0) throw ConfigError("token dim must be divisible by the head count");
  register_module("wq", wq_);
  register_module("wk", wk_);
  register_module("wv", wv_);
  register_module("wo", wo_);
}

Var CrossAttention::operator()(const Var& query, const Var& context) const {
  if (query.value().rank() != 3 || context.value().rank() != 3 || query.dim(2) != dim_ || context.dim(2) != dim_ ||
      query.dim(0) != context.dim(0)) {
    throw std::invalid_argument("cross-attention expects (B, L, " + std::to_string(dim_) + ") inputs, got " +
                                shape_str(query.shape()) + " and " + shape_str(context.shape()));
  }
  return wo_(ops::attention(wq_(query), wk_(context), wv_(context), heads_));
}

PromptBlock::PromptBlock(int dim, int heads, int ffn_hidden, Rng& rng)
    : dim_(dim), ln_q_(dim), ln_kv_(dim), ln_post_(dim), mca_(dim, heads, rng), ffn_(dim, ffn_hidden, rng) {
  register_module("ln_q", ln_q_);
  register_module("ln_kv", ln_kv_);
  register_module("ln_post", ln_post_);
  register_module("mca", mca_);
  register_module("ffn", ffn_);
}

Var PromptBlock::operator()(const Var& x, const Var& context) const {
  const Var attended = mca_(ln_q_(x), ln_kv_(context));
  return ops::add(ffn_(ln_post_(ops::add(attended, x))), x);
}

void PromptBlock::zero_residual_branches() {
  mca_.wo().weight().mutable_value().fill(0.0);
  mca_.wo().bias().mutable_value().fill(0.0);
  ffn_.output_layer().weight().mutable_value().fill(0.0);
  ffn_.output_layer().bias().mutable_value().fill(0.0);
}

Var aggregate_posterior(const PromptBlock& block, const Var& prompts, const Var& features) {
  return block(prompts, features);
}

Var inject_prompts(const PromptBlock& block, const Var& features, const Var& posterior) {
  return block(features, posterior);
}

AnomalyClassifier::AnomalyClassifier(const LevelSpec& deepest, int num_classes, int hidden, int token_dim, Rng& rng)
    : conv1_(deepest.channels, hidden, 3, 1, 1, rng),
      conv2_(hidden, hidden, 3, 1, 1, rng),
      fc_(hidden, hidden, rng),
      head_(hidden, num_classes, rng),
      to_token_(hidden, token_dim, rng) {
  register_module("conv1", conv1_);
  register_module("conv2", conv2_);
  register_module("fc", fc_);
  register_module("head", head_);
  register_module("to_token", to_token_);
}

namespace {

Var pool_if_possible(const Var& x) {
  return (x.dim(2) >= 2 && x.dim(2) % 2 == 0 && x.dim(3) % 2 == 0) ? ops::avg_pool(x, 2) : x;
}

}  // namespace

ClassifierOutput AnomalyClassifier::operator()(const Var& deepest_feature) const {
  Var h = pool_if_possible(ops::relu(conv1_(deepest_feature)));
  h = pool_if_possible(ops::relu(conv2_(h)));
  const Var feat = ops::relu(fc_(ops::global_avg_pool(h)));
  const Var token = to_token_(feat);
  return {head_(feat), ops::reshape(token, Shape{token.dim(0), 1, token.dim(1)})};
}

FinalClassifier::FinalClassifier(int token_dim, int num_classes, Rng& rng) : fc_(token_dim, num_classes, rng) {
  register_module("fc", fc_);
}

Var FinalClassifier::operator()(std::span<const Var> posterior_tokens) const {
  return fc_(ops::mean_tokens(ops::concat_tokens(posterior_tokens)));
}

std::vector<int> argmax_rows(const Tensor& logits) {
  const int b = logits.dim(0), n = logits.dim(1);
  std::vector<int> out(static_cast<std::size_t>(b));
  for (int i = 0; i < b; ++i) {
    int best = 0;
    for (int c = 1; c < n; ++c) {
      if (logits[static_cast<std::size_t>(i * n + c)] > logits[static_cast<std::size_t>(i * n + best)]) best = c;
    }
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

}  // namespace roads
