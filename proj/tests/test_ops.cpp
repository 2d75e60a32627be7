#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "roads/ops.hpp"

using namespace roads;
using roads::testing::gradcheck;
using roads::testing::random_projection;
using roads::testing::random_tensor;

namespace {

constexpr double kTol = 1e-6;

TEST(Ops, AddSubMulGradients) {
  Rng rng(1);
  Var a(random_tensor({2, 3}, rng), true), b(random_tensor({2, 3}, rng), true);
  auto proj = random_projection({2, 3}, 9);
  EXPECT_LT(gradcheck([&] { return proj(ops::mul(ops::sub(a, b), ops::add(a, b))); }, {&a, &b}), kTol);
}

TEST(Ops, ReluGeluAffineGradients) {
  Rng rng(2);
  Var x(random_tensor({4, 5}, rng), true);
  auto proj = random_projection({4, 5}, 3);
  EXPECT_LT(gradcheck([&] { return proj(ops::affine(ops::gelu(x), 1.5, -0.2)); }, {&x}), kTol);
  EXPECT_LT(gradcheck([&] { return proj(ops::relu(x)); }, {&x}), kTol);
}

TEST(Ops, Conv2dMatchesDirectLoop) {
  Rng rng(3);
  Var x(random_tensor({2, 3, 5, 6}, rng));
  Var w(random_tensor({4, 3, 3, 3}, rng));
  Var b(random_tensor({4}, rng));
  Var y = ops::conv2d(x, w, b, 2, 1);
  ASSERT_EQ(y.shape(), (Shape{2, 4, 3, 3}));
  for (int n = 0; n < 2; ++n)
    for (int co = 0; co < 4; ++co)
      for (int oy = 0; oy < 3; ++oy)
        for (int ox = 0; ox < 3; ++ox) {
          double s = b.value()[co];
          for (int ci = 0; ci < 3; ++ci)
            for (int ki = 0; ki < 3; ++ki)
              for (int kj = 0; kj < 3; ++kj) {
                const int iy = oy * 2 - 1 + ki, ix = ox * 2 - 1 + kj;
                if (iy < 0 || iy >= 5 || ix < 0 || ix >= 6) continue;
                s += w.value().at({co, ci, ki, kj}) * x.value().at({n, ci, iy, ix});
              }
          EXPECT_NEAR(y.value().at({n, co, oy, ox}), s, 1e-12);
        }
}

TEST(Ops, Conv2dGradients) {
  Rng rng(4);
  Var x(random_tensor({2, 2, 5, 5}, rng), true);
  Var w(random_tensor({3, 2, 3, 3}, rng), true);
  Var b(random_tensor({3}, rng), true);
  auto proj = random_projection({2, 3, 3, 3}, 5);
  EXPECT_LT(gradcheck([&] { return proj(ops::conv2d(x, w, b, 2, 1)); }, {&x, &w, &b}), kTol);
  auto proj1 = random_projection({2, 3, 5, 5}, 6);
  Var w1(random_tensor({3, 2, 1, 1}, rng), true);
  EXPECT_LT(gradcheck([&] { return proj1(ops::conv2d(x, w1, Var(), 1, 0)); }, {&x, &w1}), kTol);
}

TEST(Ops, LinearAndLayerNormGradients) {
  Rng rng(5);
  Var x(random_tensor({2, 3, 4}, rng), true);
  Var w(random_tensor({5, 4}, rng), true);
  Var b(random_tensor({5}, rng), true);
  Var g(random_tensor({5}, rng), true);
  Var beta(random_tensor({5}, rng), true);
  auto proj = random_projection({2, 3, 5}, 7);
  EXPECT_LT(gradcheck([&] { return proj(ops::layer_norm(ops::linear(x, w, b), g, beta)); }, {&x, &w, &b, &g, &beta}),
            kTol);
}

TEST(Ops, LayerNormStandardizesRows) {
  Rng rng(6);
  Var x(random_tensor({3, 8}, rng, 4.0));
  Var y = ops::layer_norm(x, Var(Tensor({8}, 1.0)), Var(Tensor({8}, 0.0)));
  for (int r = 0; r < 3; ++r) {
    double m = 0, v = 0;
    for (int j = 0; j < 8; ++j) m += y.value().at({r, j}) / 8;
    for (int j = 0; j < 8; ++j) v += std::pow(y.value().at({r, j}) - m, 2) / 8;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, 1.0, 1e-3);
  }
}

TEST(Ops, PoolingUpsamplingTokenGradients) {
  Rng rng(7);
  Var x(random_tensor({2, 3, 4, 4}, rng), true);
  auto p1 = random_projection({2, 3, 8, 8}, 1);
  EXPECT_LT(gradcheck([&] { return p1(ops::upsample_nearest2x(x)); }, {&x}), kTol);
  auto p2 = random_projection({2, 3, 2, 2}, 2);
  EXPECT_LT(gradcheck([&] { return p2(ops::avg_pool(x, 2)); }, {&x}), kTol);
  auto p3 = random_projection({2, 6}, 3);
  EXPECT_LT(gradcheck([&] { return p3(ops::channel_moments(x, 1e-6)); }, {&x}), kTol);
  auto p4 = random_projection({2, 3}, 4);
  EXPECT_LT(gradcheck([&] { return p4(ops::global_avg_pool(x)); }, {&x}), kTol);
  auto p5 = random_projection({2, 3, 4, 4}, 5);
  EXPECT_LT(gradcheck([&] { return p5(ops::from_tokens(ops::mul(ops::to_tokens(x), ops::to_tokens(x)), 4, 4)); },
                      {&x}),
            kTol);
}

TEST(Ops, ConcatAndGatherGradients) {
  Rng rng(8);
  Var a(random_tensor({2, 1, 3, 3}, rng), true), b(random_tensor({2, 2, 3, 3}, rng), true);
  auto p1 = random_projection({2, 3, 3, 3}, 1);
  EXPECT_LT(gradcheck([&] {
              std::vector<Var> xs{a, b};
              return p1(ops::concat_channels(xs));
            },
            {&a, &b}),
            kTol);
  Var t1(random_tensor({2, 2, 4}, rng), true), t2(random_tensor({2, 3, 4}, rng), true);
  auto p2 = random_projection({2, 4}, 2);
  EXPECT_LT(gradcheck([&] {
              std::vector<Var> xs{t1, t2};
              return p2(ops::mean_tokens(ops::concat_tokens(xs)));
            },
            {&t1, &t2}),
            kTol);
  Var table(random_tensor({4, 2, 3}, rng), true);
  std::vector<int> idx{2, 0, 2};
  auto p3 = random_projection({3, 2, 3}, 3);
  EXPECT_LT(gradcheck([&] { return p3(ops::gather_rows(table, idx)); }, {&table}), kTol);
}

TEST(Ops, GatherRowsOnlyTouchesSelectedRows) {
  Rng rng(9);
  Var table(random_tensor({4, 2, 3}, rng), true);
  std::vector<int> idx{1, 1};
  backward(ops::sum(ops::gather_rows(table, idx)));
  const Tensor g = table.grad();
  for (int r = 0; r < 4; ++r)
    for (int j = 0; j < 6; ++j) EXPECT_EQ(g[r * 6 + j], r == 1 ? 2.0 : 0.0);
  std::vector<int> bad{4};
  EXPECT_THROW(ops::gather_rows(table, bad), std::out_of_range);
}

TEST(Ops, AttentionGradients) {
  for (int heads : {1, 2}) {
    Rng rng(10 + heads);
    Var q(random_tensor({2, 3, 4}, rng), true), k(random_tensor({2, 5, 4}, rng), true),
        v(random_tensor({2, 5, 4}, rng), true);
    auto proj = random_projection({2, 3, 4}, 11);
    EXPECT_LT(gradcheck([&] { return proj(ops::attention(q, k, v, heads)); }, {&q, &k, &v}), kTol);
  }
}

TEST(Ops, AttentionRowsSumToOneAndShiftInvariant) {
  Rng rng(12);
  Tensor q = random_tensor({1, 3, 4}, rng), k = random_tensor({1, 6, 4}, rng);
  Tensor w = ops::attention_weights(q, k, 2, 0, 1);
  for (int i = 0; i < 3; ++i) {
    double s = 0;
    for (int j = 0; j < 6; ++j) s += w.at({i, j});
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Ops, AdainGradients) {
  Rng rng(13);
  Var x(random_tensor({2, 3, 2, 3}, rng), true);
  Var g(random_tensor({2, 3}, rng), true), b(random_tensor({2, 3}, rng), true);
  auto proj = random_projection({2, 3, 2, 3}, 1);
  EXPECT_LT(gradcheck([&] { return proj(ops::adain(x, g, b)); }, {&x, &g, &b}), kTol);
}

TEST(Ops, CosineDistanceAndCrossEntropyGradients) {
  Rng rng(14);
  Var a(random_tensor({2, 3, 2, 2}, rng), true), b(random_tensor({2, 3, 2, 2}, rng), true);
  auto proj = random_projection({2, 2, 2}, 1);
  EXPECT_LT(gradcheck([&] { return proj(ops::cosine_distance(a, b, 1e-8)); }, {&a, &b}), kTol);
  Var logits(random_tensor({3, 4}, rng), true);
  std::vector<int> y{0, 3, 1};
  EXPECT_LT(gradcheck([&] { return ops::cross_entropy(logits, y); }, {&logits}), kTol);
}

TEST(Ops, ShapeErrors) {
  Var a(Tensor({2, 3})), b(Tensor({3, 2}));
  EXPECT_THROW(ops::add(a, b), std::invalid_argument);
  Var x(Tensor({1, 2, 4, 4}));
  EXPECT_THROW(ops::conv2d(x, Var(Tensor({1, 3, 3, 3})), Var(), 1, 1), std::invalid_argument);
  EXPECT_THROW(ops::avg_pool(Var(Tensor({1, 1, 3, 3})), 2), std::invalid_argument);
  EXPECT_THROW(ops::attention(Var(Tensor({1, 2, 6})), Var(Tensor({1, 2, 6})), Var(Tensor({1, 2, 6})), 4),
               std::invalid_argument);
}

TEST(Ops, NoGraphWithoutGradInputs) {
  Var a(Tensor({2}, 1.0)), b(Tensor({2}, 2.0));
  Var c = ops::add(a, b);
  EXPECT_FALSE(c.requires_grad());
  EXPECT_TRUE(c.node()->inputs.empty());
}

}  // namespace
