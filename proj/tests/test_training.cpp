#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "gradcheck.hpp"
#include "roads/errors.hpp"
#include "roads/evaluation.hpp"
#include "roads/toy_data.hpp"
#include "roads/training.hpp"
#include "temp_dir.hpp"

using namespace roads;
using roads::testing::gradcheck;
using roads::testing::random_tensor;
using roads::testing_util::TempDir;

namespace {

FeatureMapSet random_pyramid(Rng& rng, bool grad = false) {
  FeatureMapSet fs;
  fs.levels.emplace_back(random_tensor({2, 3, 4, 4}, rng), grad);
  fs.levels.emplace_back(random_tensor({2, 5, 2, 2}, rng), grad);
  fs.levels.emplace_back(random_tensor({2, 4, 1, 1}, rng), grad);
  return fs;
}

FeatureMapSet map_levels(const FeatureMapSet& fs, const std::function<Var(const Var&)>& f) {
  FeatureMapSet out;
  for (const Var& l : fs.levels) out.levels.push_back(f(l));
  return out;
}

TrainConfig tiny_config(const std::string& preset) {
  TrainConfig c = make_preset(preset);
  c.model.encoder.input_size = 32;
  c.model.encoder.stem_channels = 4;
  c.model.encoder.channels = {4, 8, 8};
  c.model.bottleneck_channels = 8;
  c.model.blocks_per_stage = 1;
  c.model.prompt_tokens = 2;
  c.model.token_dim = 8;
  c.model.heads = 2;
  c.model.ffn_hidden = 8;
  c.model.classifier_hidden = 8;
  c.model.style_dim = 6;
  c.model.classes = {"a", "b", "c"};
  c.batch_size = 4;
  c.epochs = 1;
  c.teacher_epochs = 0;
  c.seed = 3;
  return c;
}

TrainBatch random_batch(int n, std::uint64_t seed, int cls = -1) {
  Rng rng(seed);
  TrainBatch b;
  for (int i = 0; i < n; ++i) {
    Image img(32, 32, 3);
    for (double& v : img.data) v = rng.uniform();
    b.images.push_back(img);
    b.classes.push_back(cls >= 0 ? cls : i % 3);
    b.labels.push_back(0);
  }
  b.augment_seed = seed;
  return b;
}

std::vector<Tensor> snapshot(const std::vector<Var*>& params) {
  std::vector<Tensor> out;
  for (const Var* p : params) out.push_back(p->value());
  return out;
}

TEST(KdLoss, ReferenceValues) {
  Rng rng(1);
  const FeatureMapSet f = random_pyramid(rng);
  EXPECT_NEAR(kd_loss(f, f).value()[0], 0.0, 1e-12);
  EXPECT_NEAR(kd_loss(f, map_levels(f, [](const Var& v) { return ops::scale(v, -1.0); })).value()[0], 6.0, 1e-12);
  FeatureMapSet a, b;
  for (int i = 0; i < 3; ++i) {
    Tensor x({1, 2, 2, 2}, 0.0), y({1, 2, 2, 2}, 0.0);
    for (int p = 0; p < 4; ++p) {
      x[static_cast<std::size_t>(p)] = 1.0 + p;       // channel 0
      y[static_cast<std::size_t>(4 + p)] = 2.0 - p * 0.1;  // channel 1
    }
    a.levels.emplace_back(x);
    b.levels.emplace_back(y);
  }
  EXPECT_NEAR(kd_loss(a, b).value()[0], 3.0, 1e-12);
}

TEST(KdLoss, LiteralFormIsOneMinusSimilaritySum) {
  Rng rng(2);
  const FeatureMapSet f = random_pyramid(rng), g = random_pyramid(rng);
  EXPECT_NEAR(kd_loss(f, f, KdForm::literal).value()[0], -2.0, 1e-12);
  EXPECT_NEAR(kd_loss(f, g, KdForm::literal).value()[0], kd_loss(f, g).value()[0] - 2.0, 1e-12);
}

TEST(KdLoss, RangeAndPositiveRescalingInvariance) {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const FeatureMapSet f = random_pyramid(rng), g = random_pyramid(rng);
    const double v = kd_loss(f, g).value()[0];
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 6.0);
    EXPECT_NEAR(v, kd_loss(map_levels(f, [](const Var& x) { return ops::scale(x, 4.2); }), g).value()[0], 1e-12);
  }
}

TEST(KdLoss, ShapeMismatchThrows) {
  Rng rng(4);
  FeatureMapSet f = random_pyramid(rng), g = random_pyramid(rng);
  g.levels.pop_back();
  EXPECT_THROW(kd_loss(f, g), std::invalid_argument);
  g = random_pyramid(rng);
  g.levels[1] = Var(random_tensor({2, 5, 3, 3}, rng));
  EXPECT_ANY_THROW(kd_loss(f, g));
}

TEST(KdLoss, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(50 + seed);
    const FeatureMapSet f = random_pyramid(rng);
    FeatureMapSet g = random_pyramid(rng, true);
    std::vector<Var*> wrt;
    for (Var& l : g.levels) wrt.push_back(&l);
    EXPECT_LT(gradcheck([&] { return kd_loss(f, g); }, wrt), 1e-4) << "seed " << seed;
  }
}

TEST(TotalLoss, ArithmeticAndGating) {
  const LossWeights w;
  EXPECT_EQ(w.eta, 0.95);
  EXPECT_EQ(w.delta, 0.025);
  EXPECT_EQ(w.mu, 0.025);
  EXPECT_EQ(total_loss(1.0, 2.0, 4.0, w), 1.1);
  EXPECT_EQ(total_loss(Var(Tensor({1}, 1.0)), Var(Tensor({1}, 2.0)), Var(Tensor({1}, 4.0)), w).value()[0], 1.1);
  EXPECT_EQ(total_loss(0.7, 3.0, 9.0, LossWeights{1.0, 0.0, 0.0}), 0.7);
  EXPECT_EQ(total_loss(Var(Tensor({1}, 0.7)), Var(), Var(), w).value()[0], 0.95 * 0.7);
}

TEST(TotalLoss, LinearInEachTerm) {
  const LossWeights w{0.9, 0.05, 0.05};
  const double base = total_loss(1.0, 1.0, 1.0, w);
  EXPECT_NEAR(total_loss(2.0, 1.0, 1.0, w) - base, w.eta, 1e-15);
  EXPECT_NEAR(total_loss(1.0, 2.0, 1.0, w) - base, w.delta, 1e-15);
  EXPECT_NEAR(total_loss(1.0, 1.0, 2.0, w) - base, w.mu, 1e-15);
}

TEST(TotalLoss, NonFiniteTermAborts) {
  EXPECT_THROW(total_loss(std::nan(""), 0.0, 0.0, LossWeights{}), NumericalError);
  EXPECT_THROW(total_loss(1.0, INFINITY, 0.0, LossWeights{}), NumericalError);
}

TEST(Presets, MatchTheAblationRows) {
  struct Row {
    const char* name;
    bool adapter, prompts;
    double mu, delta, eta;
  };
  const Row rows[] = {{"roads-0", false, false, .025, .025, .95}, {"roads-1", true, false, .025, .025, .95},
                      {"roads-2", false, true, .025, .025, .95},  {"roads-3", true, true, .025, .025, .95},
                      {"roads-4", true, true, .025, .025, .95},   {"roads-5", true, true, .04, .01, .95},
                      {"roads-6", true, true, .01, .04, .95},     {"roads-7", true, true, .05, .05, .9}};
  for (const Row& r : rows) {
    const TrainConfig c = make_preset(r.name);
    EXPECT_EQ(c.model.use_adapter, r.adapter) << r.name;
    EXPECT_EQ(c.model.use_prompts, r.prompts) << r.name;
    EXPECT_EQ(c.weights.mu, r.mu) << r.name;
    EXPECT_EQ(c.weights.delta, r.delta) << r.name;
    EXPECT_EQ(c.weights.eta, r.eta) << r.name;
  }
  const LossWeights e0 = make_preset("roads-0").effective_weights();
  EXPECT_EQ(e0.delta, 0.0);
  EXPECT_EQ(e0.mu, 0.0);
  EXPECT_THROW(make_preset("roads-9"), ConfigError);
}

TEST(TrainConfigJson, RoundTripAndUnknownKey) {
  TrainConfig c = make_preset("roads-5");
  c.epochs = 7;
  c.kd_form = KdForm::literal;
  TrainConfig d;
  d.merge_json(c.to_json());
  EXPECT_EQ(d.to_json(), c.to_json());
  EXPECT_THROW(d.merge_json({{"epochz", 3}}), ConfigError);
  EXPECT_THROW(d.merge_json({{"epochs", "many"}}), ConfigError);
  d.merge_json({{"preset", "roads-0"}});
  EXPECT_FALSE(d.model.use_prompts);
}

TEST(Trainer, IdenticalSeedsGiveIdenticalTraces) {
  std::vector<std::vector<double>> traces;
  for (int run = 0; run < 2; ++run) {
    const TrainConfig c = tiny_config("roads-3");
    RoadsModel model(c.model, 1);
    Trainer trainer(model, c, 3);
    std::vector<double> t;
    for (int s = 0; s < 3; ++s) {
      const StepMetrics m = trainer.train_step(random_batch(4, 10 + static_cast<std::uint64_t>(s)));
      t.insert(t.end(), {m.l_kd, m.l_ce, m.l_cs, m.l_total});
    }
    traces.push_back(t);
  }
  ASSERT_EQ(traces[0].size(), traces[1].size());
  for (std::size_t i = 0; i < traces[0].size(); ++i) EXPECT_EQ(traces[0][i], traces[1][i]) << "entry " << i;
}

TEST(Trainer, KdOnlyPresetReportsOnlyKd) {
  const TrainConfig c = tiny_config("roads-0");
  RoadsModel model(c.model, 1);
  Trainer trainer(model, c, 2);
  const StepMetrics m = trainer.train_step(random_batch(4, 1));
  EXPECT_EQ(m.l_ce, 0.0);
  EXPECT_EQ(m.l_cs, 0.0);
  EXPECT_EQ(m.active, std::vector<std::string>{"kd"});
  EXPECT_NEAR(m.l_total, 0.95 * m.l_kd, 1e-15);
  const StepMetrics full = [&] {
    const TrainConfig c3 = tiny_config("roads-3");
    RoadsModel m3(c3.model, 1);
    Trainer t3(m3, c3, 2);
    return t3.train_step(random_batch(4, 1));
  }();
  EXPECT_EQ(full.active, (std::vector<std::string>{"kd", "ce", "cs"}));
  EXPECT_GT(full.l_ce, 0.0);
  EXPECT_GT(full.l_cs, 0.0);
}

TEST(Trainer, TeacherStaysBitIdentical) {
  const TrainConfig c = tiny_config("roads-3");
  RoadsModel model(c.model, 2);
  const auto before = snapshot(model.teacher().parameters());
  Trainer trainer(model, c, 10);
  for (int s = 0; s < 10; ++s) trainer.train_step(random_batch(4, 100 + static_cast<std::uint64_t>(s)));
  EXPECT_EQ(snapshot(model.teacher().parameters()), before);
}

TEST(Trainer, SingleClassBatchesLeaveOtherPromptsUntouched) {
  const TrainConfig c = tiny_config("roads-3");
  RoadsModel model(c.model, 4);
  const Tensor before = model.prompt_pool()->z().value();
  Trainer trainer(model, c, 5);
  for (int s = 0; s < 5; ++s) trainer.train_step(random_batch(4, 200 + static_cast<std::uint64_t>(s), 1));
  const Tensor& after = model.prompt_pool()->z().value();
  const std::size_t slice = after.numel() / 3;
  for (std::size_t i = 0; i < after.numel(); ++i) {
    if (i / slice == 1) continue;
    ASSERT_EQ(after[i], before[i]) << "entry " << i;
  }
  bool moved = false;
  for (std::size_t i = slice; i < 2 * slice; ++i) moved |= after[i] != before[i];
  EXPECT_TRUE(moved);
}

TEST(Trainer, AnomalousSampleIsRejected) {
  const TrainConfig c = tiny_config("roads-0");
  RoadsModel model(c.model, 1);
  Trainer trainer(model, c, 1);
  TrainBatch b = random_batch(2, 1);
  b.labels[1] = 1;
  EXPECT_THROW(trainer.train_step(b), DataError);
}

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    config = tiny_config("roads-3");
    model = std::make_unique<RoadsModel>(config.model, 5);
    Rng rng(6);
    for (Var* p : model->parameters()) {
      for (double& v : p->mutable_value().storage()) v += 0.05 * rng.normal();
    }
    save_checkpoint(*model, config, dir.path() / "ckpt");
  }
  TempDir dir;
  TrainConfig config;
  std::unique_ptr<RoadsModel> model;
};

TEST_F(CheckpointTest, RoundTripGivesIdenticalMaps) {
  const LoadedCheckpoint loaded = load_checkpoint(dir.path() / "ckpt");
  const Var x = Var(images_to_batch(random_batch(3, 7).images));
  const ModelOutput a = model->forward(x), b = loaded.model->forward(x);
  const auto ma = anomaly_maps(a.teacher, a.student, 32), mb = anomaly_maps(b.teacher, b.student, 32);
  for (std::size_t i = 0; i < ma.size(); ++i) EXPECT_EQ(ma[i].values, mb[i].values);
  EXPECT_EQ(a.routed_classes, b.routed_classes);
  EXPECT_EQ(loaded.config.preset, "roads-3");
  EXPECT_EQ(loaded.config.to_json(), [&] {
    TrainConfig t = config;
    t.model = model->config();
    return t.to_json();
  }());
}

TEST_F(CheckpointTest, ManifestListsEveryHyperparameter) {
  std::ifstream in(dir.path() / "ckpt" / "manifest.json");
  const nlohmann::json m = nlohmann::json::parse(in);
  for (const char* key : {"eta", "delta", "mu"}) EXPECT_TRUE(m.at("loss_weights").contains(key)) << key;
  for (const char* key : {"l", "M_t", "h", "D_s", "M", "N", "C_phi"}) EXPECT_TRUE(m.at("model").contains(key)) << key;
  EXPECT_EQ(m.at("model").at("M"), 3);
  EXPECT_EQ(m.at("tensors").size(), model->named_parameters().size());
}

TEST_F(CheckpointTest, MismatchedClassCountIsRejected) {
  const auto path = dir.path() / "ckpt" / "manifest.json";
  nlohmann::json m;
  {
    std::ifstream in(path);
    m = nlohmann::json::parse(in);
  }
  m["model"]["classes"] = {"a", "b", "c", "d"};
  m["model"]["N"] = 4;
  m["classes"] = {"a", "b", "c", "d"};
  std::ofstream(path) << m.dump();
  EXPECT_THROW(load_checkpoint(dir.path() / "ckpt"), DataError);
}

TEST_F(CheckpointTest, ShapeMismatchAndTruncationAreRejected) {
  const auto path = dir.path() / "ckpt" / "manifest.json";
  nlohmann::json m;
  {
    std::ifstream in(path);
    m = nlohmann::json::parse(in);
  }
  nlohmann::json bad = m;
  bad["tensors"][0]["shape"] = {1, 2, 3};
  std::ofstream(path) << bad.dump();
  EXPECT_THROW(load_checkpoint(dir.path() / "ckpt"), DataError);
  std::ofstream(path) << m.dump();
  std::filesystem::resize_file(dir.path() / "ckpt" / "weights.bin", 64);
  EXPECT_THROW(load_checkpoint(dir.path() / "ckpt"), DataError);
  EXPECT_THROW(load_checkpoint(dir.path() / "missing"), DataError);
}

TEST_F(CheckpointTest, EvaluationRejectsDatasetWithOtherClasses) {
  ToySpec spec;
  spec.n_classes = 2;
  spec.n_train = 2;
  spec.n_test_normal = 1;
  spec.n_test_anomalous = 1;
  EXPECT_THROW(evaluate(*model, generate_toy_dataset(spec), std::nullopt), DataError);
}

TEST(TrainModel, EpochLossDecreasesOnToyData) {
  ToySpec spec;
  spec.n_classes = 2;
  spec.n_train = 24;
  spec.n_test_normal = 2;
  spec.n_test_anomalous = 2;
  spec.seed = 1;
  const DatasetIndex data = generate_toy_dataset(spec);
  TrainConfig c = tiny_config("roads-3");
  c.model.classes.clear();
  c.epochs = 4;
  c.teacher_epochs = 1;
  const TrainResult r = train_model(data, c);
  ASSERT_EQ(r.epoch_mean_total.size(), 4u);
  EXPECT_LT(r.epoch_mean_total.back(), r.epoch_mean_total.front());
  EXPECT_EQ(r.model->config().classes, data.classes);
}

}  // namespace
