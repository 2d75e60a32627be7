#include "roads/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "roads/augment.hpp"
#include "roads/errors.hpp"
#include "roads/ops.hpp"

namespace roads {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(KdForm form) { return form == KdForm::rd ? "rd" : "literal"; }

KdForm parse_kd_form(const std::string& name) {
  if (name == "rd") return KdForm::rd;
  if (name == "literal") return KdForm::literal;
  throw ConfigError("unknown kd_form '" + name + "' (expected rd or literal)");
}

Var kd_loss(const FeatureMapSet& teacher, const FeatureMapSet& student, KdForm form) {
  if (teacher.size() != student.size() || teacher.size() == 0) {
    throw std::invalid_argument("kd_loss: pyramids have different level counts");
  }
  Var total;
  for (int i = 0; i < teacher.size(); ++i) {
    const Var& a = teacher.levels[static_cast<std::size_t>(i)];
    const Var& b = student.levels[static_cast<std::size_t>(i)];
    if (a.shape() != b.shape()) {
      throw std::invalid_argument("kd_loss: level " + std::to_string(i + 1) + " shapes differ: " + shape_str(a.shape()) +
                                  " vs " + shape_str(b.shape()));
    }
    const Var level = ops::mean(ops::cosine_distance(a, b, 1e-8));
    total = total.defined() ? ops::add(total, level) : level;
  }
  if (form == KdForm::literal) total = ops::affine(total, 1.0, 1.0 - teacher.size());
  return total;
}

void LossWeights::validate() const {
  if (!(eta >= 0 && delta >= 0 && mu >= 0)) throw ConfigError("loss weights must be non-negative");
}

namespace {

double scalar_of(const Var& v) { return v.defined() ? v.value()[0] : 0.0; }

void require_finite(double v, const char* name) {
  if (!std::isfinite(v)) throw NumericalError(std::string("non-finite ") + name + " (" + std::to_string(v) + ")");
}

}  // namespace

double total_loss(double l_kd, double l_ce, double l_cs, const LossWeights& w) {
  require_finite(l_kd, "L_KD");
  require_finite(l_ce, "L_CE");
  require_finite(l_cs, "L_CS");
  return w.eta * l_kd + w.delta * l_ce + w.mu * l_cs;
}

Var total_loss(const Var& l_kd, const Var& l_ce, const Var& l_cs, const LossWeights& w) {
  total_loss(scalar_of(l_kd), scalar_of(l_ce), scalar_of(l_cs), w);
  Var total;
  const std::pair<const Var*, double> terms[] = {{&l_kd, w.eta}, {&l_ce, w.delta}, {&l_cs, w.mu}};
  for (const auto& [term, weight] : terms) {
    if (!term->defined() || weight == 0.0) continue;
    const Var scaled = ops::scale(*term, weight);
    total = total.defined() ? ops::add(total, scaled) : scaled;
  }
  return total.defined() ? total : Var(Tensor(Shape{1}, 0.0));
}

void TrainConfig::validate() const {
  weights.validate();
  if (epochs < 1 || batch_size < 1 || teacher_epochs < 0) throw ConfigError("epochs and batch_size must be positive");
  if (!(lr > 0) || !(min_lr >= 0) || !(weight_decay >= 0) || !(adapter_trunk_lr_scale >= 0) || !(teacher_lr > 0)) {
    throw ConfigError("learning rates and weight decay must be non-negative");
  }
  model.encoder.validate();
}

LossWeights TrainConfig::effective_weights() const {
  LossWeights w = weights;
  if (!model.use_prompts) w.delta = 0.0;
  if (!model.use_adapter) w.mu = 0.0;
  return w;
}

json TrainConfig::to_json() const {
  return {{"preset", preset},
          {"use_prompts", model.use_prompts},
          {"use_adapter", model.use_adapter},
          {"eta", weights.eta},
          {"delta", weights.delta},
          {"mu", weights.mu},
          {"kd_form", to_string(kd_form)},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"lr", lr},
          {"min_lr", min_lr},
          {"weight_decay", weight_decay},
          {"adapter_trunk_lr_scale", adapter_trunk_lr_scale},
          {"freeze_adapter_trunk", freeze_adapter_trunk},
          {"teacher_epochs", teacher_epochs},
          {"teacher_lr", teacher_lr},
          {"seed", seed},
          {"input_size", model.encoder.input_size},
          {"stem_channels", model.encoder.stem_channels},
          {"channels", model.encoder.channels},
          {"C_phi", model.bottleneck_channels},
          {"blocks_per_stage", model.blocks_per_stage},
          {"l", model.prompt_tokens},
          {"M_t", model.token_dim},
          {"h", model.heads},
          {"ffn_hidden", model.ffn_hidden},
          {"classifier_hidden", model.classifier_hidden},
          {"D_s", model.style_dim},
          {"adapter_trunk_stages", model.adapter_trunk_stages}};
}

void TrainConfig::merge_json(const json& j) {
  if (!j.is_object()) throw ConfigError("training config must be an object");
  try {
    if (j.contains("preset")) {
      const ModelConfig keep = model;
      *this = make_preset(j.at("preset").get<std::string>());
      model.classes = keep.classes;
    }
    for (const auto& [key, v] : j.items()) {
      if (key == "preset") continue;
      else if (key == "use_prompts") model.use_prompts = v.get<bool>();
      else if (key == "use_adapter") model.use_adapter = v.get<bool>();
      else if (key == "eta") weights.eta = v.get<double>();
      else if (key == "delta") weights.delta = v.get<double>();
      else if (key == "mu") weights.mu = v.get<double>();
      else if (key == "kd_form") kd_form = parse_kd_form(v.get<std::string>());
      else if (key == "epochs") epochs = v.get<int>();
      else if (key == "batch_size") batch_size = v.get<int>();
      else if (key == "lr") lr = v.get<double>();
      else if (key == "min_lr") min_lr = v.get<double>();
      else if (key == "weight_decay") weight_decay = v.get<double>();
      else if (key == "adapter_trunk_lr_scale") adapter_trunk_lr_scale = v.get<double>();
      else if (key == "freeze_adapter_trunk") freeze_adapter_trunk = v.get<bool>();
      else if (key == "teacher_epochs") teacher_epochs = v.get<int>();
      else if (key == "teacher_lr") teacher_lr = v.get<double>();
      else if (key == "seed") seed = v.get<std::uint64_t>();
      else if (key == "input_size") model.encoder.input_size = v.get<int>();
      else if (key == "stem_channels") model.encoder.stem_channels = v.get<int>();
      else if (key == "channels") model.encoder.channels = v.get<std::vector<int>>();
      else if (key == "C_phi") model.bottleneck_channels = v.get<int>();
      else if (key == "blocks_per_stage") model.blocks_per_stage = v.get<int>();
      else if (key == "l") model.prompt_tokens = v.get<int>();
      else if (key == "M_t") model.token_dim = v.get<int>();
      else if (key == "h") model.heads = v.get<int>();
      else if (key == "ffn_hidden") model.ffn_hidden = v.get<int>();
      else if (key == "classifier_hidden") model.classifier_hidden = v.get<int>();
      else if (key == "D_s") model.style_dim = v.get<int>();
      else if (key == "adapter_trunk_stages") model.adapter_trunk_stages = v.get<int>();
      else throw ConfigError("unknown training config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid training config value: ") + e.what());
  }
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"roads-0", "roads-1", "roads-2", "roads-3",
                                              "roads-4", "roads-5", "roads-6", "roads-7"};
  return names;
}

TrainConfig make_preset(const std::string& name) {
  TrainConfig c;
  c.preset = name;
  auto set = [&](bool adapter, bool prompts, double mu, double delta, double eta) {
    c.model.use_adapter = adapter;
    c.model.use_prompts = prompts;
    c.weights = LossWeights{eta, delta, mu};
  };
  if (name == "roads-0") set(false, false, 0.025, 0.025, 0.95);
  else if (name == "roads-1") set(true, false, 0.025, 0.025, 0.95);
  else if (name == "roads-2") set(false, true, 0.025, 0.025, 0.95);
  else if (name == "roads-3" || name == "roads-4") set(true, true, 0.025, 0.025, 0.95);
  else if (name == "roads-5") set(true, true, 0.04, 0.01, 0.95);
  else if (name == "roads-6") set(true, true, 0.01, 0.04, 0.95);
  else if (name == "roads-7") set(true, true, 0.05, 0.05, 0.9);
  else throw ConfigError("unknown preset '" + name + "' (expected roads-0 .. roads-7)");
  return c;
}

json StepMetrics::to_json() const {
  return {{"step", step}, {"epoch", epoch}, {"l_kd", l_kd}, {"l_ce", l_ce},
          {"l_cs", l_cs}, {"l_total", l_total}, {"lr", lr}, {"active", active}};
}

Trainer::Trainer(RoadsModel& model, const TrainConfig& config, long total_steps)
    : model_(model), config_(config), weights_(config.effective_weights()), total_steps_(total_steps) {
  model_.teacher().set_trainable(false);
  std::vector<Var*> main;
  auto add = [&](nn::Module* m) {
    if (!m) return;
    for (Var* p : m->parameters()) main.push_back(p);
  };
  add(&model_.bottleneck());
  add(&model_.decoder());
  add(model_.anomaly_classifier());
  add(model_.final_classifier());
  add(model_.adain_heads());
  std::vector<ParamGroup> groups{{main, 1.0, config_.weight_decay, false}};
  if (StyleEncoder* adapter = model_.style_encoder()) {
    groups.push_back({adapter->projection().parameters(), 1.0, config_.weight_decay, false});
    adapter->trunk().set_trainable(!config_.freeze_adapter_trunk);
    if (!config_.freeze_adapter_trunk) {
      groups.push_back({adapter->trunk().parameters(), config_.adapter_trunk_lr_scale, config_.weight_decay, false});
    }
  }
  if (PromptPool* pool = model_.prompt_pool()) groups.push_back({pool->parameters(), 1.0, 0.0, true});
  optimizer_ = std::make_unique<AdamW>(std::move(groups), config_.lr);
}

StepMetrics Trainer::train_step(const TrainBatch& batch) {
  if (batch.images.empty() || batch.images.size() != batch.classes.size() ||
      batch.images.size() != batch.labels.size()) {
    throw std::invalid_argument("train_step: batch fields differ in length");
  }
  for (std::size_t i = 0; i < batch.labels.size(); ++i) {
    if (batch.labels[i] != 0) throw DataError("train_step: anomalous sample in a training batch");
  }
  const Var x_id(images_to_batch(batch.images));
  const ModelOutput out = model_.forward(x_id, batch.classes);

  const Var l_kd = kd_loss(out.teacher, out.student, config_.kd_form);
  Var l_ce, l_cs;
  if (model_.config().use_prompts && weights_.delta > 0.0) {
    l_ce = ops::add(ops::cross_entropy(out.final_logits, batch.classes), ops::cross_entropy(out.zeta_logits, batch.classes));
  }
  if (model_.config().use_adapter && weights_.mu > 0.0) {
    std::vector<Image> ood;
    ood.reserve(batch.images.size());
    for (std::size_t i = 0; i < batch.images.size(); ++i) {
      ood.push_back(augment_ood(batch.images[i], mix_seed(batch.augment_seed, i)));
    }
    l_cs = style_consistency_loss(out.style_code, model_.style_code(Var(images_to_batch(ood))));
  }
  const Var total = total_loss(l_kd, l_ce, l_cs, weights_);

  const double lr = cosine_lr(config_.lr, config_.min_lr, optimizer_->steps(), total_steps_);
  optimizer_->set_lr(lr);
  optimizer_->zero_grad();
  if (total.requires_grad()) backward(total);
  optimizer_->step();

  StepMetrics m;
  m.step = optimizer_->steps();
  m.epoch = epoch_;
  m.l_kd = scalar_of(l_kd);
  m.l_ce = scalar_of(l_ce);
  m.l_cs = scalar_of(l_cs);
  m.l_total = scalar_of(total);
  m.lr = lr;
  m.active.push_back("kd");
  if (l_ce.defined()) m.active.push_back("ce");
  if (l_cs.defined()) m.active.push_back("cs");
  return m;
}

ImageSet collect_train_images(const DatasetIndex& data, int input_size) {
  ImageSet set;
  for (const SampleRecord* r : data.split(Split::train)) {
    set.images.push_back(resize_image(load_sample_image(*r), input_size, input_size));
    set.classes.push_back(r->class_index);
  }
  if (set.images.empty()) throw DataError("dataset has no training images");
  return set;
}

std::unique_ptr<SmallResNetEncoder> pretrain_teacher_on(const DatasetIndex& data, const TrainConfig& config) {
  const ImageSet set = collect_train_images(data, config.model.encoder.input_size);
  Rng rng(mix_seed(config.seed, 7));
  auto teacher = std::make_unique<SmallResNetEncoder>(config.model.encoder, rng);
  TeacherPretrainConfig tc;
  tc.epochs = config.teacher_epochs;
  tc.batch_size = config.batch_size * 2;
  tc.lr = config.teacher_lr;
  tc.seed = mix_seed(config.seed, 8);
  if (tc.epochs > 0) pretrain_teacher(*teacher, images_to_batch(set.images), set.classes, data.num_classes(), tc);
  teacher->set_trainable(false);
  return teacher;
}

TrainResult train_model(const DatasetIndex& data, const TrainConfig& config_in, const SmallResNetEncoder* teacher,
                        const std::function<void(const StepMetrics&)>& on_step) {
  TrainConfig config = config_in;
  if (config.model.classes.empty()) config.model.classes = data.classes;
  if (config.model.classes != data.classes) throw DataError("config class list differs from the dataset's classes");
  config.validate();
  config.model.validate();

  TrainResult result;
  std::unique_ptr<SmallResNetEncoder> own_teacher;
  if (!teacher) {
    own_teacher = pretrain_teacher_on(data, config);
    teacher = own_teacher.get();
  }
  result.model = std::make_unique<RoadsModel>(config.model, mix_seed(config.seed, 1));
  result.model->set_teacher_weights(*teacher);

  const ImageSet set = collect_train_images(data, config.model.encoder.input_size);
  const int n = static_cast<int>(set.images.size());
  const long steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  Trainer trainer(*result.model, config, steps_per_epoch * config.epochs);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    trainer.set_epoch(epoch);
    std::mt19937_64 shuffler(mix_seed(config.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffler);
    double sum = 0.0;
    long count = 0;
    for (int start = 0; start < n; start += config.batch_size) {
      TrainBatch batch;
      for (int i = start; i < std::min(n, start + config.batch_size); ++i) {
        const auto k = static_cast<std::size_t>(order[static_cast<std::size_t>(i)]);
        batch.images.push_back(set.images[k]);
        batch.classes.push_back(set.classes[k]);
        batch.labels.push_back(0);
      }
      batch.augment_seed = mix_seed(config.seed, 1u << 20 | static_cast<std::uint64_t>(trainer.steps()));
      const StepMetrics m = trainer.train_step(batch);
      result.log.push_back(m);
      if (on_step) on_step(m);
      sum += m.l_total;
      ++count;
    }
    result.epoch_mean_total.push_back(sum / static_cast<double>(count));
  }
  return result;
}

void save_checkpoint(const RoadsModel& model, const TrainConfig& config, const fs::path& dir) {
  json tensors = json::array();
  std::vector<double> blob;
  for (const nn::NamedParam& p : model.named_parameters()) {
    tensors.push_back({{"name", p.name}, {"shape", p.var->shape()}, {"offset", blob.size()}});
    const auto data = p.var->value().data();
    blob.insert(blob.end(), data.begin(), data.end());
  }
  TrainConfig snapshot = config;
  snapshot.model = model.config();
  const json manifest{{"format", "roads-checkpoint"},
                      {"version", 1},
                      {"classes", model.config().classes},
                      {"model", model.config().to_json()},
                      {"decoder", model.decoder().manifest().to_json()},
                      {"loss_weights", {{"eta", config.weights.eta}, {"delta", config.weights.delta}, {"mu", config.weights.mu}}},
                      {"train", snapshot.to_json()},
                      {"weights", {{"file", "weights.bin"}, {"dtype", "float64-le"}, {"count", blob.size()}}},
                      {"tensors", tensors}};

  const fs::path parent = dir.has_parent_path() ? dir.parent_path() : fs::path(".");
  fs::create_directories(parent);
  const fs::path tmp = parent / (dir.filename().string() + ".tmp");
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  {
    std::ofstream m(tmp / "manifest.json");
    m << manifest.dump(2) << '\n';
    std::ofstream w(tmp / "weights.bin", std::ios::binary);
    w.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size() * sizeof(double)));
    if (!m || !w) throw DataError("failed writing checkpoint to " + tmp.string());
  }
  const fs::path old = parent / (dir.filename().string() + ".old");
  fs::remove_all(old);
  if (fs::exists(dir)) fs::rename(dir, old);
  fs::rename(tmp, dir);
  fs::remove_all(old);
}

LoadedCheckpoint load_checkpoint(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw DataError("no checkpoint manifest at " + (dir / "manifest.json").string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("malformed checkpoint manifest: " + std::string(e.what()));
  }
  LoadedCheckpoint out;
  try {
    const ModelConfig model_config = ModelConfig::from_json(manifest.at("model"));
    out.config = TrainConfig{};
    out.config.merge_json(manifest.at("train"));
    out.config.model = model_config;
    if (manifest.at("classes").get<std::vector<std::string>>() != model_config.classes) {
      throw DataError("checkpoint manifest lists two different class sets");
    }
    out.model = std::make_unique<RoadsModel>(model_config, 0);
  } catch (const json::exception& e) {
    throw DataError("incomplete checkpoint manifest: " + std::string(e.what()));
  } catch (const ConfigError& e) {
    throw DataError("inconsistent checkpoint manifest: " + std::string(e.what()));
  }
  if (!fs::is_regular_file(dir / "weights.bin")) throw DataError("checkpoint lacks weights.bin in " + dir.string());
  const std::uintmax_t bytes = fs::file_size(dir / "weights.bin");
  std::vector<double> blob(bytes / sizeof(double));
  std::ifstream w(dir / "weights.bin", std::ios::binary);
  w.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(blob.size() * sizeof(double)));

  std::map<std::string, json> table;
  for (const json& t : manifest.at("tensors")) table[t.at("name").get<std::string>()] = t;
  const auto params = out.model->named_parameters();
  if (params.size() != table.size()) {
    throw DataError("checkpoint holds " + std::to_string(table.size()) + " tensors, model expects " +
                    std::to_string(params.size()));
  }
  for (const nn::NamedParam& p : params) {
    auto it = table.find(p.name);
    if (it == table.end()) throw DataError("checkpoint lacks tensor " + p.name);
    const Shape shape = it->second.at("shape").get<Shape>();
    if (shape != p.var->shape()) {
      throw DataError("tensor " + p.name + " has shape " + shape_str(shape) + " in checkpoint, model expects " +
                      shape_str(p.var->shape()));
    }
    const std::size_t offset = it->second.at("offset").get<std::size_t>();
    const std::size_t count = p.var->value().numel();
    if (offset + count > blob.size()) throw DataError("weights.bin is truncated");
    std::copy_n(blob.begin() + static_cast<std::ptrdiff_t>(offset), count, p.var->mutable_value().ptr());
  }
  out.model->teacher().set_trainable(false);
  return out;
}

}  // namespace roads
