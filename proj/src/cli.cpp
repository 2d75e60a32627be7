#include "roads/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <sstream>

#include "CLI11.hpp"
#include "roads/dataset.hpp"
#include "roads/errors.hpp"

namespace roads {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<std::string> kCommands{"toy-gen", "train", "eval", "corrupt", "report"};

template <class T>
T get_as(const json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type: " + v.dump());
  }
}

json toy_json(const ToySpec& t) {
  std::vector<std::string> kinds;
  for (DefectKind k : t.defect_kinds) kinds.push_back(to_string(k));
  return {{"n_classes", t.n_classes},         {"image_size", t.image_size},
          {"n_train", t.n_train},             {"n_test_normal", t.n_test_normal},
          {"n_test_anomalous", t.n_test_anomalous}, {"defect_kinds", kinds}};
}

void merge_toy(ToySpec& t, const json& j) {
  if (!j.is_object()) throw ConfigError("config section 'toy' must be an object");
  for (const auto& [key, v] : j.items()) {
    const std::string path = "toy." + key;
    if (key == "n_classes") t.n_classes = get_as<int>(v, path);
    else if (key == "image_size") t.image_size = get_as<int>(v, path);
    else if (key == "n_train") t.n_train = get_as<int>(v, path);
    else if (key == "n_test_normal") t.n_test_normal = get_as<int>(v, path);
    else if (key == "n_test_anomalous") t.n_test_anomalous = get_as<int>(v, path);
    else if (key == "defect_kinds") {
      t.defect_kinds.clear();
      for (const std::string& name : get_as<std::vector<std::string>>(v, path)) t.defect_kinds.push_back(parse_defect_kind(name));
    } else {
      throw ConfigError("unknown config key '" + path + "'");
    }
  }
}

fs::path absolute_or_empty(const fs::path& p) { return p.empty() ? p : fs::absolute(p).lexically_normal(); }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  f << text;
  if (!f) throw DataError("cannot write " + path.string());
}

json read_json_file(const fs::path& path, bool config) {
  std::ifstream f(path);
  if (!f) {
    const std::string msg = "cannot read " + path.string();
    if (config) throw ConfigError(msg);
    throw DataError(msg);
  }
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    const std::string msg = "malformed JSON in " + path.string() + ": " + e.what();
    if (config) throw ConfigError(msg);
    throw DataError(msg);
  }
}

void write_snapshot(const RunConfig& config) {
  fs::create_directories(config.out);
  write_text(config.out / "resolved_config.json", config.to_json().dump(2) + "\n");
}

// Refuses to mix fresh outputs with a previous dataset tree.
void require_empty_dataset_dir(const fs::path& dir) {
  if (!fs::exists(dir)) return;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().filename() != "resolved_config.json") {
      throw DataError("output directory " + dir.string() + " is not empty");
    }
  }
}

EvalOptions eval_options(const RunConfig& c) {
  EvalOptions o;
  o.batch_size = c.eval_batch_size;
  o.map.sigma = c.sigma;
  o.pro.fpr_limit = c.fpr_limit;
  o.pro.max_thresholds = c.max_thresholds;
  if (c.heatmaps) o.heatmap_dir = c.out / "heatmaps";
  return o;
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

void draw_report_chart(const std::vector<ReportRow>& rows, const fs::path& path) {
  const auto& kinds = all_corruption_kinds();
  const int bars = static_cast<int>(kinds.size()) + 2;  // ID, each corruption, mean OOD
  const int bar_w = 14, gap = 30, left = 60, top = 40, plot_h = 300, legend_h = 24 * bars;
  const int group_w = bars * bar_w + gap;
  const int width = left + std::max(1, static_cast<int>(rows.size())) * group_w + 20;
  const int height = top + plot_h + 40 + legend_h;
  cv::Mat img(height, std::max(width, 320), CV_8UC3, cv::Scalar(255, 255, 255));
  const std::vector<cv::Scalar> colors{{180, 119, 31}, {14, 127, 255}, {44, 160, 44}, {40, 39, 214}, {189, 103, 148}, {75, 86, 140}};
  for (int t = 0; t <= 10; ++t) {
    const int y = top + plot_h - plot_h * t / 10;
    cv::line(img, {left, y}, {img.cols - 10, y}, cv::Scalar(225, 225, 225), 1);
    cv::putText(img, fmt(t / 10.0, 1), {8, y + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.4, cv::Scalar(60, 60, 60), 1);
  }
  cv::putText(img, "P-AUPRO: ID vs corruptions per preset", {left, 24}, cv::FONT_HERSHEY_SIMPLEX, 0.5, cv::Scalar(0, 0, 0), 1);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::vector<double> values{rows[r].id_p_aupro};
    values.insert(values.end(), rows[r].ood_p_aupro.begin(), rows[r].ood_p_aupro.end());
    values.push_back(rows[r].mean_ood_p_aupro);
    const int x0 = left + static_cast<int>(r) * group_w + gap / 2;
    for (int b = 0; b < bars; ++b) {
      const int h = static_cast<int>(std::lround(std::clamp(values[static_cast<std::size_t>(b)], 0.0, 1.0) * plot_h));
      cv::rectangle(img, {x0 + b * bar_w, top + plot_h - h}, {x0 + (b + 1) * bar_w - 2, top + plot_h},
                    colors[static_cast<std::size_t>(b) % colors.size()], cv::FILLED);
    }
    cv::putText(img, rows[r].preset, {x0, top + plot_h + 18}, cv::FONT_HERSHEY_SIMPLEX, 0.45, cv::Scalar(0, 0, 0), 1);
  }
  std::vector<std::string> names{"ID"};
  for (CorruptionKind k : kinds) names.push_back(to_string(k));
  names.push_back("mean OOD");
  for (int b = 0; b < bars; ++b) {
    const int y = top + plot_h + 40 + 24 * b;
    cv::rectangle(img, {left, y}, {left + 14, y + 14}, colors[static_cast<std::size_t>(b) % colors.size()], cv::FILLED);
    cv::putText(img, names[static_cast<std::size_t>(b)], {left + 22, y + 12}, cv::FONT_HERSHEY_SIMPLEX, 0.45,
                cv::Scalar(0, 0, 0), 1);
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), img)) throw DataError("cannot write chart " + path.string());
}

}  // namespace

void RunConfig::validate() const {
  if (std::find(kCommands.begin(), kCommands.end(), command) == kCommands.end()) {
    throw ConfigError("unknown command '" + command + "'");
  }
  if (out.empty()) throw ConfigError("an output directory (--out) is required");
  if (severity < 1 || severity > 5) throw ConfigError("severity must be in 1..5");
  if (eval_batch_size < 1) throw ConfigError("eval batch_size must be >= 1");
  if (!(fpr_limit > 0.0 && fpr_limit <= 1.0)) throw ConfigError("fpr_limit must be in (0, 1]");
  if (max_thresholds < 2) throw ConfigError("max_thresholds must be >= 2");
  if (corruption && all_corruptions) throw ConfigError("conflicting options: corruption and all_corruptions");
  if (command == "toy-gen") toy.validate();
  if (command == "train" || command == "corrupt" || command == "eval") {
    if (data.empty()) throw ConfigError("command " + command + " needs a dataset (--data)");
  }
  if (command == "train") train.validate();
  if (command == "eval" && checkpoint.empty()) throw ConfigError("command eval needs --checkpoint");
  if (command == "corrupt") {
    if (!corruption) throw ConfigError("command corrupt needs a corruption kind");
    if (all_corruptions) throw ConfigError("command corrupt takes a single corruption kind");
  }
  if (command == "report" && runs.empty()) throw ConfigError("command report needs at least one run");
}

json RunConfig::to_json() const {
  json train_j = train.to_json();
  train_j.erase("seed");
  std::vector<std::string> run_strings;
  for (const fs::path& p : runs) run_strings.push_back(p.string());
  return {{"command", command},
          {"out", out.string()},
          {"seed", seed},
          {"data", data.string()},
          {"checkpoint", checkpoint.string()},
          {"toy", toy_json(toy)},
          {"train", train_j},
          {"corruption",
           {{"kind", corruption ? json(to_string(*corruption)) : json(nullptr)},
            {"severity", severity},
            {"all", all_corruptions}}},
          {"eval",
           {{"batch_size", eval_batch_size},
            {"sigma", sigma},
            {"fpr_limit", fpr_limit},
            {"max_thresholds", max_thresholds},
            {"heatmaps", heatmaps}}},
          {"report", {{"runs", run_strings}}}};
}

void RunConfig::merge_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (key == "command") command = get_as<std::string>(v, key);
    else if (key == "out") out = get_as<std::string>(v, key);
    else if (key == "seed") seed = get_as<std::uint64_t>(v, key);
    else if (key == "data") data = get_as<std::string>(v, key);
    else if (key == "checkpoint") checkpoint = get_as<std::string>(v, key);
    else if (key == "toy") merge_toy(toy, v);
    else if (key == "train") {
      if (!v.is_object()) throw ConfigError("config section 'train' must be an object");
      if (v.contains("seed")) throw ConfigError("config key 'train.seed' is not allowed; set the top-level 'seed'");
      try {
        train.merge_json(v);
      } catch (const ConfigError& e) {
        throw ConfigError(std::string(e.what()) + " (section 'train')");
      }
    } else if (key == "corruption") {
      if (!v.is_object()) throw ConfigError("config section 'corruption' must be an object");
      for (const auto& [k2, v2] : v.items()) {
        const std::string path = "corruption." + k2;
        if (k2 == "kind") {
          if (v2.is_null()) corruption.reset();
          else corruption = parse_corruption_kind(get_as<std::string>(v2, path));
        } else if (k2 == "severity") severity = get_as<int>(v2, path);
        else if (k2 == "all") all_corruptions = get_as<bool>(v2, path);
        else throw ConfigError("unknown config key '" + path + "'");
      }
    } else if (key == "eval") {
      if (!v.is_object()) throw ConfigError("config section 'eval' must be an object");
      for (const auto& [k2, v2] : v.items()) {
        const std::string path = "eval." + k2;
        if (k2 == "batch_size") eval_batch_size = get_as<int>(v2, path);
        else if (k2 == "sigma") sigma = get_as<double>(v2, path);
        else if (k2 == "fpr_limit") fpr_limit = get_as<double>(v2, path);
        else if (k2 == "max_thresholds") max_thresholds = get_as<std::size_t>(v2, path);
        else if (k2 == "heatmaps") heatmaps = get_as<bool>(v2, path);
        else throw ConfigError("unknown config key '" + path + "'");
      }
    } else if (key == "report") {
      if (!v.is_object()) throw ConfigError("config section 'report' must be an object");
      for (const auto& [k2, v2] : v.items()) {
        if (k2 != "runs") throw ConfigError("unknown config key 'report." + k2 + "'");
        runs.clear();
        for (const std::string& p : get_as<std::vector<std::string>>(v2, "report.runs")) runs.emplace_back(p);
      }
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
}

RunConfig load_run_config(const fs::path& path) {
  RunConfig c;
  c.merge_json(read_json_file(path, true));
  return c;
}

void cmd_toy_gen(const RunConfig& config) {
  require_empty_dataset_dir(config.out);
  write_snapshot(config);
  ToySpec spec = config.toy;
  spec.seed = config.seed;
  const DatasetIndex data = generate_toy_dataset(spec);
  export_dataset(data, config.out);
  std::cerr << "wrote " << data.samples.size() << " images in " << data.num_classes() << " classes to "
            << config.out.string() << "\n";
}

void cmd_train(const RunConfig& config) {
  write_snapshot(config);
  const DatasetIndex data = load_dataset(config.data);
  TrainConfig tc = config.train;
  tc.seed = config.seed;
  std::ofstream log(config.out / "train_log.jsonl");
  if (!log) throw DataError("cannot write training log under " + config.out.string());
  int current_epoch = 0;
  double epoch_sum = 0.0;
  long epoch_steps = 0;
  auto flush_epoch = [&] {
    if (epoch_steps > 0) std::cerr << "epoch " << current_epoch << " mean loss " << fmt(epoch_sum / epoch_steps, 5) << "\n";
  };
  TrainResult result = train_model(data, tc, nullptr, [&](const StepMetrics& m) {
    log << m.to_json().dump() << '\n';
    if (m.epoch != current_epoch) {
      flush_epoch();
      current_epoch = m.epoch;
      epoch_sum = 0.0;
      epoch_steps = 0;
    }
    epoch_sum += m.l_total;
    ++epoch_steps;
  });
  flush_epoch();
  log.flush();
  if (!log) throw DataError("failed writing the training log");
  save_checkpoint(*result.model, tc, config.out / "checkpoint");
  std::cerr << "checkpoint at " << (config.out / "checkpoint").string() << "\n";
}

void cmd_eval(const RunConfig& config) {
  write_snapshot(config);
  const LoadedCheckpoint ckpt = load_checkpoint(config.checkpoint);
  const DatasetIndex data = load_dataset(config.data);
  std::vector<std::optional<CorruptionSpec>> conditions;
  if (config.corruption) {
    conditions.push_back(CorruptionSpec{*config.corruption, config.severity, config.seed});
  } else {
    conditions.push_back(std::nullopt);
    if (config.all_corruptions) {
      for (CorruptionKind k : all_corruption_kinds()) conditions.push_back(CorruptionSpec{k, config.severity, config.seed});
    }
  }
  const EvalOptions options = eval_options(config);
  json reports = json::array();
  std::string csv;
  for (const auto& cond : conditions) {
    const EvalReport r = evaluate(*ckpt.model, data, cond, options);
    reports.push_back(r.to_json());
    const std::string part = r.scores_csv();
    csv += csv.empty() ? part : part.substr(part.find('\n') + 1);
    std::cerr << std::left << std::setw(18) << r.condition << " I-AUROC " << fmt(r.aggregate.i_auroc) << "  P-AUROC "
              << fmt(r.aggregate.p_auroc) << "  P-AUPRO " << fmt(r.aggregate.p_aupro);
    if (r.class_accuracy >= 0.0) std::cerr << "  class acc " << fmt(r.class_accuracy);
    std::cerr << "\n";
  }
  const json report{{"preset", ckpt.config.preset},
                    {"checkpoint", config.checkpoint.string()},
                    {"seed", config.seed},
                    {"fpr_limit", config.fpr_limit},
                    {"conditions", reports}};
  write_text(config.out / "report.json", report.dump(2) + "\n");
  write_text(config.out / "scores.csv", csv);
}

void cmd_corrupt(const RunConfig& config) {
  require_empty_dataset_dir(config.out);
  write_snapshot(config);
  const DatasetIndex data = load_dataset(config.data);
  const DatasetIndex shifted = corrupt_test_split(data, CorruptionSpec{*config.corruption, config.severity, config.seed});
  export_dataset(shifted, config.out);
  std::cerr << "wrote " << to_string(*config.corruption) << "@" << config.severity << " copy to " << config.out.string()
            << "\n";
}

std::vector<ReportRow> build_report(const std::vector<json>& eval_reports) {
  const auto& kinds = all_corruption_kinds();
  std::vector<std::string> order;
  std::map<std::string, ReportRow> rows;
  try {
    for (const json& rep : eval_reports) {
      const std::string preset = rep.at("preset").get<std::string>();
      std::optional<json> id;
      std::vector<std::optional<double>> ood(kinds.size());
      for (const json& cond : rep.at("conditions")) {
        const std::string name = cond.at("condition").get<std::string>();
        const json& agg = cond.at("aggregate");
        if (name == "id") id = agg;
        for (std::size_t k = 0; k < kinds.size(); ++k) {
          if (name.rfind(to_string(kinds[k]) + "@", 0) == 0) ood[k] = agg.at("p_aupro").get<double>();
        }
      }
      if (!id) throw DataError("eval report for preset " + preset + " lacks the in-distribution condition");
      for (std::size_t k = 0; k < kinds.size(); ++k) {
        if (!ood[k]) throw DataError("eval report for preset " + preset + " lacks condition " + to_string(kinds[k]));
      }
      if (!rows.count(preset)) {
        order.push_back(preset);
        rows[preset].preset = preset;
        rows[preset].ood_p_aupro.assign(kinds.size(), 0.0);
      }
      ReportRow& row = rows[preset];
      ++row.runs;
      row.id_i_auroc += id->at("i_auroc").get<double>();
      row.id_p_auroc += id->at("p_auroc").get<double>();
      row.id_p_aupro += id->at("p_aupro").get<double>();
      for (std::size_t k = 0; k < kinds.size(); ++k) row.ood_p_aupro[k] += *ood[k];
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed eval report: ") + e.what());
  }
  std::vector<ReportRow> out;
  for (const std::string& p : order) {
    ReportRow row = rows[p];
    const double n = row.runs;
    row.id_i_auroc /= n;
    row.id_p_auroc /= n;
    row.id_p_aupro /= n;
    row.mean_ood_p_aupro = 0.0;
    for (double& v : row.ood_p_aupro) {
      v /= n;
      row.mean_ood_p_aupro += v;
    }
    row.mean_ood_p_aupro /= static_cast<double>(kinds.size());
    out.push_back(std::move(row));
  }
  return out;
}

void cmd_report(const RunConfig& config) {
  write_snapshot(config);
  std::vector<json> reports;
  for (const fs::path& run : config.runs) {
    reports.push_back(read_json_file(fs::is_directory(run) ? run / "report.json" : run, false));
  }
  const std::vector<ReportRow> rows = build_report(reports);
  const auto& kinds = all_corruption_kinds();

  std::ostringstream md, csv;
  md << "| preset | runs | ID I-AUROC | ID P-AUROC | ID P-AUPRO |";
  csv << "preset,runs,id_i_auroc,id_p_auroc,id_p_aupro";
  for (CorruptionKind k : kinds) {
    md << ' ' << to_string(k) << " P-AUPRO |";
    csv << ',' << to_string(k) << "_p_aupro";
  }
  md << " mean-OOD P-AUPRO |\n|---|---|---|---|---|";
  csv << ",mean_ood_p_aupro\n";
  for (std::size_t k = 0; k < kinds.size(); ++k) md << "---|";
  md << "---|\n";
  for (const ReportRow& r : rows) {
    md << "| " << r.preset << " | " << r.runs << " | " << fmt(r.id_i_auroc) << " | " << fmt(r.id_p_auroc) << " | "
       << fmt(r.id_p_aupro) << " |";
    csv << r.preset << ',' << r.runs << ',' << fmt(r.id_i_auroc, 6) << ',' << fmt(r.id_p_auroc, 6) << ','
        << fmt(r.id_p_aupro, 6);
    for (double v : r.ood_p_aupro) {
      md << ' ' << fmt(v) << " |";
      csv << ',' << fmt(v, 6);
    }
    md << ' ' << fmt(r.mean_ood_p_aupro) << " |\n";
    csv << ',' << fmt(r.mean_ood_p_aupro, 6) << '\n';
  }
  write_text(config.out / "report.md", md.str());
  write_text(config.out / "report.csv", csv.str());
  draw_report_chart(rows, config.out / "report.png");
  std::cout << md.str();
}

void run_command(const RunConfig& config) {
  config.validate();
  if (config.command == "toy-gen") cmd_toy_gen(config);
  else if (config.command == "train") cmd_train(config);
  else if (config.command == "eval") cmd_eval(config);
  else if (config.command == "corrupt") cmd_corrupt(config);
  else cmd_report(config);
}

namespace {

// Flag values collected as a JSON patch so explicit flags override the config file.
struct FlagPatch {
  json patch = json::object();
  std::vector<std::pair<std::string, std::string>> train_sets;
};

json parse_scalar(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return json(text);
  }
}

RunConfig resolve(const std::string& command, const std::string& config_path, const FlagPatch& flags) {
  RunConfig c;
  if (!config_path.empty()) {
    c = load_run_config(config_path);
    if (!c.command.empty() && c.command != command) {
      throw ConfigError("config file is for command '" + c.command + "', not '" + command + "'");
    }
  }
  c.command = command;
  c.merge_json(flags.patch);
  json train_patch = json::object();
  for (const auto& [k, v] : flags.train_sets) train_patch[k] = parse_scalar(v);
  if (!train_patch.empty()) c.merge_json(json{{"train", train_patch}});
  c.out = absolute_or_empty(c.out);
  c.data = absolute_or_empty(c.data);
  c.checkpoint = absolute_or_empty(c.checkpoint);
  for (fs::path& p : c.runs) p = absolute_or_empty(p);
  return c;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Multi-class anomaly detection with class prompts and a domain adapter"};
  app.require_subcommand(1);

  std::string config_path;
  FlagPatch flags;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run config; explicit flags take precedence")->check(CLI::ExistingFile);
    sub->add_option_function<std::string>("--out", [&](const std::string& v) { flags.patch["out"] = v; },
                                          "Output directory");
    sub->add_option_function<std::uint64_t>("--seed", [&](std::uint64_t v) { flags.patch["seed"] = v; }, "Global seed");
  };
  auto set_in = [&](const char* section, const char* key) {
    return [&flags, section, key](const auto& v) { flags.patch[section][key] = v; };
  };

  CLI::App* toy = app.add_subcommand("toy-gen", "Generate the procedural multi-class defect dataset");
  add_common(toy);
  toy->add_option_function<int>("--classes", set_in("toy", "n_classes"), "Number of classes");
  toy->add_option_function<int>("--size", set_in("toy", "image_size"), "Image side in pixels");
  toy->add_option_function<int>("--train", set_in("toy", "n_train"), "Normal train images per class");
  toy->add_option_function<int>("--test-normal", set_in("toy", "n_test_normal"), "Normal test images per class");
  toy->add_option_function<int>("--test-anomalous", set_in("toy", "n_test_anomalous"), "Anomalous test images per class");
  toy->add_option_function<std::vector<std::string>>("--defects", set_in("toy", "defect_kinds"),
                                                     "Defect kinds: scratch blob hole");

  CLI::App* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  add_common(train);
  train->add_option_function<std::string>("--data", [&](const std::string& v) { flags.patch["data"] = v; }, "Dataset root");
  train->add_option_function<std::string>("--preset", set_in("train", "preset"), "Ablation preset roads-0..7");
  train->add_option_function<int>("--epochs", set_in("train", "epochs"), "Training epochs");
  train->add_option_function<int>("--batch-size", set_in("train", "batch_size"), "Batch size");
  train->add_option_function<double>("--lr", set_in("train", "lr"), "Peak learning rate");
  train->add_option_function<int>("--teacher-epochs", set_in("train", "teacher_epochs"), "Teacher pretraining epochs");
  train->add_option_function<std::string>("--kd-form", set_in("train", "kd_form"), "rd or literal");
  train->add_option_function<std::vector<std::string>>(
      "--set",
      [&](const std::vector<std::string>& items) {
        for (const std::string& item : items) {
          const auto eq = item.find('=');
          if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + item + "'");
          flags.train_sets.emplace_back(item.substr(0, eq), item.substr(eq + 1));
        }
      },
      "Training-config override key=value (repeatable)");

  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  add_common(eval);
  eval->add_option_function<std::string>("--checkpoint", [&](const std::string& v) { flags.patch["checkpoint"] = v; },
                                         "Checkpoint directory");
  eval->add_option_function<std::string>("--data", [&](const std::string& v) { flags.patch["data"] = v; }, "Dataset root");
  CLI::Option* eval_kind =
      eval->add_option_function<std::string>("--corruption", set_in("corruption", "kind"), "Single corruption kind");
  CLI::Option* eval_sev = eval->add_option_function<int>("--severity", set_in("corruption", "severity"), "Severity 1..5");
  CLI::Option* eval_all = eval->add_flag_function(
      "--all-corruptions", [&](std::int64_t) { flags.patch["corruption"]["all"] = true; },
      "Evaluate ID plus every corruption kind");
  eval->add_flag_function("--heatmaps", [&](std::int64_t) { flags.patch["eval"]["heatmaps"] = true; },
                          "Write per-image heatmaps");
  eval->add_option_function<double>("--sigma", set_in("eval", "sigma"), "Map smoothing sigma (0 disables)");
  eval->add_option_function<double>("--fpr-limit", set_in("eval", "fpr_limit"), "P-AUPRO integration limit");
  eval->add_option_function<int>("--batch-size", set_in("eval", "batch_size"), "Evaluation batch size");

  CLI::App* corrupt_cmd = app.add_subcommand("corrupt", "Write a copy of a dataset with corrupted test images");
  add_common(corrupt_cmd);
  corrupt_cmd->add_option_function<std::string>("--data", [&](const std::string& v) { flags.patch["data"] = v; },
                                                "Dataset root");
  corrupt_cmd->add_option_function<std::string>("--corruption", set_in("corruption", "kind"), "Corruption kind");
  corrupt_cmd->add_option_function<int>("--severity", set_in("corruption", "severity"), "Severity 1..5");

  CLI::App* report = app.add_subcommand("report", "Tabulate and plot eval reports across presets");
  add_common(report);
  report->add_option_function<std::vector<std::string>>(
      "--runs", [&](const std::vector<std::string>& v) { flags.patch["report"]["runs"] = v; },
      "Eval output directories or report.json files");

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
      return app.exit(e);
    } catch (const CLI::ParseError& e) {
      app.exit(e);
      return 2;
    }
    if (eval->parsed()) {
      if (eval_kind->count() && eval_all->count()) {
        throw ConfigError("conflicting flags: --corruption and --all-corruptions");
      }
    }
    const std::string command = app.get_subcommands().front()->get_name();
    RunConfig config = resolve(command, config_path, flags);
    if (eval->parsed() && eval_sev->count() && !config.corruption && !config.all_corruptions) {
      throw ConfigError("conflicting flags: --severity needs --corruption or --all-corruptions");
    }
    run_command(config);
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace roads
