#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "roads/corruption.hpp"
#include "roads/evaluation.hpp"
#include "roads/toy_data.hpp"
#include "roads/training.hpp"

namespace roads {

// One schema for every command. Unused sections are carried along so a
// snapshot replays without any other input.
struct RunConfig {
  std::string command;
  std::filesystem::path out;
  std::uint64_t seed = 0;
  std::filesystem::path data;
  std::filesystem::path checkpoint;
  ToySpec toy;
  TrainConfig train;
  std::optional<CorruptionKind> corruption;
  int severity = 3;
  bool all_corruptions = false;
  int eval_batch_size = 32;
  double sigma = 4.0;
  double fpr_limit = 0.3;
  std::size_t max_thresholds = 5000;
  bool heatmaps = false;
  std::vector<std::filesystem::path> runs;

  // Cross-field checks for the selected command; throws ConfigError.
  void validate() const;
  nlohmann::json to_json() const;
  // Missing keys keep their current values; unknown keys raise ConfigError naming the key.
  void merge_json(const nlohmann::json& j);
};

RunConfig load_run_config(const std::filesystem::path& path);

// Commands; each writes resolved_config.json under config.out first.
void cmd_toy_gen(const RunConfig& config);
void cmd_train(const RunConfig& config);
void cmd_eval(const RunConfig& config);
void cmd_corrupt(const RunConfig& config);
void cmd_report(const RunConfig& config);
void run_command(const RunConfig& config);

// One row per preset, averaged over the runs carrying that preset.
struct ReportRow {
  std::string preset;
  int runs = 0;
  double id_i_auroc = 0.0;
  double id_p_auroc = 0.0;
  double id_p_aupro = 0.0;
  std::vector<double> ood_p_aupro;  // in all_corruption_kinds() order
  double mean_ood_p_aupro = 0.0;
};
std::vector<ReportRow> build_report(const std::vector<nlohmann::json>& eval_reports);

// Exit codes: 0 ok, 1 unexpected failure, 2 config, 3 data, 4 numerical.
int run_cli(int argc, char** argv);

}  // namespace roads
