#pragma once

// Subcommand bodies behind the famda executable. Each throws famda::Error on
// runtime failure; flag parsing lives in the executable.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "famda/refine.hpp"
#include "famda/selftrain.hpp"

namespace famda {

struct SynthArgs {
  std::filesystem::path out;
  std::size_t n = 200;
  std::uint64_t seed = 0;
  double shift = 0.6;
  Index height = 64;
  Index width = 64;
  bool force = false;
};

/// Writes `<out>/source` (no shift) and `<out>/target` (shifted).
void cmd_synth(const SynthArgs& args);

struct RefineArgs {
  std::filesystem::path data;
  std::optional<std::filesystem::path> cache;       // default <data>/masks
  std::optional<std::filesystem::path> out;         // default <data>/refined_labels
  std::optional<std::filesystem::path> checkpoint;  // teacher; else <data>/teacher_labels
};

/// Also writes `summary.json` next to the refined labels.
RefineSummary cmd_refine(const RefineArgs& args);
nlohmann::json refine_summary_json(const RefineSummary& summary);

struct TrainArgs {
  std::filesystem::path source;
  std::filesystem::path target;
  std::filesystem::path out;
  std::optional<std::filesystem::path> config_file;
  std::map<std::string, std::string> overrides;  // applied after the config file
  bool monitor = true;
};

/// Effective configuration: defaults, then the config file, then overrides.
TrainConfig resolve_train_config(const TrainArgs& args);

/// Writes checkpoint.fmdl, initial.fmdl, trace.jsonl and manifest.json.
TrainResult cmd_train(const TrainArgs& args);

struct EvalArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path data;
  std::optional<std::filesystem::path> out;
  std::optional<std::filesystem::path> render;
};

EvalReport cmd_eval(const EvalArgs& args);

/// RGB triple in [0,1] for a class index.
Eigen::RowVector3d class_color(int cls);

struct ReportArgs {
  std::vector<std::filesystem::path> inputs;
  std::optional<std::filesystem::path> out;
};

/// Aggregates eval reports; returns the rendered text table.
std::string cmd_report(const ReportArgs& args);

}  // namespace famda
