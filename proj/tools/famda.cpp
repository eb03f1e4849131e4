#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "famda/commands.hpp"
#include "famda/error.hpp"

namespace {

template <typename T>
void set_if(std::map<std::string, std::string>& kv, const char* key, const std::optional<T>& v) {
  if (!v) return;
  std::ostringstream s;
  s.precision(17);
  s << *v;
  kv[key] = s.str();
}

std::optional<std::filesystem::path> opt_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::filesystem::path(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"famda: desk-scale foundation-model-assisted domain adaptation"};
  app.require_subcommand(1);

  famda::SynthArgs synth;
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "generate source and shifted target datasets");
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  synth_cmd->add_option("--n", synth.n, "images per domain")->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed)->capture_default_str();
  synth_cmd->add_option("--shift", synth.shift, "target shift strength")->capture_default_str()->check(
      CLI::NonNegativeNumber);
  synth_cmd->add_option("--height", synth.height)->capture_default_str()->check(CLI::PositiveNumber);
  synth_cmd->add_option("--width", synth.width)->capture_default_str()->check(CLI::PositiveNumber);
  synth_cmd->add_flag("--force", synth.force, "overwrite an existing dataset");

  std::string refine_data, refine_cache, refine_out, refine_ckpt;
  auto* refine_cmd = app.add_subcommand("refine", "mask-vote refinement of teacher labels");
  refine_cmd->add_option("--data", refine_data, "dataset directory")->required();
  refine_cmd->add_option("--cache", refine_cache, "mask cache directory (default <data>/masks)");
  refine_cmd->add_option("--out", refine_out, "output directory (default <data>/refined_labels)");
  refine_cmd->add_option("--checkpoint", refine_ckpt, "teacher checkpoint (default: read <data>/teacher_labels)");

  famda::TrainArgs train;
  std::string train_data, train_source, train_target, train_out, train_config;
  std::optional<double> alpha, beta, tau, lr, jitter;
  std::optional<int> iters, batch, warmup;
  std::optional<std::uint64_t> seed;
  std::string depth_loss;
  bool source_only = false, no_refine = false, no_mix = false, no_monitor = false;
  auto* train_cmd = app.add_subcommand("train", "self-training on source + target");
  train_cmd->add_option("--data", train_data, "directory holding source/ and target/");
  train_cmd->add_option("--source", train_source, "source dataset (overrides --data)");
  train_cmd->add_option("--target", train_target, "target dataset (overrides --data)");
  train_cmd->add_option("--out", train_out, "run directory")->required();
  train_cmd->add_option("--config", train_config, "key=value config file; flags win");
  train_cmd->add_option("--alpha", alpha);
  train_cmd->add_option("--beta", beta);
  train_cmd->add_option("--tau", tau);
  train_cmd->add_option("--lr", lr);
  train_cmd->add_option("--jitter", jitter);
  train_cmd->add_option("--iters", iters);
  train_cmd->add_option("--batch", batch);
  train_cmd->add_option("--warmup", warmup);
  train_cmd->add_option("--seed", seed);
  train_cmd->add_option("--depth-loss", depth_loss)->check(CLI::IsMember({"ssi", "plain"}));
  train_cmd->add_flag("--source-only", source_only, "disable every target loss");
  train_cmd->add_flag("--no-refine", no_refine, "use raw teacher argmax as pseudo-labels");
  train_cmd->add_flag("--no-mix", no_mix, "disable class-mix");
  train_cmd->add_flag("--no-monitor", no_monitor, "skip periodic target metrics in the trace");

  famda::EvalArgs eval;
  std::string eval_ckpt, eval_data, eval_out, eval_render;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a labeled split");
  eval_cmd->add_option("--checkpoint", eval_ckpt)->required();
  eval_cmd->add_option("--data", eval_data)->required();
  eval_cmd->add_option("--out", eval_out, "report JSON path (default: stdout)");
  eval_cmd->add_option("--render", eval_render, "write color label and depth PNGs here");

  std::vector<std::string> report_inputs;
  std::string report_out;
  auto* report_cmd = app.add_subcommand("report", "tabulate eval reports");
  report_cmd->add_option("inputs", report_inputs, "eval JSON files")->required();
  report_cmd->add_option("--out", report_out, "aggregated JSON path");

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

  try {
    if (*synth_cmd) {
      synth.out = synth_out;
      famda::cmd_synth(synth);
      std::printf("wrote %s/source and %s/target\n", synth_out.c_str(), synth_out.c_str());
    } else if (*refine_cmd) {
      const auto summary = famda::cmd_refine(
          {refine_data, opt_path(refine_cache), opt_path(refine_out), opt_path(refine_ckpt)});
      std::cout << famda::refine_summary_json(summary).dump(2) << '\n';
      return summary.failures() == 0 ? 0 : 1;
    } else if (*train_cmd) {
      if (train_data.empty() && (train_source.empty() || train_target.empty())) {
        std::cerr << "train: give --data or both --source and --target\n";
        return 2;
      }
      train.source = train_source.empty() ? std::filesystem::path(train_data) / "source" : std::filesystem::path(train_source);
      train.target = train_target.empty() ? std::filesystem::path(train_data) / "target" : std::filesystem::path(train_target);
      train.out = train_out;
      train.config_file = opt_path(train_config);
      train.monitor = !no_monitor;
      auto& kv = train.overrides;
      set_if(kv, "alpha", alpha);
      set_if(kv, "beta", beta);
      set_if(kv, "tau", tau);
      set_if(kv, "lr", lr);
      set_if(kv, "jitter", jitter);
      set_if(kv, "iters", iters);
      set_if(kv, "batch", batch);
      set_if(kv, "warmup", warmup);
      set_if(kv, "seed", seed);
      if (!depth_loss.empty()) kv["depth_loss"] = depth_loss;
      if (source_only) kv["source_only"] = "true";
      if (no_refine) kv["refine"] = "false";
      if (no_mix) kv["mix"] = "false";
      const auto result = famda::cmd_train(train);
      if (!result.trace.empty()) std::cout << result.trace.back().dump() << '\n';
    } else if (*eval_cmd) {
      eval.checkpoint = eval_ckpt;
      eval.data = eval_data;
      eval.out = opt_path(eval_out);
      eval.render = opt_path(eval_render);
      const auto report = famda::cmd_eval(eval);
      if (!eval.out) std::cout << report.to_json().dump(2) << '\n';
    } else if (*report_cmd) {
      famda::ReportArgs args;
      for (const auto& s : report_inputs) args.inputs.emplace_back(s);
      args.out = opt_path(report_out);
      std::cout << famda::cmd_report(args);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
