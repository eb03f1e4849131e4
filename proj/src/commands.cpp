#include "famda/commands.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "famda/dataset.hpp"
#include "famda/io.hpp"
#include "famda/synthworld.hpp"

namespace famda {

namespace {

constexpr std::uint64_t kSourceStream = 0x50;
constexpr std::uint64_t kTargetStream = 0x7A;

void require_dataset(const fs::path& dir) {
  const DatasetLayout layout{dir};
  if (!fs::exists(layout.manifest())) throw Error("missing " + layout.manifest().string());
  if (!fs::is_directory(layout.images())) throw Error("missing " + layout.images().string());
}

std::string fmt(const char* spec, double v) {
  if (std::isnan(v)) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace

void cmd_synth(const SynthArgs& args) {
  if (args.shift < 0.0) throw Error("shift must be >= 0");
  SceneDistribution scenes;
  scenes.height = args.height;
  scenes.width = args.width;
  scenes.horizon_min = args.height * scenes.horizon_min / 64;
  scenes.horizon_max = args.height * scenes.horizon_max / 64;
  const nlohmann::json echo = {{"command", "synth"},
                               {"n", args.n},
                               {"seed", args.seed},
                               {"shift", args.shift},
                               {"height", args.height},
                               {"width", args.width}};

  DatasetOptions source;
  source.num_images = args.n;
  source.scenes = scenes;
  source.seed = Rng::derive(args.seed, kSourceStream).next();
  source.force = args.force;
  source.name = "source";
  generate_dataset(args.out / "source", source, echo);

  DatasetOptions target = source;
  target.seed = Rng::derive(args.seed, kTargetStream).next();
  target.shift = ShiftSpec::with_strength(args.shift);
  target.name = "target";
  generate_dataset(args.out / "target", target, echo);
}

nlohmann::json refine_summary_json(const RefineSummary& summary) {
  nlohmann::json images = nlohmann::json::array();
  for (const auto& r : summary.images) {
    nlohmann::json item = {{"stem", r.stem}, {"changed_pixels", r.changed_pixels}};
    if (r.error) item["error"] = *r.error;
    images.push_back(item);
  }
  return {{"num_images", summary.images.size()},
          {"total_changed_pixels", summary.total_changed()},
          {"failures", summary.failures()},
          {"images", images}};
}

RefineSummary cmd_refine(const RefineArgs& args) {
  const DatasetLayout layout{args.data};
  require_dataset(args.data);
  const int classes = manifest_num_classes(layout);
  const fs::path cache = args.cache.value_or(layout.masks());
  const fs::path out = args.out.value_or(layout.refined_labels());

  RefineSummary summary;
  if (args.checkpoint) {
    if (!fs::exists(*args.checkpoint)) throw Error("missing " + args.checkpoint->string());
    const MultiTaskModel model = read_checkpoint(*args.checkpoint);
    if (model.num_classes() != classes) throw Error("checkpoint class count does not match the dataset");
    const TeacherFn teacher = [&model](const Image& img) { return forward(model, extract_features(img)).probs; };
    summary = refine_dataset(args.data, cache, out, classes, &teacher);
  } else {
    summary = refine_dataset(args.data, cache, out, classes);
  }
  write_json(out / "summary.json", refine_summary_json(summary));
  return summary;
}

TrainConfig resolve_train_config(const TrainArgs& args) {
  TrainConfig cfg;
  if (args.config_file) {
    if (!fs::exists(*args.config_file)) throw Error("missing " + args.config_file->string());
    const auto bytes = read_file(*args.config_file);
    cfg.apply(parse_key_values(std::string(bytes.begin(), bytes.end())));
  }
  cfg.apply(args.overrides);
  cfg.validate();
  return cfg;
}

TrainResult cmd_train(const TrainArgs& args) {
  const TrainConfig cfg = resolve_train_config(args);
  require_dataset(args.source);
  require_dataset(args.target);
  const TrainData data = load_train_data(args.source, args.target);

  std::vector<EvalSample> monitor;
  const DatasetLayout tgt{args.target};
  if (args.monitor && fs::is_directory(tgt.labels()) && fs::is_directory(tgt.depth())) {
    monitor = load_eval_set(args.target);
  }

  TrainResult result = train_loop(data, cfg, monitor.empty() ? nullptr : &monitor);

  fs::create_directories(args.out);
  write_checkpoint(args.out / "checkpoint.fmdl", result.student);
  write_checkpoint(args.out / "initial.fmdl", result.initial);
  write_text(args.out / "trace.jsonl", trace_to_jsonl(result.trace));
  nlohmann::json manifest = {{"command", "train"},
                             {"source", args.source.string()},
                             {"target", args.target.string()},
                             {"num_classes", data.num_classes},
                             {"num_source_images", data.source.size()},
                             {"num_target_images", data.target.size()},
                             {"config", cfg.to_json()}};
  if (!result.trace.empty()) manifest["final"] = result.trace.back();
  write_json(args.out / "manifest.json", manifest);
  return result;
}

Eigen::RowVector3d class_color(int cls) {
  static const std::array<Eigen::RowVector3d, kSceneClasses> palette = {
      Eigen::RowVector3d(0.27, 0.51, 0.71), Eigen::RowVector3d(0.50, 0.25, 0.50),
      Eigen::RowVector3d(0.27, 0.27, 0.27), Eigen::RowVector3d(0.00, 0.00, 0.56),
      Eigen::RowVector3d(0.60, 0.60, 0.60)};
  if (cls >= 0 && cls < kSceneClasses) return palette[static_cast<std::size_t>(cls)];
  const auto h = mix64(static_cast<std::uint64_t>(cls));
  return {static_cast<double>(h & 0xFF) / 255.0, static_cast<double>((h >> 8) & 0xFF) / 255.0,
          static_cast<double>((h >> 16) & 0xFF) / 255.0};
}

namespace {

void render_prediction(const fs::path& dir, const std::string& stem, const ForwardResult& fw, const DepthMap& gt,
                       const DepthEvalConfig& depth_cfg) {
  const GridShape shape = fw.probs.shape;
  const LabelMap labels = argmax_labels(fw.probs);
  Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> rgb(shape.size(), 3);
  for (Index i = 0; i < shape.size(); ++i) rgb.row(i) = class_color(labels.data(i));
  write_rgb_png(dir / (stem + "_seg.png"), shape, rgb);

  // Median-scaled depth, near = bright.
  const PixelMask mask = depth_valid_mask(gt, depth_cfg);
  DepthMap shown = fw.depth;
  if (mask.any()) shown = median_scale(fw.depth, gt, mask);
  for (Index i = 0; i < shape.size(); ++i) {
    const double d = std::clamp(shown.values(i), 0.0, depth_cfg.max_depth);
    rgb.row(i).setConstant(1.0 - d / depth_cfg.max_depth);
  }
  write_rgb_png(dir / (stem + "_depth.png"), shape, rgb);
}

}  // namespace

EvalReport cmd_eval(const EvalArgs& args) {
  if (!fs::exists(args.checkpoint)) throw Error("missing " + args.checkpoint.string());
  require_dataset(args.data);
  const MultiTaskModel model = read_checkpoint(args.checkpoint);
  const DatasetLayout layout{args.data};
  const int classes = manifest_num_classes(layout);
  if (classes != model.num_classes()) {
    throw Error("checkpoint has " + std::to_string(model.num_classes()) + " classes, dataset has " +
                std::to_string(classes));
  }
  const auto samples = load_eval_set(args.data);
  const DepthEvalConfig depth_cfg;
  EvalReport report = evaluate_model(model, samples, depth_cfg);
  report.config["checkpoint"] = args.checkpoint.string();
  report.config["data"] = args.data.string();

  if (args.render) {
    fs::create_directories(*args.render);
    parallel_for(samples.size(), [&](std::size_t i) {
      render_prediction(*args.render, samples[i].stem, forward(model, samples[i].features), samples[i].depth,
                        depth_cfg);
    });
  }
  if (args.out) {
    if (args.out->has_parent_path()) fs::create_directories(args.out->parent_path());
    write_json(*args.out, report.to_json());
  }
  return report;
}

std::string cmd_report(const ReportArgs& args) {
  if (args.inputs.empty()) throw Error("report needs at least one eval JSON");
  nlohmann::json runs = nlohmann::json::array();
  std::size_t max_classes = 0;
  for (const auto& path : args.inputs) {
    const auto j = read_json(path);
    for (const char* key : {"miou", "per_class_iou", "rmse_m", "num_images", "config"}) {
      if (!j.contains(key)) throw Error(path.string() + ": missing key " + key);
    }
    max_classes = std::max(max_classes, j.at("per_class_iou").size());
    runs.push_back({{"name", path.parent_path().filename().string() + "/" + path.stem().string()},
                    {"path", path.string()},
                    {"report", j}});
  }

  const auto value = [](const nlohmann::json& v) {
    return v.is_number() ? v.get<double>() : std::nan("");
  };
  std::ostringstream table;
  std::size_t name_width = 4;
  for (const auto& r : runs) name_width = std::max(name_width, r.at("name").get<std::string>().size());
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-*s", static_cast<int>(name_width), "run");
  table << buf << "  miou    rmse_m  images";
  for (std::size_t c = 0; c < max_classes; ++c) {
    const std::string head = c < kClassNames.size() ? kClassNames[c] : "c" + std::to_string(c);
    std::snprintf(buf, sizeof buf, "  %8s", head.c_str());
    table << buf;
  }
  table << '\n';
  for (const auto& r : runs) {
    const auto& rep = r.at("report");
    std::snprintf(buf, sizeof buf, "%-*s", static_cast<int>(name_width), r.at("name").get<std::string>().c_str());
    table << buf << "  " << fmt("%6.2f", 100.0 * value(rep.at("miou"))) << "  "
          << fmt("%6.3f", value(rep.at("rmse_m"))) << "  ";
    std::snprintf(buf, sizeof buf, "%6zu", rep.at("num_images").get<std::size_t>());
    table << buf;
    const auto& per_class = rep.at("per_class_iou");
    for (std::size_t c = 0; c < max_classes; ++c) {
      const double v = c < per_class.size() ? value(per_class[c]) : std::nan("");
      std::snprintf(buf, sizeof buf, "  %8s", fmt("%.2f", 100.0 * v).c_str());
      table << buf;
    }
    table << '\n';
  }

  if (args.out) {
    if (args.out->has_parent_path()) fs::create_directories(args.out->parent_path());
    write_json(*args.out, {{"runs", runs}});
  }
  return table.str();
}

}  // namespace famda
