#include "famda/selftrain.hpp"

#include <array>
#include <cmath>
#include <sstream>
#include <unordered_map>

#include "famda/dataset.hpp"
#include "famda/depthloss.hpp"
#include "famda/io.hpp"
#include "famda/refine.hpp"

namespace famda {

namespace {

constexpr std::uint64_t kInitStream = 0x1A17ULL;
constexpr std::uint64_t kStepSalt = 0x5EED5EED5EED5EEDULL;

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw Error("config key " + key + ": expected a boolean, got '" + v + "'");
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw Error("config key " + key + ": expected a number, got '" + v + "'");
  }
}

long long parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long i = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw Error("config key " + key + ": expected an integer, got '" + v + "'");
  }
}

std::uint64_t parse_seed(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
    const auto i = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw Error("config key " + key + ": expected an unsigned integer, got '" + v + "'");
  }
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void TrainConfig::validate() const {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw Error("alpha must lie in (0, 1]");
  if (!(beta >= 0.0)) throw Error("beta must be >= 0");
  if (!(lr >= 0.0)) throw Error("lr must be >= 0");
  if (iters < 0 || warmup < 0) throw Error("iters and warmup must be >= 0");
  if (batch <= 0) throw Error("batch must be positive");
  if (!(quality_tau >= 0.0 && quality_tau <= 1.0)) throw Error("tau must lie in [0, 1]");
  if (crop <= 0) throw Error("crop must be positive");
  if (!(jitter >= 0.0 && jitter <= 1.0)) throw Error("jitter must lie in [0, 1]");
  if (log_every <= 0 || eval_every <= 0) throw Error("logging intervals must be positive");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"alpha", alpha},
          {"beta", beta},
          {"lr", lr},
          {"iters", iters},
          {"batch", batch},
          {"seed", seed},
          {"tau", quality_tau},
          {"mix", mix},
          {"refine", refine},
          {"source_only", source_only},
          {"warmup", warmup},
          {"crop", crop},
          {"jitter", jitter},
          {"depth_loss", depth_loss == DepthLossKind::kSsi ? "ssi" : "plain"},
          {"log_every", log_every},
          {"eval_every", eval_every},
          {"init_range", init_range},
          {"ssi_project", ssi_project}};
}

void TrainConfig::apply(const std::map<std::string, std::string>& kv) {
  for (const auto& [key, v] : kv) {
    if (key == "alpha") alpha = parse_double(key, v);
    else if (key == "beta") beta = parse_double(key, v);
    else if (key == "lr") lr = parse_double(key, v);
    else if (key == "iters") iters = static_cast<int>(parse_int(key, v));
    else if (key == "batch") batch = static_cast<int>(parse_int(key, v));
    else if (key == "seed") seed = parse_seed(key, v);
    else if (key == "tau") quality_tau = parse_double(key, v);
    else if (key == "mix") mix = parse_bool(key, v);
    else if (key == "refine") refine = parse_bool(key, v);
    else if (key == "source_only") source_only = parse_bool(key, v);
    else if (key == "warmup") warmup = static_cast<int>(parse_int(key, v));
    else if (key == "crop") crop = static_cast<Index>(parse_int(key, v));
    else if (key == "jitter") jitter = parse_double(key, v);
    else if (key == "depth_loss") {
      if (v == "ssi") depth_loss = DepthLossKind::kSsi;
      else if (v == "plain") depth_loss = DepthLossKind::kPlain;
      else throw Error("config key depth_loss: expected ssi or plain");
    } else if (key == "log_every") log_every = static_cast<int>(parse_int(key, v));
    else if (key == "eval_every") eval_every = static_cast<int>(parse_int(key, v));
    else if (key == "init_range") init_range = parse_double(key, v);
    else if (key == "ssi_project") ssi_project = parse_bool(key, v);
    else throw Error("unknown config key '" + key + "'");
  }
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error("config line " + std::to_string(lineno) + ": expected key=value");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

EmaScope ema_scope(const ParamLayout& layout) {
  return {layout.shared_size() + layout.seg_size(), layout.depth_size()};
}

MultiTaskModel make_teacher(const MultiTaskModel& student) {
  MultiTaskModel teacher(student.num_classes(), student.feature_dim(), false);
  teacher.params() = student.params().head(ema_scope(student.layout()).tracked);
  return teacher;
}

MultiTaskModel update_teacher(const MultiTaskModel& teacher, const MultiTaskModel& student, double alpha) {
  const Index tracked = ema_scope(student.layout()).tracked;
  if (teacher.params().size() != tracked) throw Error("teacher does not match the student's tracked partition");
  MultiTaskModel out = teacher;
  out.params() = ema_update(teacher.params(), student.params().head(tracked), alpha);
  return out;
}

TrainData load_train_data(const std::filesystem::path& source_dir, const std::filesystem::path& target_dir) {
  const DatasetLayout src{source_dir};
  const DatasetLayout tgt{target_dir};
  TrainData data;
  data.num_classes = manifest_num_classes(src);
  if (manifest_num_classes(tgt) != data.num_classes) throw Error("source and target class counts differ");

  const auto src_stems = list_stems(src.images());
  data.source.resize(src_stems.size());
  parallel_for(src_stems.size(), [&](std::size_t i) {
    auto& s = data.source[i];
    s.stem = src_stems[i];
    s.image = read_image_png(src.image(s.stem));
    s.labels = read_label_png(src.label(s.stem), data.num_classes);
  });

  const auto tgt_stems = list_stems(tgt.images());
  data.target.resize(tgt_stems.size());
  parallel_for(tgt_stems.size(), [&](std::size_t i) {
    auto& t = data.target[i];
    t.stem = tgt_stems[i];
    t.image = read_image_png(tgt.image(t.stem));
    if (fs::exists(tgt.mask(t.stem))) t.masks = read_maskset(tgt.mask(t.stem));
    if (fs::exists(tgt.pseudo(t.stem))) t.pseudo_depth = read_fdpt(tgt.pseudo(t.stem));
    t.clean_features = extract_features(t.image);
  });
  return data;
}

std::vector<EvalSample> load_eval_set(const std::filesystem::path& dir) {
  const DatasetLayout layout{dir};
  const int num_classes = manifest_num_classes(layout);
  const auto stems = list_stems(layout.images());
  std::vector<EvalSample> out(stems.size());
  parallel_for(stems.size(), [&](std::size_t i) {
    auto& e = out[i];
    e.stem = stems[i];
    e.features = extract_features(read_image_png(layout.image(e.stem)));
    e.labels = read_label_png(layout.label(e.stem), num_classes);
    e.depth = read_fdpt(layout.gt_depth(e.stem));
  });
  return out;
}

PseudoLabel make_pseudo_label(const MultiTaskModel& teacher, const FeatureGrid& clean_features, const MaskSet* masks,
                              double quality_tau) {
  const auto fw = forward(teacher, clean_features);
  PseudoLabel out;
  out.raw = argmax_labels(fw.probs);
  const Index confident = (fw.probs.data.rowwise().maxCoeff().array() >= quality_tau).count();
  out.quality = static_cast<double>(confident) / static_cast<double>(clean_features.shape.size());
  out.labels = masks ? majority_vote_refine(out.raw, fw.probs, *masks) : out.raw;
  return out;
}

namespace {

struct ItemOutput {
  ParamVec grad;
  LossBreakdown losses;
  ItemRecord record;
};

ItemOutput run_item(const MultiTaskModel& student, const MultiTaskModel& teacher, const SourceSample& src,
                    const TargetSample* tgt, const TrainConfig& cfg, Rng& rng, bool adapt, bool keep_record) {
  ItemOutput out;

  const CropWindow src_window = draw_crop_window(rng, src.image.shape, cfg.crop);
  const Image src_crop = apply_window(src.image, src_window);
  const LabelMap src_labels = apply_window(src.labels, src_window);
  const FeatureGrid src_features = extract_features(src_crop);
  const auto src_fw = forward(student, src_features);
  const auto src_ce = ce_loss(src_fw.probs, src_labels);
  out.grad = backward(student, src_features, src_ce.grad_logits, {});
  out.losses.l_ce_s = src_ce.loss;
  if (keep_record) {
    out.record.src_image = src_crop;
    out.record.src_labels = src_labels;
  }

  if (adapt) {
    if (!tgt->pseudo_depth) throw Error("target image " + tgt->stem + ": missing pseudo-depth map");
    if (cfg.refine && !tgt->masks) throw Error("target image " + tgt->stem + ": missing mask cache");

    const PseudoLabel pseudo =
        make_pseudo_label(teacher, tgt->clean_features, cfg.refine ? &*tgt->masks : nullptr, cfg.quality_tau);
    const AlignedTriple crop = random_crop_flip(tgt->image, pseudo.labels, *tgt->pseudo_depth, rng, cfg.crop);

    // Depth stream: the plain target crop, never class-mixed.
    const Image depth_image = photometric_jitter(crop.image, rng, cfg.jitter);
    const FeatureGrid depth_features = extract_features(depth_image);
    const auto depth_fw = forward(student, depth_features);
    const bool has_depth = crop.depth.valid.any();
    SsiLossAndGrad depth{0.0, Eigen::VectorXd::Zero(crop.depth.shape.size())};
    if (has_depth) {
      depth = cfg.depth_loss == DepthLossKind::kSsi ? ssi_rmse_grad(depth_fw.depth, crop.depth)
                                                    : plain_rmse_grad(depth_fw.depth, crop.depth);
    }
    Eigen::VectorXd depth_grad = depth.grad;
    if (has_depth && cfg.depth_loss == DepthLossKind::kSsi && cfg.ssi_project) {
      depth_grad = project_out_affine(depth_grad, depth_fw.depth.values, joint_validity(depth_fw.depth, crop.depth));
    }
    depth_grad *= cfg.beta;

    CeResult tgt_ce;
    if (cfg.mix) {
      const MixResult mixed = class_mix(src_crop, src_labels, crop.image, crop.labels, rng);
      const Image seg_image = photometric_jitter(mixed.image, rng, cfg.jitter);
      const Eigen::VectorXd weights = mixed.paste.cast<double>().matrix() +
                                      pseudo.quality * (1.0 - mixed.paste.cast<double>()).matrix();
      const FeatureGrid seg_features = extract_features(seg_image);
      const auto seg_fw = forward(student, seg_features);
      tgt_ce = ce_loss(seg_fw.probs, mixed.labels, weights);
      out.grad += backward(student, seg_features, tgt_ce.grad_logits, {});
      if (cfg.beta > 0.0) {
        out.grad += backward(student, depth_features,
                             PixelMatrix<double>::Zero(depth_features.shape.size(), student.num_classes()), depth_grad);
      }
      if (keep_record) {
        out.record.seg_image = seg_image;
        out.record.seg_labels = mixed.labels;
        out.record.seg_weights = weights;
        out.record.paste = mixed.paste;
      }
    } else {
      const Eigen::VectorXd weights = Eigen::VectorXd::Constant(crop.image.shape.size(), pseudo.quality);
      tgt_ce = ce_loss(depth_fw.probs, crop.labels, weights);
      out.grad += backward(student, depth_features, tgt_ce.grad_logits, depth_grad);
      if (keep_record) {
        out.record.seg_image = depth_image;
        out.record.seg_labels = crop.labels;
        out.record.seg_weights = weights;
        out.record.paste = PixelMask::Constant(crop.image.shape.size(), false);
      }
    }
    out.losses.l_ce_t = tgt_ce.loss;
    out.losses.l_rmse_t = depth.loss;
    out.losses.q_mean = pseudo.quality;
    if (keep_record) {
      out.record.depth_image = depth_image;
      out.record.depth_target = crop.depth;
      out.record.quality = pseudo.quality;
    }
  }
  out.losses.l_total = out.losses.l_ce_s + out.losses.l_ce_t + cfg.beta * out.losses.l_rmse_t;
  return out;
}

}  // namespace

StepOutput train_step(const MultiTaskModel& student, const MultiTaskModel& teacher,
                      const std::vector<const SourceSample*>& src_batch,
                      const std::vector<const TargetSample*>& tgt_batch, const TrainConfig& cfg, Rng& rng, bool adapt,
                      bool keep_records) {
  if (src_batch.empty()) throw Error("train_step: empty source batch");
  if (adapt && tgt_batch.size() != src_batch.size()) throw Error("train_step: batch sizes differ");

  const std::uint64_t stream = rng.next();
  std::vector<ItemOutput> items(src_batch.size());
  parallel_for(items.size(), [&](std::size_t b) {
    Rng item_rng = Rng::derive(stream, b);
    items[b] = run_item(student, teacher, *src_batch[b], adapt ? tgt_batch[b] : nullptr, cfg, item_rng, adapt,
                        keep_records);
  });

  StepOutput out{student, teacher, {}, ParamVec::Zero(student.params().size()), {}};
  const double inv = 1.0 / static_cast<double>(items.size());
  for (auto& item : items) {
    out.grad += item.grad;
    out.losses.l_ce_s += item.losses.l_ce_s * inv;
    out.losses.l_ce_t += item.losses.l_ce_t * inv;
    out.losses.l_rmse_t += item.losses.l_rmse_t * inv;
    out.losses.q_mean += item.losses.q_mean * inv;
    if (keep_records) out.records.push_back(std::move(item.record));
  }
  out.grad *= inv;
  out.losses.l_total = out.losses.l_ce_s + out.losses.l_ce_t + cfg.beta * out.losses.l_rmse_t;

  out.student.params() = sgd_step(student.params(), out.grad, cfg.lr);
  // The teacher follows the student as it was when the pseudo-labels were made.
  if (adapt) out.teacher = update_teacher(teacher, student, cfg.alpha);
  return out;
}

EvalReport evaluate_model(const MultiTaskModel& model, const std::vector<EvalSample>& samples,
                          const DepthEvalConfig& depth_cfg) {
  if (samples.empty()) throw Error("empty evaluation set");
  std::vector<ConfusionMatrix> confusions(samples.size(), ConfusionMatrix(model.num_classes()));
  std::vector<double> rmse(samples.size(), 0.0);
  parallel_for(samples.size(), [&](std::size_t i) {
    const auto fw = forward(model, samples[i].features);
    confusions[i].add(argmax_labels(fw.probs), samples[i].labels);
    rmse[i] = evaluate_depth(fw.depth, samples[i].depth, depth_cfg);
  });
  ConfusionMatrix total(model.num_classes());
  double rmse_sum = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    total += confusions[i];
    rmse_sum += rmse[i];
  }
  EvalReport report;
  report.seg = compute_miou(total);
  report.rmse_m = rmse_sum / static_cast<double>(samples.size());
  report.num_images = samples.size();
  report.config = {{"min_depth", depth_cfg.min_depth}, {"max_depth", depth_cfg.max_depth}};
  return report;
}

namespace {

struct PseudoAccuracy {
  double raw = 0.0;
  double refined = 0.0;
};

// Accuracy of the teacher's pseudo-labels against target ground truth, with
// and without mask refinement, pooled over every target image that has both.
std::optional<PseudoAccuracy> pseudo_label_accuracy(const MultiTaskModel& teacher, const TrainData& data,
                                                    const std::vector<EvalSample>& monitor, double tau) {
  std::unordered_map<std::string, const EvalSample*> by_stem;
  for (const auto& e : monitor) by_stem[e.stem] = &e;
  std::vector<std::array<Index, 3>> counts(data.target.size(), {0, 0, 0});
  parallel_for(data.target.size(), [&](std::size_t i) {
    const auto& t = data.target[i];
    const auto it = by_stem.find(t.stem);
    if (it == by_stem.end() || !t.masks) return;
    const PseudoLabel pl = make_pseudo_label(teacher, t.clean_features, &*t.masks, tau);
    const auto& gt = it->second->labels;
    for (Index p = 0; p < gt.data.size(); ++p) {
      if (gt.data(p) == kIgnore) continue;
      ++counts[i][0];
      counts[i][1] += pl.raw.data(p) == gt.data(p);
      counts[i][2] += pl.labels.data(p) == gt.data(p);
    }
  });
  std::array<Index, 3> total{0, 0, 0};
  for (const auto& c : counts) {
    for (int k = 0; k < 3; ++k) total[static_cast<std::size_t>(k)] += c[static_cast<std::size_t>(k)];
  }
  if (total[0] == 0) return std::nullopt;
  return PseudoAccuracy{static_cast<double>(total[1]) / static_cast<double>(total[0]),
                        static_cast<double>(total[2]) / static_cast<double>(total[0])};
}

}  // namespace

TrainResult train_loop(const TrainData& data, const TrainConfig& cfg, const std::vector<EvalSample>* monitor) {
  cfg.validate();
  if (data.source.empty()) throw Error("source dataset is empty");
  const bool adapting = !cfg.source_only && cfg.iters > cfg.warmup;
  if (adapting && data.target.empty()) throw Error("target dataset is empty");

  Rng init_rng = Rng::derive(cfg.seed, kInitStream);
  TrainResult result;
  result.initial = MultiTaskModel::random(data.num_classes, init_rng, cfg.init_range);
  result.student = result.initial;

  const auto add_metrics = [&](nlohmann::json& entry) {
    if (!monitor || monitor->empty()) return;
    const auto report = evaluate_model(result.student, *monitor);
    entry["miou"] = report.seg.miou;
    entry["rmse"] = report.rmse_m;
    if (result.teacher) {
      if (const auto acc = pseudo_label_accuracy(*result.teacher, data, *monitor, cfg.quality_tau)) {
        entry["pl_acc_raw"] = acc->raw;
        entry["pl_acc_refined"] = acc->refined;
      }
    }
  };

  if (monitor) {
    nlohmann::json entry = {{"step", 0}, {"phase", "init"}};
    add_metrics(entry);
    result.trace.push_back(entry);
  }

  LossBreakdown acc;
  int acc_steps = 0;
  for (int step = 0; step < cfg.iters; ++step) {
    const bool adapt = !cfg.source_only && step >= cfg.warmup;
    if (adapt && !result.teacher) result.teacher = make_teacher(result.student);

    Rng step_rng = Rng::derive(cfg.seed ^ kStepSalt, static_cast<std::uint64_t>(step));
    std::vector<const SourceSample*> src_batch;
    std::vector<const TargetSample*> tgt_batch;
    for (int b = 0; b < cfg.batch; ++b) {
      src_batch.push_back(&data.source[step_rng.uniform_int(data.source.size())]);
      if (adapt) tgt_batch.push_back(&data.target[step_rng.uniform_int(data.target.size())]);
    }

    auto out = train_step(result.student, adapt ? *result.teacher : result.student, src_batch, tgt_batch, cfg,
                          step_rng, adapt);
    result.student = std::move(out.student);
    if (adapt) result.teacher = std::move(out.teacher);

    acc.l_ce_s += out.losses.l_ce_s;
    acc.l_ce_t += out.losses.l_ce_t;
    acc.l_rmse_t += out.losses.l_rmse_t;
    acc.l_total += out.losses.l_total;
    acc.q_mean += out.losses.q_mean;
    ++acc_steps;

    const int done = step + 1;
    const bool last = done == cfg.iters;
    if (done % cfg.log_every == 0 || last) {
      const double inv = 1.0 / acc_steps;
      nlohmann::json entry = {{"step", done},
                              {"phase", adapt ? "adapt" : (cfg.source_only ? "source_only" : "warmup")},
                              {"l_ce_s", acc.l_ce_s * inv},
                              {"l_ce_t", acc.l_ce_t * inv},
                              {"l_rmse_t", acc.l_rmse_t * inv},
                              {"l_total", acc.l_total * inv},
                              {"q_mean", acc.q_mean * inv}};
      if (done % cfg.eval_every == 0 || last) add_metrics(entry);
      result.trace.push_back(entry);
      acc = {};
      acc_steps = 0;
    }
  }
  return result;
}

TrainResult source_only_baseline(const TrainData& data, TrainConfig cfg, const std::vector<EvalSample>* monitor) {
  cfg.source_only = true;
  return train_loop(data, cfg, monitor);
}

std::string trace_to_jsonl(const std::vector<nlohmann::json>& trace) {
  std::string out;
  for (const auto& entry : trace) out += entry.dump() + "\n";
  return out;
}

}  // namespace famda
