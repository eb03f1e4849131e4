#pragma once

// EMA student/teacher self-training with mask-refined segmentation
// pseudo-labels and scale/shift-invariant pseudo-depth supervision.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "famda/augment.hpp"
#include "famda/eval.hpp"
#include "famda/gridcore.hpp"
#include "famda/maskcache.hpp"
#include "famda/model.hpp"

namespace famda {

enum class DepthLossKind { kSsi, kPlain };

struct TrainConfig {
  double alpha = 0.999;         // EMA factor
  double beta = 0.1;            // depth loss weight
  double lr = 0.5;
  int iters = 2000;
  int batch = 2;
  std::uint64_t seed = 0;
  double quality_tau = 0.968;
  bool mix = true;
  bool refine = true;
  bool source_only = false;
  int warmup = 200;             // source-only steps before the teacher is copied from the student
  Index crop = 48;
  double jitter = 0.5;          // photometric jitter strength
  DepthLossKind depth_loss = DepthLossKind::kSsi;
  int log_every = 50;
  int eval_every = 250;
  double init_range = 0.1;
  bool ssi_project = true;       // drop the SSI gradient's offset/scale components

  void validate() const;
  nlohmann::json to_json() const;
  /// Applies flat "key=value" settings; unknown keys throw.
  void apply(const std::map<std::string, std::string>& kv);
};

std::map<std::string, std::string> parse_key_values(const std::string& text);

/// Elementwise alpha * teacher + (1 - alpha) * student.
template <typename T, typename S>
ParamVec ema_update(const Eigen::MatrixBase<T>& teacher, const Eigen::MatrixBase<S>& student, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw Error("alpha must lie in (0, 1]");
  if (teacher.size() != student.size()) throw Error("ema_update: length mismatch");
  return alpha * teacher + (1.0 - alpha) * student;
}

/// EMA-tracked block of the parameter vector: shared layer and segmentation
/// head. The depth head is never tracked; the teacher carries none.
struct EmaScope {
  Index tracked = 0;
  Index frozen = 0;
};
EmaScope ema_scope(const ParamLayout& layout);

/// A teacher initialised from the student's tracked partition.
MultiTaskModel make_teacher(const MultiTaskModel& student);

/// teacher <- ema_update(teacher, student[tracked], alpha).
MultiTaskModel update_teacher(const MultiTaskModel& teacher, const MultiTaskModel& student, double alpha);

struct SourceSample {
  std::string stem;
  Image image;
  LabelMap labels;
};

struct TargetSample {
  std::string stem;
  Image image;
  std::optional<MaskSet> masks;
  std::optional<DepthMap> pseudo_depth;
  FeatureGrid clean_features;  // teacher input, computed once
};

struct TrainData {
  int num_classes = 0;
  std::vector<SourceSample> source;
  std::vector<TargetSample> target;
};

/// Reads source images+labels and target images+mask caches+pseudo-depth.
/// Never touches source depth or any target ground truth.
TrainData load_train_data(const std::filesystem::path& source_dir, const std::filesystem::path& target_dir);

/// Target ground truth, used only for periodic monitoring.
struct EvalSample {
  std::string stem;
  FeatureGrid features;
  LabelMap labels;
  DepthMap depth;
};
std::vector<EvalSample> load_eval_set(const std::filesystem::path& dir);

struct PseudoLabel {
  LabelMap raw;      // teacher argmax
  LabelMap labels;   // refined (or raw when refinement is off)
  double quality = 0.0;  // fraction of pixels with max prob >= tau
};

/// Teacher forward on clean features, argmax, optional mask refinement. The
/// quality weight comes from the unrefined probabilities.
PseudoLabel make_pseudo_label(const MultiTaskModel& teacher, const FeatureGrid& clean_features, const MaskSet* masks,
                              double quality_tau);

struct LossBreakdown {
  double l_ce_s = 0.0;
  double l_ce_t = 0.0;
  double l_rmse_t = 0.0;
  double l_total = 0.0;
  double q_mean = 0.0;
};

/// Inputs each loss saw for one batch item; lets tests recompute the losses.
struct ItemRecord {
  Image src_image;
  LabelMap src_labels;
  Image seg_image;
  LabelMap seg_labels;
  Eigen::VectorXd seg_weights;
  Image depth_image;
  DepthMap depth_target;
  PixelMask paste;
  double quality = 0.0;
};

struct StepOutput {
  MultiTaskModel student;
  MultiTaskModel teacher;
  LossBreakdown losses;
  ParamVec grad;
  std::vector<ItemRecord> records;
};

/// One optimisation step over the paired batch. With `adapt` false only the
/// source CE is used and the teacher is returned unchanged.
StepOutput train_step(const MultiTaskModel& student, const MultiTaskModel& teacher,
                      const std::vector<const SourceSample*>& src_batch,
                      const std::vector<const TargetSample*>& tgt_batch, const TrainConfig& cfg, Rng& rng, bool adapt,
                      bool keep_records = false);

struct TrainResult {
  MultiTaskModel initial;
  MultiTaskModel student;
  std::optional<MultiTaskModel> teacher;
  std::vector<nlohmann::json> trace;
};

/// Runs cfg.iters steps. The first cfg.warmup steps are source-only, then the
/// teacher is copied from the student. `monitor` (target ground truth) feeds
/// only the periodic metrics in the trace.
TrainResult train_loop(const TrainData& data, const TrainConfig& cfg, const std::vector<EvalSample>* monitor = nullptr);

/// train_loop with every target loss disabled.
TrainResult source_only_baseline(const TrainData& data, TrainConfig cfg,
                                 const std::vector<EvalSample>* monitor = nullptr);

/// mIoU over the pooled confusion matrix; RMSE averaged over images.
EvalReport evaluate_model(const MultiTaskModel& model, const std::vector<EvalSample>& samples,
                          const DepthEvalConfig& depth_cfg = {});

std::string trace_to_jsonl(const std::vector<nlohmann::json>& trace);

}  // namespace famda
