#pragma once

#include <vector>

#include <nlohmann/json.hpp>

#include "famda/gridcore.hpp"

namespace famda {

struct DepthEvalConfig {
  double min_depth = 1e-3;  // meters
  double max_depth = 80.0;

  void validate() const;
};

/// True where gt is valid and min_depth <= gt <= max_depth. The mask comes
/// from ground truth only and is applied to both maps.
PixelMask depth_valid_mask(const DepthMap& gt, const DepthEvalConfig& cfg = {});

/// pred * med(gt[mask]) / med(pred[mask]) on masked pixels; other pixels are
/// copied unchanged. Predictions are not clamped.
DepthMap median_scale(const DepthMap& pred, const DepthMap& gt, const PixelMask& mask);

double masked_rmse(const DepthMap& a, const DepthMap& b, const PixelMask& mask);

/// Range mask, then median scaling, then RMSE (meters).
double evaluate_depth(const DepthMap& pred, const DepthMap& gt, const DepthEvalConfig& cfg = {});

/// Rows are ground truth, columns are predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  /// Tallies every pixel whose gt is not ignore. An ignore prediction on a
  /// scored pixel counts as a miss for the gt class.
  void add(const LabelMap& pred, const LabelMap& gt);
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);

  int num_classes() const { return static_cast<int>(counts_.rows()); }
  std::int64_t total() const { return counts_.sum() + missed_.sum(); }
  const Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>& counts() const { return counts_; }
  const Eigen::Matrix<std::int64_t, Eigen::Dynamic, 1>& missed() const { return missed_; }

 private:
  Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> counts_;
  Eigen::Matrix<std::int64_t, Eigen::Dynamic, 1> missed_;  // gt class scored against an ignore prediction
};

struct MiouResult {
  /// IoU per class; NaN for classes absent from both maps.
  std::vector<double> per_class_iou;
  double miou = 0.0;
};

/// IoU_c = TP / (TP + FP + FN); the mean skips classes absent from both maps.
MiouResult compute_miou(const ConfusionMatrix& cm);
MiouResult miou(const LabelMap& pred, const LabelMap& gt);

struct EvalReport {
  MiouResult seg;
  double rmse_m = 0.0;
  std::size_t num_images = 0;
  nlohmann::json config;

  /// {"miou", "per_class_iou", "rmse_m", "num_images", "config"}; absent
  /// classes are written as null.
  nlohmann::json to_json() const;
};

}  // namespace famda
