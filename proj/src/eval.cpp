#include "famda/eval.hpp"

#include <cmath>
#include <limits>

namespace famda {

void DepthEvalConfig::validate() const {
  if (!(min_depth > 0.0 && min_depth < max_depth)) throw Error("depth range must satisfy 0 < min < max");
}

PixelMask depth_valid_mask(const DepthMap& gt, const DepthEvalConfig& cfg) {
  cfg.validate();
  return gt.valid && (gt.values.array() >= cfg.min_depth) && (gt.values.array() <= cfg.max_depth);
}

DepthMap median_scale(const DepthMap& pred, const DepthMap& gt, const PixelMask& mask) {
  if (pred.shape != gt.shape || mask.size() != pred.shape.size()) throw Error("median_scale: shape mismatch");
  if (!mask.any()) throw Error("empty mask");
  const double pred_med = median(gather(pred.values, mask));
  if (pred_med == 0.0) throw Error("degenerate prediction median");
  const double ratio = median(gather(gt.values, mask)) / pred_med;
  DepthMap out = pred;
  out.values = mask.select(pred.values * ratio, pred.values);
  return out;
}

double masked_rmse(const DepthMap& a, const DepthMap& b, const PixelMask& mask) {
  if (a.shape != b.shape || mask.size() != a.shape.size()) throw Error("masked_rmse: shape mismatch");
  const Index n = mask.count();
  if (n == 0) throw Error("empty mask");
  double sum = 0.0;
  for (Index i = 0; i < mask.size(); ++i) {
    if (!mask(i)) continue;
    const double d = a.values(i) - b.values(i);
    sum += d * d;
  }
  return std::sqrt(sum / static_cast<double>(n));
}

double evaluate_depth(const DepthMap& pred, const DepthMap& gt, const DepthEvalConfig& cfg) {
  const PixelMask mask = depth_valid_mask(gt, cfg);
  if (!mask.any()) throw Error("empty mask");
  return masked_rmse(median_scale(pred, gt, mask), gt, mask);
}

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : counts_(decltype(counts_)::Zero(num_classes, num_classes)), missed_(decltype(missed_)::Zero(num_classes)) {}

void ConfusionMatrix::add(const LabelMap& pred, const LabelMap& gt) {
  if (pred.shape != gt.shape) throw Error("miou: shape mismatch");
  if (pred.num_classes != num_classes() || gt.num_classes != num_classes()) throw Error("miou: class count mismatch");
  for (Index i = 0; i < gt.data.size(); ++i) {
    const auto g = gt.data(i);
    if (g == kIgnore) continue;
    const auto p = pred.data(i);
    if (p == kIgnore) {
      ++missed_(g);
    } else {
      ++counts_(g, p);
    }
  }
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.num_classes() != num_classes()) throw Error("confusion matrices differ in class count");
  counts_ += other.counts_;
  missed_ += other.missed_;
  return *this;
}

MiouResult compute_miou(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw Error("no scored pixels");
  const auto& m = cm.counts();
  MiouResult out;
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < cm.num_classes(); ++c) {
    const auto tp = m(c, c);
    const auto fn = m.row(c).sum() - tp + cm.missed()(c);
    const auto fp = m.col(c).sum() - tp;
    const auto denom = tp + fp + fn;
    if (denom == 0) {
      out.per_class_iou.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const double iou = static_cast<double>(tp) / static_cast<double>(denom);
    out.per_class_iou.push_back(iou);
    sum += iou;
    ++present;
  }
  out.miou = sum / present;
  return out;
}

MiouResult miou(const LabelMap& pred, const LabelMap& gt) {
  ConfusionMatrix cm(gt.num_classes);
  cm.add(pred, gt);
  return compute_miou(cm);
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json per_class = nlohmann::json::array();
  for (double v : seg.per_class_iou) per_class.push_back(std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
  return {{"miou", seg.miou}, {"per_class_iou", per_class}, {"rmse_m", rmse_m}, {"num_images", num_images},
          {"config", config}};
}

}  // namespace famda
