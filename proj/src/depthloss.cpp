#include "famda/depthloss.hpp"

#include <cmath>

namespace famda {

SsiNormalized ssi_normalize(const Eigen::VectorXd& values, const PixelMask& mask) {
  auto selected = gather(values, mask);
  if (selected.empty()) throw Error("no valid depth");
  SsiNormalized out;
  out.stats.valid_count = static_cast<Index>(selected.size());
  out.stats.med = median(selected);
  out.stats.scale = mean_abs_dev_from_median(selected);
  out.values = Eigen::Map<const Eigen::VectorXd>(selected.data(), static_cast<Index>(selected.size()));
  if (out.stats.scale < kDegenerateScale) {
    out.values.setZero();
  } else {
    out.values = (out.values.array() - out.stats.med) / out.stats.scale;
  }
  return out;
}

SsiNormalized ssi_normalize(const DepthMap& d) { return ssi_normalize(d.values, d.valid); }

PixelMask joint_validity(const DepthMap& pred, const DepthMap& pseudo) {
  if (pred.shape != pseudo.shape) throw Error("depth maps differ in shape");
  PixelMask joint = pred.valid && pseudo.valid;
  if (!joint.any()) throw Error("no valid depth");
  return joint;
}

namespace {

struct Normalized {
  PixelMask joint;
  SsiNormalized pred;
  SsiNormalized pseudo;
  double loss;
};

Normalized normalize_pair(const DepthMap& pred, const DepthMap& pseudo) {
  PixelMask joint = joint_validity(pred, pseudo);
  auto np = ssi_normalize(pred.values, joint);
  auto ny = ssi_normalize(pseudo.values, joint);
  const double loss = std::sqrt((np.values - ny.values).squaredNorm() / static_cast<double>(np.values.size()));
  return {std::move(joint), std::move(np), std::move(ny), loss};
}

}  // namespace

double ssi_rmse_loss(const DepthMap& pred, const DepthMap& pseudo) { return normalize_pair(pred, pseudo).loss; }

SsiLossAndGrad ssi_rmse_grad(const DepthMap& pred, const DepthMap& pseudo) {
  const auto n = normalize_pair(pred, pseudo);
  SsiLossAndGrad out{n.loss, Eigen::VectorXd::Zero(pred.shape.size())};
  if (n.loss == 0.0 || n.pred.stats.scale < kDegenerateScale) return out;
  const double denom = static_cast<double>(n.pred.stats.valid_count) * n.loss * n.pred.stats.scale;
  Index k = 0;
  for (Index i = 0; i < out.grad.size(); ++i) {
    if (!n.joint(i)) continue;
    out.grad(i) = (n.pred.values(k) - n.pseudo.values(k)) / denom;
    ++k;
  }
  return out;
}

Eigen::VectorXd project_out_affine(const Eigen::VectorXd& grad, const Eigen::VectorXd& pred, const PixelMask& mask) {
  if (grad.size() != pred.size() || mask.size() != pred.size()) throw Error("project_out_affine: length mismatch");
  const Index n = mask.count();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(grad.size());
  if (n == 0) return out;
  const Eigen::ArrayXd m = mask.cast<double>();
  const double g_mean = (grad.array() * m).sum() / static_cast<double>(n);
  const double p_mean = (pred.array() * m).sum() / static_cast<double>(n);
  const Eigen::ArrayXd pc = (pred.array() - p_mean) * m;
  const double pp = pc.square().sum();
  const double gp = (grad.array() * pc).sum();
  const double slope = pp > kDegenerateScale * kDegenerateScale * static_cast<double>(n) ? gp / pp : 0.0;
  out = ((grad.array() - g_mean - slope * pc) * m).matrix();
  return out;
}

SsiLossAndGrad plain_rmse_grad(const DepthMap& pred, const DepthMap& pseudo) {
  const PixelMask joint = joint_validity(pred, pseudo);
  const Eigen::VectorXd diff = joint.select(pred.values - pseudo.values, 0.0);
  const double count = static_cast<double>(joint.count());
  SsiLossAndGrad out{std::sqrt(diff.squaredNorm() / count), Eigen::VectorXd::Zero(pred.shape.size())};
  if (out.loss > 0.0) out.grad = diff / (count * out.loss);
  return out;
}

}  // namespace famda
