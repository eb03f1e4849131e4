#pragma once

// Scale/shift-invariant (SSI) depth supervision:
//   SSI(y) = (y - med(y)) / mean|y - med(y)|
//   L = RMSE(SSI(pred), SSI(pseudo)) over the pixels valid in both maps.

#include "famda/gridcore.hpp"

namespace famda {

inline constexpr double kDegenerateScale = 1e-8;

struct SsiStats {
  double med = 0.0;
  double scale = 0.0;  // mean absolute deviation from the median
  Index valid_count = 0;
};

struct SsiNormalized {
  Eigen::VectorXd values;  // one entry per selected pixel, in pixel order
  SsiStats stats;
};

/// Normalizes the pixels selected by `mask`. A scale below kDegenerateScale
/// yields all zeros.
SsiNormalized ssi_normalize(const Eigen::VectorXd& values, const PixelMask& mask);
SsiNormalized ssi_normalize(const DepthMap& d);

/// pred.valid && pseudo.valid; throws if the shapes differ or nothing is valid.
PixelMask joint_validity(const DepthMap& pred, const DepthMap& pseudo);

double ssi_rmse_loss(const DepthMap& pred, const DepthMap& pseudo);

struct SsiLossAndGrad {
  double loss = 0.0;
  Eigen::VectorXd grad;  // d loss / d pred, zero outside the joint mask
};

/// Gradient with both maps' median and scale held fixed:
///   dL/dpred_i = (SSI(pred)_i - SSI(pseudo)_i) / (N * L * scale_pred)
/// All zeros when L == 0 or pred is degenerate.
SsiLossAndGrad ssi_rmse_grad(const DepthMap& pred, const DepthMap& pseudo);

/// Removes from `grad` its least-squares component in span{1, pred} over
/// `mask` (zero elsewhere). The SSI loss is flat along both directions, so
/// this keeps the frozen-statistics gradient from drifting the offset and
/// scale of the prediction.
Eigen::VectorXd project_out_affine(const Eigen::VectorXd& grad, const Eigen::VectorXd& pred, const PixelMask& mask);

/// Plain RMSE against the pseudo map, no normalization. Used only as the
/// ablation that shows why the invariant loss is needed.
SsiLossAndGrad plain_rmse_grad(const DepthMap& pred, const DepthMap& pseudo);

}  // namespace famda
