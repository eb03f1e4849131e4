#pragma once

// Per-pixel multi-task model: one shared tanh layer over handcrafted
// features, a softmax segmentation head, and a linear depth head.
//
//   h      = tanh(Ws * phi + bs)          (F x F, F)
//   logits = Wc * h + bc                  (C x F, C)
//   depth  = wd . h + bd                  (F, 1)
//
// Parameters live in one flat vector in the order
//   [Ws row-major | bs | Wc row-major | bc | wd | bd]
// so the shared+segmentation prefix is a contiguous block.

#include <filesystem>

#include "famda/bytes.hpp"
#include "famda/gridcore.hpp"
#include "famda/rng.hpp"

namespace famda {

inline constexpr int kFeatureDim = 11;
inline constexpr std::uint16_t kFmdlVersion = 1;

struct FeatureGrid {
  GridShape shape;
  PixelMatrix<double> data;  // N x F

  Index dim() const { return data.cols(); }
};

/// Per pixel: RGB, 3x3 channel means, 3x3 channel standard deviations
/// (windows clipped at the border), row / (H-1), col / (W-1).
FeatureGrid extract_features(const Image& img);

struct ParamLayout {
  int num_classes = 0;
  int feature_dim = kFeatureDim;

  Index shared_size() const { return Index{feature_dim} * feature_dim + feature_dim; }
  Index seg_size() const { return Index{num_classes} * feature_dim + num_classes; }
  Index depth_size() const { return Index{feature_dim} + 1; }
  Index total() const { return shared_size() + seg_size() + depth_size(); }

  Index seg_offset() const { return shared_size(); }
  Index depth_offset() const { return shared_size() + seg_size(); }
};

class MultiTaskModel {
 public:
  using ConstMatrixMap = Eigen::Map<const PixelMatrix<double>>;
  using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

  MultiTaskModel() = default;
  /// All-zero parameters. A model without a depth head stores only the
  /// shared and segmentation blocks.
  explicit MultiTaskModel(int num_classes, int feature_dim = kFeatureDim, bool depth_head = true);

  /// Parameters drawn uniformly from [-range, range].
  static MultiTaskModel random(int num_classes, Rng& rng, double range = 0.1, int feature_dim = kFeatureDim);

  const ParamLayout& layout() const { return layout_; }
  int num_classes() const { return layout_.num_classes; }
  int feature_dim() const { return layout_.feature_dim; }
  bool has_depth_head() const { return depth_head_; }

  ParamVec& params() { return params_; }
  const ParamVec& params() const { return params_; }

  ConstMatrixMap shared_weights() const;
  ConstVectorMap shared_bias() const;
  ConstMatrixMap seg_weights() const;
  ConstVectorMap seg_bias() const;
  ConstVectorMap depth_weights() const;
  double depth_bias() const;

  friend bool operator==(const MultiTaskModel& a, const MultiTaskModel& b) {
    return a.layout_.num_classes == b.layout_.num_classes && a.layout_.feature_dim == b.layout_.feature_dim &&
           a.depth_head_ == b.depth_head_ && a.params_ == b.params_;
  }

 private:
  ParamLayout layout_;
  bool depth_head_ = true;
  ParamVec params_;
};

struct ForwardResult {
  ProbMap probs;
  DepthMap depth;               // empty for models without a depth head
  PixelMatrix<double> hidden;   // N x F
  PixelMatrix<double> logits;   // N x C
};

ForwardResult forward(const MultiTaskModel& model, const FeatureGrid& features);

struct CeResult {
  double loss = 0.0;
  PixelMatrix<double> grad_logits;  // N x C
};

/// Weighted cross-entropy: sum_i w_i * -log p_i(y_i) divided by the number of
/// labeled (non-ignore) pixels, so a uniform weight q scales the loss by q.
/// Ignore pixels always get weight 0. Gradient is w.r.t. the logits.
CeResult ce_loss(const ProbMap& probs, const LabelMap& labels, const Eigen::VectorXd& pixel_weights);
CeResult ce_loss(const ProbMap& probs, const LabelMap& labels);

/// Gradient of the upstream losses w.r.t. every parameter, summed over
/// pixels. `grad_depth` may be empty (no depth signal); it must be empty for
/// models without a depth head.
ParamVec backward(const MultiTaskModel& model, const FeatureGrid& features, const PixelMatrix<double>& grad_seg_logits,
                  const Eigen::VectorXd& grad_depth);

template <typename P, typename G>
ParamVec sgd_step(const Eigen::MatrixBase<P>& params, const Eigen::MatrixBase<G>& grad, double lr) {
  if (params.size() != grad.size()) throw Error("sgd_step: length mismatch");
  return params - lr * grad;
}

Bytes encode_checkpoint(const MultiTaskModel& model);
MultiTaskModel decode_checkpoint(std::span<const std::uint8_t> bytes);
void write_checkpoint(const std::filesystem::path& path, const MultiTaskModel& model);
MultiTaskModel read_checkpoint(const std::filesystem::path& path);

}  // namespace famda
