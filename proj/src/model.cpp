#include "famda/model.hpp"

#include <cmath>
#include <limits>

#include "famda/io.hpp"

namespace famda {

FeatureGrid extract_features(const Image& img) {
  const GridShape s = img.shape;
  FeatureGrid out{s, PixelMatrix<double>(s.size(), kFeatureDim)};
  const double row_scale = s.height > 1 ? 1.0 / static_cast<double>(s.height - 1) : 0.0;
  const double col_scale = s.width > 1 ? 1.0 / static_cast<double>(s.width - 1) : 0.0;

  for (Index r = 0; r < s.height; ++r) {
    const Index r0 = std::max<Index>(r - 1, 0), r1 = std::min<Index>(r + 1, s.height - 1);
    for (Index c = 0; c < s.width; ++c) {
      const Index c0 = std::max<Index>(c - 1, 0), c1 = std::min<Index>(c + 1, s.width - 1);
      const double count = static_cast<double>((r1 - r0 + 1) * (c1 - c0 + 1));
      Eigen::RowVector3d mean = Eigen::RowVector3d::Zero();
      for (Index rr = r0; rr <= r1; ++rr) {
        for (Index cc = c0; cc <= c1; ++cc) mean += img.data.row(s.index(rr, cc));
      }
      mean /= count;
      Eigen::RowVector3d var = Eigen::RowVector3d::Zero();
      for (Index rr = r0; rr <= r1; ++rr) {
        for (Index cc = c0; cc <= c1; ++cc) var += (img.data.row(s.index(rr, cc)) - mean).array().square().matrix();
      }
      var /= count;

      auto f = out.data.row(s.index(r, c));
      f.segment<3>(0) = img.data.row(s.index(r, c));
      f.segment<3>(3) = mean;
      f.segment<3>(6) = var.array().sqrt().matrix();
      f(9) = static_cast<double>(r) * row_scale;
      f(10) = static_cast<double>(c) * col_scale;
    }
  }
  return out;
}

MultiTaskModel::MultiTaskModel(int num_classes, int feature_dim, bool depth_head)
    : layout_{num_classes, feature_dim}, depth_head_(depth_head) {
  if (num_classes <= 0 || feature_dim <= 0) throw Error("model dimensions must be positive");
  const Index n = depth_head ? layout_.total() : layout_.depth_offset();
  params_ = ParamVec::Zero(n);
}

MultiTaskModel MultiTaskModel::random(int num_classes, Rng& rng, double range, int feature_dim) {
  MultiTaskModel m(num_classes, feature_dim);
  for (Index i = 0; i < m.params_.size(); ++i) m.params_(i) = rng.uniform(-range, range);
  return m;
}

MultiTaskModel::ConstMatrixMap MultiTaskModel::shared_weights() const {
  return {params_.data(), layout_.feature_dim, layout_.feature_dim};
}
MultiTaskModel::ConstVectorMap MultiTaskModel::shared_bias() const {
  return {params_.data() + Index{layout_.feature_dim} * layout_.feature_dim, layout_.feature_dim};
}
MultiTaskModel::ConstMatrixMap MultiTaskModel::seg_weights() const {
  return {params_.data() + layout_.seg_offset(), layout_.num_classes, layout_.feature_dim};
}
MultiTaskModel::ConstVectorMap MultiTaskModel::seg_bias() const {
  return {params_.data() + layout_.seg_offset() + Index{layout_.num_classes} * layout_.feature_dim,
          layout_.num_classes};
}
MultiTaskModel::ConstVectorMap MultiTaskModel::depth_weights() const {
  if (!depth_head_) throw Error("model has no depth head");
  return {params_.data() + layout_.depth_offset(), layout_.feature_dim};
}
double MultiTaskModel::depth_bias() const {
  if (!depth_head_) throw Error("model has no depth head");
  return params_(layout_.depth_offset() + layout_.feature_dim);
}

ForwardResult forward(const MultiTaskModel& model, const FeatureGrid& features) {
  if (features.dim() != model.feature_dim()) throw Error("forward: feature dimension mismatch");
  ForwardResult out;
  out.hidden = ((features.data * model.shared_weights().transpose()).rowwise() +
                model.shared_bias().transpose())
                   .array()
                   .tanh()
                   .matrix();
  out.logits = (out.hidden * model.seg_weights().transpose()).rowwise() + model.seg_bias().transpose();
  out.probs.shape = features.shape;
  out.probs.data = softmax_rows(out.logits);
  if (model.has_depth_head()) {
    out.depth = DepthMap(features.shape, (out.hidden * model.depth_weights()).array() + model.depth_bias());
  }
  return out;
}

CeResult ce_loss(const ProbMap& probs, const LabelMap& labels, const Eigen::VectorXd& pixel_weights) {
  const Index n = probs.shape.size();
  if (labels.shape != probs.shape || pixel_weights.size() != n) throw Error("ce_loss: shape mismatch");
  if (labels.num_classes != probs.num_classes()) throw Error("ce_loss: class count mismatch");
  if ((pixel_weights.array() < 0.0).any()) throw Error("ce_loss: negative pixel weight");

  CeResult out{0.0, PixelMatrix<double>::Zero(n, probs.num_classes())};
  Index labeled = 0;
  for (Index i = 0; i < n; ++i) labeled += labels.data(i) != kIgnore;
  if (labeled == 0) return out;

  const double inv = 1.0 / static_cast<double>(labeled);
  constexpr double kTiny = std::numeric_limits<double>::min();
  for (Index i = 0; i < n; ++i) {
    const auto y = labels.data(i);
    const double w = pixel_weights(i);
    if (y == kIgnore || w == 0.0) continue;
    out.loss -= w * std::log(std::max(probs.data(i, y), kTiny));
    out.grad_logits.row(i) = (w * inv) * probs.data.row(i);
    out.grad_logits(i, y) -= w * inv;
  }
  out.loss *= inv;
  return out;
}

CeResult ce_loss(const ProbMap& probs, const LabelMap& labels) {
  return ce_loss(probs, labels, Eigen::VectorXd::Ones(probs.shape.size()));
}

ParamVec backward(const MultiTaskModel& model, const FeatureGrid& features, const PixelMatrix<double>& grad_seg_logits,
                  const Eigen::VectorXd& grad_depth) {
  const Index n = features.shape.size();
  const auto& layout = model.layout();
  const Index f = layout.feature_dim;
  const Index c = layout.num_classes;
  if (grad_seg_logits.rows() != n || grad_seg_logits.cols() != c) throw Error("backward: logit gradient shape");
  const bool with_depth = grad_depth.size() > 0;
  if (with_depth && (grad_depth.size() != n || !model.has_depth_head())) throw Error("backward: depth gradient shape");

  const PixelMatrix<double> hidden =
      ((features.data * model.shared_weights().transpose()).rowwise() + model.shared_bias().transpose())
          .array()
          .tanh()
          .matrix();

  ParamVec grad = ParamVec::Zero(model.params().size());
  Eigen::Map<PixelMatrix<double>> d_ws(grad.data(), f, f);
  Eigen::Map<Eigen::VectorXd> d_bs(grad.data() + f * f, f);
  Eigen::Map<PixelMatrix<double>> d_wc(grad.data() + layout.seg_offset(), c, f);
  Eigen::Map<Eigen::VectorXd> d_bc(grad.data() + layout.seg_offset() + c * f, c);

  d_wc.noalias() = grad_seg_logits.transpose() * hidden;
  d_bc = grad_seg_logits.colwise().sum().transpose();

  PixelMatrix<double> d_hidden = grad_seg_logits * model.seg_weights();
  if (with_depth) {
    Eigen::Map<Eigen::VectorXd> d_wd(grad.data() + layout.depth_offset(), f);
    d_wd.noalias() = hidden.transpose() * grad_depth;
    grad(layout.depth_offset() + f) = grad_depth.sum();
    d_hidden.noalias() += grad_depth * model.depth_weights().transpose();
  }

  const PixelMatrix<double> d_pre = (d_hidden.array() * (1.0 - hidden.array().square())).matrix();
  d_ws.noalias() = d_pre.transpose() * features.data;
  d_bs = d_pre.colwise().sum().transpose();
  return grad;
}

Bytes encode_checkpoint(const MultiTaskModel& model) {
  if (!model.has_depth_head()) throw Error("checkpoints hold full models only");
  ByteWriter w;
  w.raw("FMDL");
  w.u16(kFmdlVersion);
  w.u32(static_cast<std::uint32_t>(model.num_classes()));
  w.u32(static_cast<std::uint32_t>(model.feature_dim()));
  for (Index i = 0; i < model.params().size(); ++i) w.f32(static_cast<float>(model.params()(i)));
  return std::move(w).bytes();
}

MultiTaskModel decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (!r.magic("FMDL")) throw FormatError(FormatErrorKind::kBadMagic, 0);
  const std::size_t version_at = r.offset();
  if (r.u16() != kFmdlVersion) throw FormatError(FormatErrorKind::kBadVersion, version_at);
  const auto classes = r.u32();
  const auto dim = r.u32();
  if (classes == 0 || classes >= kIgnore || dim == 0 || dim > 4096) {
    throw Error("checkpoint dimensions out of range");
  }
  MultiTaskModel model(static_cast<int>(classes), static_cast<int>(dim));
  r.need(static_cast<std::size_t>(model.params().size()) * 4);
  for (Index i = 0; i < model.params().size(); ++i) model.params()(i) = r.f32();
  if (r.remaining() != 0) throw FormatError(FormatErrorKind::kTrailingBytes, r.offset());
  return model;
}

void write_checkpoint(const std::filesystem::path& path, const MultiTaskModel& model) {
  write_file(path, encode_checkpoint(model));
}

MultiTaskModel read_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

}  // namespace famda
