#include "famda/gridcore.hpp"

#include <cmath>
#include <string>

namespace famda {

const char* to_string(FormatErrorKind kind) {
  switch (kind) {
    case FormatErrorKind::kBadMagic: return "bad magic";
    case FormatErrorKind::kBadVersion: return "unsupported version";
    case FormatErrorKind::kTruncated: return "truncated";
    case FormatErrorKind::kRunOutOfBounds: return "run exceeds image";
    case FormatErrorKind::kOverlappingRuns: return "overlapping runs";
    case FormatErrorKind::kAreaMismatch: return "area mismatch";
    case FormatErrorKind::kEmptyMask: return "empty mask";
    case FormatErrorKind::kTrailingBytes: return "trailing bytes";
  }
  return "format error";
}

FormatError::FormatError(FormatErrorKind kind, std::size_t offset, const std::string& detail)
    : Error(std::string(to_string(kind)) + " at byte " + std::to_string(offset) +
            (detail.empty() ? "" : ": " + detail)),
      kind_(kind),
      offset_(offset) {}

LabelMap::LabelMap(GridShape s, int classes, std::uint8_t fill)
    : shape(s), num_classes(classes), data(decltype(data)::Constant(s.size(), fill)) {}

void LabelMap::validate() const {
  if (data.size() != shape.size()) throw Error("label map size does not match its shape");
  if (num_classes <= 0 || num_classes >= kIgnore) throw Error("label map class count out of range");
  for (Index i = 0; i < data.size(); ++i) {
    if (data(i) != kIgnore && data(i) >= num_classes) {
      throw Error("label " + std::to_string(data(i)) + " at pixel " + std::to_string(i) +
                  " is not below num_classes=" + std::to_string(num_classes));
    }
  }
}

void ProbMap::validate(double tol) const {
  if (data.rows() != shape.size()) throw Error("prob map size does not match its shape");
  for (Index i = 0; i < data.rows(); ++i) {
    if ((data.row(i).array() < 0.0).any()) throw Error("negative probability at pixel " + std::to_string(i));
    if (std::abs(data.row(i).sum() - 1.0) > tol) {
      throw Error("probabilities at pixel " + std::to_string(i) + " do not sum to 1");
    }
  }
}

void DepthMap::validate() const {
  if (values.size() != shape.size() || valid.size() != shape.size()) {
    throw Error("depth map size does not match its shape");
  }
  for (Index i = 0; i < values.size(); ++i) {
    if (valid(i) && !std::isfinite(values(i))) throw Error("non-finite valid depth at pixel " + std::to_string(i));
  }
}

void Image::validate() const {
  if (data.rows() != shape.size()) throw Error("image size does not match its shape");
  if ((data.array() < 0.0).any() || (data.array() > 1.0).any()) throw Error("image values outside [0,1]");
}

LabelMap argmax_labels(const ProbMap& probs) {
  LabelMap out(probs.shape, probs.num_classes(), 0);
  for (Index i = 0; i < probs.data.rows(); ++i) {
    Index best = 0;
    // maxCoeff returns the first maximal index, which is the tie rule we want.
    probs.data.row(i).maxCoeff(&best);
    out.data(i) = static_cast<std::uint8_t>(best);
  }
  return out;
}

PixelMatrix<double> softmax_rows(const PixelMatrix<double>& logits) {
  PixelMatrix<double> out(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    out.row(i) = (logits.row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

}  // namespace famda
