#pragma once

// Dense per-pixel containers. Every grid is stored pixel-major: one row (or
// entry) per pixel in row-major image order, so per-pixel vectors are
// contiguous and whole-image operations become plain Eigen products.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "famda/error.hpp"

namespace famda {

using Index = Eigen::Index;

template <typename Scalar>
using PixelMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using ParamVec = Eigen::VectorXd;
using PixelMask = Eigen::Array<bool, Eigen::Dynamic, 1>;

inline constexpr std::uint8_t kIgnore = 255;

struct GridShape {
  Index height = 0;
  Index width = 0;

  Index size() const { return height * width; }
  Index index(Index row, Index col) const { return row * width + col; }

  friend bool operator==(const GridShape&, const GridShape&) = default;
};

struct LabelMap {
  GridShape shape;
  int num_classes = 0;
  Eigen::Array<std::uint8_t, Eigen::Dynamic, 1> data;

  LabelMap() = default;
  LabelMap(GridShape s, int classes, std::uint8_t fill = kIgnore);

  std::uint8_t operator()(Index row, Index col) const { return data(shape.index(row, col)); }
  std::uint8_t& operator()(Index row, Index col) { return data(shape.index(row, col)); }

  /// Throws if a value is neither kIgnore nor below num_classes.
  void validate() const;

  friend bool operator==(const LabelMap& a, const LabelMap& b) {
    return a.shape == b.shape && a.num_classes == b.num_classes && (a.data == b.data).all();
  }
};

struct ProbMap {
  GridShape shape;
  PixelMatrix<double> data;  // N x C

  ProbMap() = default;
  ProbMap(GridShape s, int classes) : shape(s), data(PixelMatrix<double>::Zero(s.size(), classes)) {}

  int num_classes() const { return static_cast<int>(data.cols()); }
  void validate(double tol = 1e-6) const;
};

struct DepthMap {
  GridShape shape;
  Eigen::VectorXd values;  // meters
  PixelMask valid;

  DepthMap() = default;
  explicit DepthMap(GridShape s)
      : shape(s), values(Eigen::VectorXd::Zero(s.size())), valid(PixelMask::Constant(s.size(), true)) {}
  DepthMap(GridShape s, Eigen::VectorXd v)
      : shape(s), values(std::move(v)), valid(PixelMask::Constant(s.size(), true)) {}

  Index valid_count() const { return valid.count(); }
  void validate() const;
};

struct Image {
  GridShape shape;
  Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> data;  // N x 3, values in [0,1]

  Image() = default;
  explicit Image(GridShape s) : shape(s), data(decltype(data)::Zero(s.size(), 3)) {}

  void validate() const;
};

/// Copies the entries of `values` selected by `mask`, in index order.
template <typename Derived>
std::vector<double> gather(const Eigen::DenseBase<Derived>& values, const PixelMask& mask) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(mask.count()));
  for (Index i = 0; i < values.size(); ++i) {
    if (mask(i)) out.push_back(static_cast<double>(values.derived().coeff(i)));
  }
  return out;
}

namespace detail {

inline std::vector<double> sorted_copy(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v;
}

inline double median_of_sorted(const std::vector<double>& s) {
  const std::size_t n = s.size();
  if (n % 2 == 1) return s[n / 2];
  return 0.5 * (s[n / 2 - 1] + s[n / 2]);
}

template <typename Derived>
std::vector<double> to_vector(const Eigen::DenseBase<Derived>& values) {
  std::vector<double> v(static_cast<std::size_t>(values.size()));
  for (Index i = 0; i < values.size(); ++i) v[static_cast<std::size_t>(i)] = static_cast<double>(values.derived().coeff(i));
  return v;
}

}  // namespace detail

/// Median; even-length samples average the two middle order statistics.
inline double median(std::vector<double> values) {
  if (values.empty()) throw Error("empty sample");
  return detail::median_of_sorted(detail::sorted_copy(std::move(values)));
}

template <typename Derived>
double median(const Eigen::DenseBase<Derived>& values) {
  return median(detail::to_vector(values));
}

/// Mean of |v - median(v)|. The sum runs over the sorted sample, so the
/// result does not depend on input order, bit for bit.
inline double mean_abs_dev_from_median(std::vector<double> values) {
  if (values.empty()) throw Error("empty sample");
  const auto sorted = detail::sorted_copy(std::move(values));
  const double med = detail::median_of_sorted(sorted);
  double sum = 0.0;
  for (double v : sorted) sum += std::abs(v - med);
  return sum / static_cast<double>(sorted.size());
}

template <typename Derived>
double mean_abs_dev_from_median(const Eigen::DenseBase<Derived>& values) {
  return mean_abs_dev_from_median(detail::to_vector(values));
}

/// Per-pixel argmax; ties go to the smallest class index.
LabelMap argmax_labels(const ProbMap& probs);

/// Row-wise softmax of an N x C logit matrix.
PixelMatrix<double> softmax_rows(const PixelMatrix<double>& logits);

}  // namespace famda
