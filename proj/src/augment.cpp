#include "famda/augment.hpp"

#include <algorithm>
#include <array>
#include <set>

namespace famda {

MixResult class_mix(const Image& src_img, const LabelMap& src_labels, const Image& tgt_img,
                    const LabelMap& tgt_pseudo, Rng& rng) {
  const GridShape shape = tgt_img.shape;
  if (src_img.shape != shape || src_labels.shape != shape || tgt_pseudo.shape != shape) {
    throw Error("class_mix: shape mismatch");
  }

  std::set<int> present;
  for (Index i = 0; i < src_labels.data.size(); ++i) {
    if (src_labels.data(i) != kIgnore) present.insert(src_labels.data(i));
  }

  MixResult out{tgt_img, tgt_pseudo, PixelMask::Constant(shape.size(), false), {}};
  if (present.empty()) return out;

  // Partial Fisher-Yates over the sorted class list.
  std::vector<int> classes(present.begin(), present.end());
  const std::size_t take = (classes.size() + 1) / 2;
  for (std::size_t k = 0; k < take; ++k) {
    const auto j = k + static_cast<std::size_t>(rng.uniform_int(classes.size() - k));
    std::swap(classes[k], classes[j]);
  }
  out.chosen_classes.assign(classes.begin(), classes.begin() + static_cast<std::ptrdiff_t>(take));

  std::array<bool, 256> chosen{};
  for (int c : out.chosen_classes) chosen[static_cast<std::size_t>(c)] = true;
  for (Index i = 0; i < shape.size(); ++i) {
    if (src_labels.data(i) == kIgnore || !chosen[src_labels.data(i)]) continue;
    out.paste(i) = true;
    out.image.data.row(i) = src_img.data.row(i);
    out.labels.data(i) = src_labels.data(i);
  }
  return out;
}

Image photometric_jitter(const Image& img, Rng& rng, double strength) {
  Eigen::RowVector3d gain, offset;
  for (int c = 0; c < 3; ++c) {
    gain(c) = 1.0 + 0.4 * strength * (2.0 * rng.uniform() - 1.0);
    offset(c) = 0.2 * strength * (2.0 * rng.uniform() - 1.0);
  }
  Image out(img.shape);
  out.data = ((img.data.array().rowwise() * gain.array()).rowwise() + offset.array()).cwiseMax(0.0).cwiseMin(1.0);
  return out;
}

CropWindow draw_crop_window(Rng& rng, GridShape shape, Index crop) {
  if (crop <= 0 || crop > std::min(shape.height, shape.width)) {
    throw Error("crop size " + std::to_string(crop) + " does not fit a " + std::to_string(shape.height) + "x" +
                std::to_string(shape.width) + " grid");
  }
  CropWindow w;
  w.size = crop;
  w.top = static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(shape.height - crop + 1)));
  w.left = static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(shape.width - crop + 1)));
  w.flip = rng.uniform() < 0.5;
  return w;
}

namespace {

// Source pixel index for output pixel (r, c) of the window.
Index source_index(GridShape shape, const CropWindow& w, Index r, Index c) {
  const Index col = w.flip ? w.left + (w.size - 1 - c) : w.left + c;
  return shape.index(w.top + r, col);
}

void check_window(GridShape shape, const CropWindow& w) {
  if (w.top < 0 || w.left < 0 || w.top + w.size > shape.height || w.left + w.size > shape.width) {
    throw Error("crop window outside grid");
  }
}

template <typename Copy>
void for_window(GridShape shape, const CropWindow& w, Copy&& copy) {
  check_window(shape, w);
  const GridShape out{w.size, w.size};
  for (Index r = 0; r < w.size; ++r) {
    for (Index c = 0; c < w.size; ++c) copy(out.index(r, c), source_index(shape, w, r, c));
  }
}

}  // namespace

Image apply_window(const Image& img, const CropWindow& w) {
  Image out(GridShape{w.size, w.size});
  for_window(img.shape, w, [&](Index dst, Index src) { out.data.row(dst) = img.data.row(src); });
  return out;
}

LabelMap apply_window(const LabelMap& labels, const CropWindow& w) {
  LabelMap out(GridShape{w.size, w.size}, labels.num_classes);
  for_window(labels.shape, w, [&](Index dst, Index src) { out.data(dst) = labels.data(src); });
  return out;
}

DepthMap apply_window(const DepthMap& depth, const CropWindow& w) {
  DepthMap out(GridShape{w.size, w.size});
  for_window(depth.shape, w, [&](Index dst, Index src) {
    out.values(dst) = depth.values(src);
    out.valid(dst) = depth.valid(src);
  });
  return out;
}

AlignedTriple random_crop_flip(const Image& img, const LabelMap& labels, const DepthMap& depth, Rng& rng,
                               Index crop) {
  if (labels.shape != img.shape || depth.shape != img.shape) throw Error("random_crop_flip: shape mismatch");
  const CropWindow w = draw_crop_window(rng, img.shape, crop);
  return {apply_window(img, w), apply_window(labels, w), apply_window(depth, w), w};
}

}  // namespace famda
