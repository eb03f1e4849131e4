#include "famda/refine.hpp"

#include <algorithm>
#include <numeric>

#include "famda/dataset.hpp"
#include "famda/io.hpp"

namespace famda {

LabelMap majority_vote_refine(const LabelMap& teacher_labels, const ProbMap& teacher_probs, const MaskSet& masks) {
  const GridShape shape = teacher_labels.shape;
  if (teacher_probs.shape != shape || masks.shape != shape) throw Error("majority_vote_refine: shape mismatch");
  const int num_classes = teacher_labels.num_classes;
  if (teacher_probs.num_classes() != num_classes) throw Error("majority_vote_refine: class count mismatch");

  std::vector<Index> areas(masks.masks.size());
  for (std::size_t k = 0; k < masks.masks.size(); ++k) areas[k] = masks.masks[k].area();
  std::vector<std::size_t> order(masks.masks.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return areas[a] > areas[b]; });

  LabelMap out = teacher_labels;
  std::vector<Index> counts(static_cast<std::size_t>(num_classes));
  Eigen::VectorXd mass(num_classes);
  for (std::size_t k : order) {
    const PixelMask& pixels = masks.masks[k].pixels;
    std::fill(counts.begin(), counts.end(), 0);
    mass.setZero();
    bool any = false;
    for (Index i = 0; i < shape.size(); ++i) {
      if (!pixels(i) || teacher_labels.data(i) == kIgnore) continue;
      any = true;
      ++counts[teacher_labels.data(i)];
      mass += teacher_probs.data.row(i).transpose();
    }
    if (!any) continue;

    int winner = 0;
    for (int c = 1; c < num_classes; ++c) {
      const auto uc = static_cast<std::size_t>(c);
      const auto uw = static_cast<std::size_t>(winner);
      if (counts[uc] > counts[uw] || (counts[uc] == counts[uw] && mass(c) > mass(winner))) winner = c;
    }
    for (Index i = 0; i < shape.size(); ++i) {
      if (pixels(i) && out.data(i) != kIgnore) out.data(i) = static_cast<std::uint8_t>(winner);
    }
  }
  return out;
}

ProbMap one_hot(const LabelMap& labels) {
  ProbMap probs(labels.shape, labels.num_classes);
  for (Index i = 0; i < labels.data.size(); ++i) {
    if (labels.data(i) != kIgnore) probs.data(i, labels.data(i)) = 1.0;
  }
  return probs;
}

Index RefineSummary::total_changed() const {
  Index total = 0;
  for (const auto& r : images) total += r.changed_pixels;
  return total;
}

std::size_t RefineSummary::failures() const {
  return static_cast<std::size_t>(std::count_if(images.begin(), images.end(), [](const auto& r) { return r.error.has_value(); }));
}

RefineSummary refine_dataset(const std::filesystem::path& dataset_dir, const std::filesystem::path& cache_dir,
                             const std::filesystem::path& output_dir, int num_classes, const TeacherFn* teacher) {
  const DatasetLayout layout{dataset_dir};
  const auto stems = list_stems(layout.images());
  fs::create_directories(output_dir);
  if (teacher) fs::create_directories(layout.teacher_labels());

  RefineSummary summary;
  summary.images.resize(stems.size());
  parallel_for(stems.size(), [&](std::size_t idx) {
    auto& result = summary.images[idx];
    result.stem = stems[idx];
    try {
      const auto cache = mask_cache_path(cache_dir, result.stem);
      if (!fs::exists(cache)) throw Error("missing mask cache " + cache.string());
      const MaskSet masks = read_maskset(cache);

      LabelMap labels;
      ProbMap probs;
      if (teacher) {
        probs = (*teacher)(read_image_png(layout.image(result.stem)));
        labels = argmax_labels(probs);
        write_label_png(layout.teacher_labels() / (result.stem + ".png"), labels);
      } else {
        labels = read_label_png(layout.teacher_labels() / (result.stem + ".png"), num_classes);
        probs = one_hot(labels);
      }
      const LabelMap refined = majority_vote_refine(labels, probs, masks);
      result.changed_pixels = (refined.data != labels.data).count();
      write_label_png(output_dir / (result.stem + ".png"), refined);
    } catch (const std::exception& e) {
      result.error = e.what();
    }
  });
  return summary;
}

}  // namespace famda
