#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "famda/gridcore.hpp"
#include "famda/maskcache.hpp"

namespace famda {

/// Mask-vote refinement of teacher pseudo-labels.
///
/// Masks are visited in decreasing-area order (stable for equal areas), so
/// smaller masks are applied last and overwrite the interiors of larger ones.
/// Each mask's vote is a plurality count of `teacher_labels` over its
/// non-ignore pixels; ties go to the class with the larger summed
/// `teacher_probs` inside the mask, then to the smaller index. The winning
/// class is written to every non-ignore pixel of the mask. Votes always read
/// the unmodified teacher labels, so the class written by a mask is one the
/// teacher predicted inside it. Pixels outside every mask, and ignore pixels,
/// keep their teacher label.
LabelMap majority_vote_refine(const LabelMap& teacher_labels, const ProbMap& teacher_probs, const MaskSet& masks);

/// One-hot probabilities for a label map (ignore pixels get all zeros).
ProbMap one_hot(const LabelMap& labels);

struct RefineImageResult {
  std::string stem;
  Index changed_pixels = 0;
  std::optional<std::string> error;
};

struct RefineSummary {
  std::vector<RefineImageResult> images;  // sorted by stem

  Index total_changed() const;
  std::size_t failures() const;
};

/// Produces teacher probabilities for an input image (e.g. a model forward).
using TeacherFn = std::function<ProbMap(const Image&)>;

/// Walks `<dataset>/images`, refines each image's teacher labels with
/// `<cache_dir>/<stem>.fmsk`, and writes `<output_dir>/<stem>.png`.
///
/// With `teacher`, labels are its argmax and are also written to
/// `<dataset>/teacher_labels/`; without it, `<dataset>/teacher_labels/<stem>.png`
/// is read and ties fall back to the smaller class index. Per-image failures
/// (e.g. a missing cache file) are recorded and processing continues.
RefineSummary refine_dataset(const std::filesystem::path& dataset_dir, const std::filesystem::path& cache_dir,
                             const std::filesystem::path& output_dir, int num_classes,
                             const TeacherFn* teacher = nullptr);

}  // namespace famda
