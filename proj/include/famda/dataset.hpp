#pragma once

// Dataset directory contract:
//   images/<stem>.png         RGB input
//   labels/<stem>.png         ground-truth labels (source supervision; target evaluation only)
//   depth/<stem>.fdpt         ground-truth depth (evaluation only)
//   masks/<stem>.fmsk         cached instance masks
//   pseudo_depth/<stem>.fdpt  cached relative-depth pseudo labels
//   teacher_labels/, refined_labels/   inputs/outputs of the refine command
//   manifest.json

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace famda {

namespace fs = std::filesystem;

struct DatasetLayout {
  fs::path root;

  fs::path images() const { return root / "images"; }
  fs::path labels() const { return root / "labels"; }
  fs::path depth() const { return root / "depth"; }
  fs::path masks() const { return root / "masks"; }
  fs::path pseudo_depth() const { return root / "pseudo_depth"; }
  fs::path teacher_labels() const { return root / "teacher_labels"; }
  fs::path refined_labels() const { return root / "refined_labels"; }
  fs::path manifest() const { return root / "manifest.json"; }

  fs::path image(const std::string& stem) const { return images() / (stem + ".png"); }
  fs::path label(const std::string& stem) const { return labels() / (stem + ".png"); }
  fs::path gt_depth(const std::string& stem) const { return depth() / (stem + ".fdpt"); }
  fs::path mask(const std::string& stem) const { return masks() / (stem + ".fmsk"); }
  fs::path pseudo(const std::string& stem) const { return pseudo_depth() / (stem + ".fdpt"); }
};

/// Sorted stems of every `*.png` in `dir`.
std::vector<std::string> list_stems(const fs::path& dir);

nlohmann::json read_json(const fs::path& path);
void write_json(const fs::path& path, const nlohmann::json& j);

/// num_classes recorded in the dataset manifest.
int manifest_num_classes(const DatasetLayout& layout);

/// Worker count: FAMDA_THREADS if set and positive, else hardware concurrency.
unsigned thread_count();

/// Runs fn(i) for i in [0, n) across up to thread_count() threads. fn must only
/// touch state owned by index i.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace famda
