#pragma once

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <doctest.h>

#include "famda/bytes.hpp"
#include "famda/gridcore.hpp"
#include "famda/maskcache.hpp"
#include "famda/rng.hpp"
#include "generators.hpp"

namespace famda::test {

namespace fs = std::filesystem;

inline fs::path golden_path(const std::string& name) { return fs::path(FAMDA_GOLDEN_DIR) / name; }

inline bool regen_golden() {
  const char* v = std::getenv("FAMDA_REGEN_GOLDEN");
  return v && std::string(v) == "1";
}

/// Compares `bytes` with the checked-in golden file, or rewrites it when
/// FAMDA_REGEN_GOLDEN=1.
inline void check_golden(const std::string& name, const Bytes& bytes) {
  const auto path = golden_path(name);
  if (regen_golden()) {
    fs::create_directories(path.parent_path());
    write_file(path, bytes);
    MESSAGE("regenerated " << path.string());
    return;
  }
  REQUIRE_MESSAGE(fs::exists(path), "missing golden " << path.string());
  const Bytes expected = read_file(path);
  CHECK_MESSAGE(bytes.size() == expected.size(), name << ": size " << bytes.size() << " vs " << expected.size());
  CHECK_MESSAGE(bytes == expected, name << ": bytes differ");
}

inline void check_golden_text(const std::string& name, const std::string& text) {
  check_golden(name, Bytes(text.begin(), text.end()));
}

/// Fresh scratch directory under the build tree.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = fs::temp_directory_path() / ("famda_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

/// One value per line at round-trip precision.
template <typename Derived>
std::string dump_values(const Eigen::DenseBase<Derived>& values) {
  std::string out;
  char buf[40];
  for (Index i = 0; i < values.rows(); ++i) {
    for (Index j = 0; j < values.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g\n", static_cast<double>(values(i, j)));
      out += buf;
    }
  }
  return out;
}

inline std::string dump_labels(const LabelMap& labels) { return dump_values(labels.data.cast<int>()); }

inline double rel_error(double a, double b, double floor = 1e-8) {
  const double scale = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / scale;
}

}  // namespace famda::test
