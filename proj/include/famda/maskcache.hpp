#pragma once

// Offline instance-mask cache.
//
// FMSK layout, all integers little-endian:
//   "FMSK" | u16 version (1) | u32 height | u32 width | u32 mask count
//   | u32 metadata length | metadata bytes (UTF-8 "key=value" lines)
//   then per mask: u32 area | u32 run count | run count x (u32 start, u32 length)
// Runs index the row-major flattened mask and are sorted by start. Runs of one
// mask never overlap; different masks may.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "famda/bytes.hpp"
#include "famda/gridcore.hpp"

namespace famda {

inline constexpr std::uint16_t kFmskVersion = 1;
inline constexpr std::size_t kFmskFixedHeader = 4 + 2 + 4 + 4 + 4 + 4;

struct Mask {
  PixelMask pixels;

  Index area() const { return pixels.count(); }
  friend bool operator==(const Mask& a, const Mask& b) {
    return a.pixels.size() == b.pixels.size() && (a.pixels == b.pixels).all();
  }
};

struct Run {
  std::uint32_t start = 0;
  std::uint32_t length = 0;
  friend bool operator==(const Run&, const Run&) = default;
};

struct MaskSet {
  GridShape shape;
  std::vector<Mask> masks;
  /// Generator provenance (e.g. points_per_side, pred_iou_thresh). Never interpreted.
  std::map<std::string, std::string> metadata;

  /// Appends a mask; throws "empty mask" if no pixel is set.
  void add(PixelMask pixels);
  void validate() const;

  friend bool operator==(const MaskSet&, const MaskSet&) = default;
};

std::vector<Run> to_runs(const PixelMask& pixels);

Bytes encode_maskset(const MaskSet& masks);
MaskSet decode_maskset(std::span<const std::uint8_t> bytes);

MaskSet read_maskset(const std::filesystem::path& path);
void write_maskset(const std::filesystem::path& path, const MaskSet& masks);

/// `<dataset>/masks/<stem>.fmsk`
std::filesystem::path mask_cache_path(const std::filesystem::path& cache_dir, const std::string& stem);

}  // namespace famda
