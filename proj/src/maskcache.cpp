#include "famda/maskcache.hpp"

#include <sstream>

namespace famda {

void MaskSet::add(PixelMask pixels) {
  if (pixels.size() != shape.size()) throw Error("mask shape does not match mask set");
  if (!pixels.any()) throw Error("empty mask");
  masks.push_back(Mask{std::move(pixels)});
}

void MaskSet::validate() const {
  for (std::size_t k = 0; k < masks.size(); ++k) {
    if (masks[k].pixels.size() != shape.size()) throw Error("mask " + std::to_string(k) + " has wrong size");
    if (masks[k].area() == 0) throw Error("empty mask");
  }
}

std::vector<Run> to_runs(const PixelMask& pixels) {
  std::vector<Run> runs;
  Index i = 0;
  const Index n = pixels.size();
  while (i < n) {
    if (!pixels(i)) {
      ++i;
      continue;
    }
    const Index start = i;
    while (i < n && pixels(i)) ++i;
    runs.push_back({static_cast<std::uint32_t>(start), static_cast<std::uint32_t>(i - start)});
  }
  return runs;
}

Bytes encode_maskset(const MaskSet& set) {
  std::string meta;
  for (const auto& [key, value] : set.metadata) {
    if (!meta.empty()) meta += '\n';
    meta += key + "=" + value;
  }

  ByteWriter w;
  w.raw("FMSK");
  w.u16(kFmskVersion);
  w.u32(static_cast<std::uint32_t>(set.shape.height));
  w.u32(static_cast<std::uint32_t>(set.shape.width));
  w.u32(static_cast<std::uint32_t>(set.masks.size()));
  w.u32(static_cast<std::uint32_t>(meta.size()));
  w.raw(meta);
  for (const auto& mask : set.masks) {
    if (mask.pixels.size() != set.shape.size()) throw Error("mask shape does not match mask set");
    const auto area = mask.area();
    if (area == 0) throw Error("empty mask");
    const auto runs = to_runs(mask.pixels);
    w.u32(static_cast<std::uint32_t>(area));
    w.u32(static_cast<std::uint32_t>(runs.size()));
    for (const auto& run : runs) {
      w.u32(run.start);
      w.u32(run.length);
    }
  }
  return std::move(w).bytes();
}

namespace {

std::map<std::string, std::string> parse_metadata(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      out[line] = "";
    } else {
      out[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }
  return out;
}

}  // namespace

MaskSet decode_maskset(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (!r.magic("FMSK")) throw FormatError(FormatErrorKind::kBadMagic, 0);
  const std::size_t version_at = r.offset();
  if (r.u16() != kFmskVersion) throw FormatError(FormatErrorKind::kBadVersion, version_at);

  MaskSet set;
  set.shape.height = r.u32();
  set.shape.width = r.u32();
  const std::uint32_t count = r.u32();
  const std::uint32_t meta_len = r.u32();
  set.metadata = parse_metadata(r.str(meta_len));

  const auto n = static_cast<std::uint64_t>(set.shape.size());
  set.masks.reserve(std::min<std::size_t>(count, r.remaining() / 8));
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::size_t mask_at = r.offset();
    const std::uint32_t area = r.u32();
    const std::uint32_t run_count = r.u32();
    PixelMask pixels = PixelMask::Constant(static_cast<Index>(n), false);
    std::uint64_t covered = 0;
    std::uint64_t previous_end = 0;
    for (std::uint32_t j = 0; j < run_count; ++j) {
      const std::size_t run_at = r.offset();
      const std::uint64_t start = r.u32();
      const std::uint64_t length = r.u32();
      if (start + length > n) throw FormatError(FormatErrorKind::kRunOutOfBounds, run_at);
      if (j > 0 && start < previous_end) throw FormatError(FormatErrorKind::kOverlappingRuns, run_at);
      pixels.segment(static_cast<Index>(start), static_cast<Index>(length)).setConstant(true);
      covered += length;
      previous_end = start + length;
    }
    if (covered == 0) throw FormatError(FormatErrorKind::kEmptyMask, mask_at);
    if (covered != area) {
      throw FormatError(FormatErrorKind::kAreaMismatch, mask_at,
                        "declared " + std::to_string(area) + ", runs cover " + std::to_string(covered));
    }
    set.masks.push_back(Mask{std::move(pixels)});
  }
  if (r.remaining() != 0) throw FormatError(FormatErrorKind::kTrailingBytes, r.offset());
  return set;
}

MaskSet read_maskset(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_maskset(bytes);
  } catch (const FormatError& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

void write_maskset(const std::filesystem::path& path, const MaskSet& masks) {
  write_file(path, encode_maskset(masks));
}

std::filesystem::path mask_cache_path(const std::filesystem::path& cache_dir, const std::string& stem) {
  return cache_dir / (stem + ".fmsk");
}

}  // namespace famda
