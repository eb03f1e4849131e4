#include "famda/io.hpp"

#include <png.h>

#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>

namespace famda {

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

namespace {

struct PngPixels {
  GridShape shape;
  std::vector<std::uint8_t> data;
};

PngPixels read_png(const std::filesystem::path& path, png_uint_32 format) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw Error("cannot read PNG " + path.string() + ": " + image.message);
  }
  image.format = format;
  PngPixels px{{static_cast<Index>(image.height), static_cast<Index>(image.width)},
               std::vector<std::uint8_t>(PNG_IMAGE_SIZE(image))};
  if (!png_image_finish_read(&image, nullptr, px.data.data(), 0, nullptr)) {
    png_image_free(&image);
    throw Error("cannot decode PNG " + path.string() + ": " + image.message);
  }
  return px;
}

void write_png(const std::filesystem::path& path, GridShape shape, png_uint_32 format,
               const std::vector<std::uint8_t>& data) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(shape.width);
  image.height = static_cast<png_uint_32>(shape.height);
  image.format = format;
  if (!png_image_write_to_file(&image, path.c_str(), 0, data.data(), 0, nullptr)) {
    throw Error("cannot write PNG " + path.string() + ": " + image.message);
  }
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

LabelMap read_label_png(const std::filesystem::path& path, int num_classes) {
  auto px = read_png(path, PNG_FORMAT_GRAY);
  LabelMap labels(px.shape, num_classes);
  for (Index i = 0; i < labels.data.size(); ++i) labels.data(i) = px.data[static_cast<std::size_t>(i)];
  labels.validate();
  return labels;
}

void write_label_png(const std::filesystem::path& path, const LabelMap& labels) {
  write_png(path, labels.shape, PNG_FORMAT_GRAY, std::vector<std::uint8_t>(labels.data.begin(), labels.data.end()));
}

Image read_image_png(const std::filesystem::path& path) {
  auto px = read_png(path, PNG_FORMAT_RGB);
  Image img(px.shape);
  for (Index i = 0; i < img.data.rows(); ++i) {
    for (int c = 0; c < 3; ++c) img.data(i, c) = px.data[static_cast<std::size_t>(3 * i + c)] / 255.0;
  }
  return img;
}

void write_rgb_png(const std::filesystem::path& path, GridShape shape,
                   const Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>& rgb) {
  std::vector<std::uint8_t> data(static_cast<std::size_t>(rgb.size()));
  for (Index i = 0; i < rgb.rows(); ++i) {
    for (int c = 0; c < 3; ++c) data[static_cast<std::size_t>(3 * i + c)] = to_byte(rgb(i, c));
  }
  write_png(path, shape, PNG_FORMAT_RGB, data);
}

void write_image_png(const std::filesystem::path& path, const Image& img) {
  write_rgb_png(path, img.shape, img.data);
}

Bytes encode_fdpt(const DepthMap& depth) {
  ByteWriter w;
  w.raw("FDPT");
  w.u16(kFdptVersion);
  w.u32(static_cast<std::uint32_t>(depth.shape.height));
  w.u32(static_cast<std::uint32_t>(depth.shape.width));
  for (Index i = 0; i < depth.values.size(); ++i) {
    w.f32(depth.valid(i) ? static_cast<float>(depth.values(i)) : std::numeric_limits<float>::quiet_NaN());
  }
  return std::move(w).bytes();
}

DepthMap decode_fdpt(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (!r.magic("FDPT")) throw FormatError(FormatErrorKind::kBadMagic, 0);
  const std::size_t version_at = r.offset();
  if (r.u16() != kFdptVersion) throw FormatError(FormatErrorKind::kBadVersion, version_at);
  GridShape shape;
  shape.height = r.u32();
  shape.width = r.u32();
  r.need(static_cast<std::size_t>(shape.size()) * 4);
  DepthMap depth(shape);
  for (Index i = 0; i < shape.size(); ++i) {
    const float v = r.f32();
    depth.valid(i) = !std::isnan(v);
    depth.values(i) = depth.valid(i) ? static_cast<double>(v) : 0.0;
  }
  if (r.remaining() != 0) throw FormatError(FormatErrorKind::kTrailingBytes, r.offset());
  return depth;
}

DepthMap read_fdpt(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_fdpt(bytes);
  } catch (const FormatError& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

void write_fdpt(const std::filesystem::path& path, const DepthMap& depth) { write_file(path, encode_fdpt(depth)); }

}  // namespace famda
