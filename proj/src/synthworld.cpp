#include "famda/synthworld.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "famda/dataset.hpp"
#include "famda/io.hpp"

namespace famda {

namespace {

using Rgb = Eigen::RowVector3d;

constexpr double kGroundTexture = 0.05;
constexpr double kBuildingTexture = 0.07;
constexpr double kObjectTexture = 0.05;

double aspect(SceneClass cls) {
  switch (cls) {
    case kBuilding: return 0.9;
    case kObstacle: return 2.0;
    case kPole: return 0.1;
    default: return 1.0;
  }
}

const char* class_name(SceneClass cls) { return kClassNames[static_cast<std::size_t>(cls)]; }

Rgb noisy(const Rgb& base, double sigma, Rng& rng) {
  Rgb c = base;
  for (int k = 0; k < 3; ++k) c(k) += rng.gaussian(0.0, sigma);
  return c.cwiseMax(0.0).cwiseMin(1.0);
}

Rgb object_color(SceneClass cls, Rng& rng) {
  static const std::array<Rgb, 3> kBuildingPalette = {Rgb(0.62, 0.40, 0.32), Rgb(0.74, 0.70, 0.60),
                                                      Rgb(0.52, 0.52, 0.58)};
  static const std::array<Rgb, 5> kCarPalette = {Rgb(0.80, 0.15, 0.12), Rgb(0.15, 0.25, 0.75), Rgb(0.92, 0.92, 0.90),
                                                 Rgb(0.12, 0.12, 0.14), Rgb(0.90, 0.78, 0.15)};
  switch (cls) {
    case kBuilding: return kBuildingPalette[rng.uniform_int(kBuildingPalette.size())];
    case kObstacle: return kCarPalette[rng.uniform_int(kCarPalette.size())];
    default: return Rgb(0.25, 0.45, 0.30);
  }
}

}  // namespace

nlohmann::json SceneDistribution::to_json() const {
  return {{"height", height},           {"width", width},           {"horizon_min", horizon_min},
          {"horizon_max", horizon_max}, {"buildings_max", buildings_max}, {"obstacles_max", obstacles_max},
          {"poles_max", poles_max}};
}

SceneSpec sample_scene_spec(Rng& rng, const SceneDistribution& dist) {
  SceneSpec spec;
  spec.height = dist.height;
  spec.width = dist.width;
  spec.horizon_row =
      dist.horizon_min + static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(dist.horizon_max - dist.horizon_min + 1)));
  const auto count = [&](int max) { return static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(max + 1))); };
  const int buildings = 1 + count(std::max(0, dist.buildings_max - 1));
  const int obstacles = count(dist.obstacles_max);
  const int poles = count(dist.poles_max);
  for (int i = 0; i < buildings; ++i) {
    spec.objects.push_back({kBuilding, rng.uniform(25.0, 60.0), rng.uniform(-25.0, 25.0), rng.uniform(8.0, 20.0)});
  }
  for (int i = 0; i < obstacles; ++i) {
    spec.objects.push_back({kObstacle, rng.uniform(6.0, 30.0), rng.uniform(-6.0, 6.0), rng.uniform(1.2, 2.0)});
  }
  for (int i = 0; i < poles; ++i) {
    spec.objects.push_back({kPole, rng.uniform(5.0, 25.0), rng.uniform(-8.0, 8.0), rng.uniform(4.0, 8.0)});
  }
  return spec;
}

double ground_depth(const SceneSpec& spec, Index row) {
  if (row <= spec.horizon_row) throw Error("row is not below the horizon");
  return spec.focal * spec.cam_height / static_cast<double>(row - spec.horizon_row);
}

Scene generate_scene(Rng& rng, const SceneSpec& spec) {
  const GridShape shape{spec.height, spec.width};
  for (const auto& obj : spec.objects) {
    if (!(obj.distance > 0.0)) throw Error("object behind camera");
  }

  Scene scene{Image(shape), LabelMap(shape, spec.num_classes, kSky), DepthMap(shape), {}};
  std::vector<int> owner(static_cast<std::size_t>(shape.size()), -1);  // -1 sky, -2 ground, else object
  const double light = rng.uniform(0.85, 1.1);

  const Rgb sky_top(0.50, 0.68, 0.95), sky_low(0.82, 0.88, 0.97), asphalt(0.40, 0.38, 0.35);
  for (Index r = 0; r < shape.height; ++r) {
    for (Index c = 0; c < shape.width; ++c) {
      const Index i = shape.index(r, c);
      if (r <= spec.horizon_row) {
        const double t = spec.horizon_row > 0 ? static_cast<double>(r) / static_cast<double>(spec.horizon_row) : 1.0;
        scene.image.data.row(i) = noisy(sky_top * (1.0 - t) + sky_low * t, 0.01, rng);
        scene.depth.valid(i) = false;
      } else {
        scene.image.data.row(i) = noisy(asphalt, kGroundTexture, rng);
        scene.labels.data(i) = kGround;
        scene.depth.values(i) = ground_depth(spec, r);
        owner[static_cast<std::size_t>(i)] = -2;
      }
    }
  }

  std::vector<std::size_t> order(spec.objects.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return spec.objects[a].distance > spec.objects[b].distance; });

  for (std::size_t k : order) {
    const SceneObject& obj = spec.objects[k];
    const double d = obj.distance;
    const double base = static_cast<double>(spec.horizon_row) + spec.focal * spec.cam_height / d;
    const double top = base - spec.focal * obj.size / d;
    const double center = static_cast<double>(spec.width) / 2.0 + spec.focal * obj.lateral / d;
    const double half = spec.focal * obj.size * aspect(obj.cls) / (2.0 * d);
    const Index r0 = std::max<Index>(0, std::lround(top));
    const Index r1 = std::min<Index>(shape.height, std::max<Index>(std::lround(base), r0 + 1));
    Index c0 = std::lround(center - half);
    Index c1 = std::max<Index>(std::lround(center + half), c0 + 1);
    c0 = std::max<Index>(0, c0);
    c1 = std::min<Index>(shape.width, c1);

    const Rgb color = object_color(obj.cls, rng) * light;
    for (Index r = r0; r < r1; ++r) {
      for (Index c = c0; c < c1; ++c) {
        const Index i = shape.index(r, c);
        Rgb px = color;
        if (obj.cls == kBuilding && (r - r0) % 4 >= 1 && (r - r0) % 4 <= 2 && (c - c0) % 4 >= 1 && (c - c0) % 4 <= 2) {
          px = Rgb(0.30, 0.35, 0.45) * light;
        } else if (obj.cls == kObstacle && static_cast<double>(r - r0) > 0.75 * static_cast<double>(r1 - r0)) {
          px = Rgb(0.08, 0.08, 0.08);
        }
        scene.image.data.row(i) = noisy(px, obj.cls == kBuilding ? kBuildingTexture : kObjectTexture, rng);
        scene.labels.data(i) = obj.cls;
        scene.depth.values(i) = d;
        scene.depth.valid(i) = true;
        owner[static_cast<std::size_t>(i)] = static_cast<int>(k);
      }
    }
  }

  const auto region_for = [&](int id, SceneClass cls) {
    InstanceRegion region{cls, PixelMask::Constant(shape.size(), false)};
    for (Index i = 0; i < shape.size(); ++i) region.pixels(i) = owner[static_cast<std::size_t>(i)] == id;
    if (region.pixels.any()) scene.regions.push_back(std::move(region));
  };
  region_for(-1, kSky);
  region_for(-2, kGround);
  for (std::size_t k = 0; k < spec.objects.size(); ++k) region_for(static_cast<int>(k), spec.objects[k].cls);

  scene.image.data = scene.image.data.cwiseMax(0.0).cwiseMin(1.0);
  return scene;
}

nlohmann::json ShiftSpec::to_json() const {
  return {{"strength", strength},        {"gains", gains},
          {"offsets", offsets},          {"noise_sigma", noise_sigma},
          {"palette_rotation", palette_rotation}};
}

Image apply_domain_shift(const Image& img, const ShiftSpec& shift, Rng& rng) {
  const double s = shift.strength;
  const double theta = s * shift.palette_rotation;
  const Eigen::Vector3d axis = Eigen::Vector3d::Ones().normalized();
  Eigen::Matrix3d cross;
  cross << 0.0, -axis.z(), axis.y(), axis.z(), 0.0, -axis.x(), -axis.y(), axis.x(), 0.0;
  const Eigen::Matrix3d rot = std::cos(theta) * Eigen::Matrix3d::Identity() + std::sin(theta) * cross +
                              (1.0 - std::cos(theta)) * axis * axis.transpose();
  Rgb gain, offset;
  for (int c = 0; c < 3; ++c) {
    gain(c) = 1.0 + s * (shift.gains[static_cast<std::size_t>(c)] - 1.0);
    offset(c) = s * shift.offsets[static_cast<std::size_t>(c)];
  }
  const double sigma = s * shift.noise_sigma;

  Image out(img.shape);
  for (Index i = 0; i < img.data.rows(); ++i) {
    Rgb px = (rot * img.data.row(i).transpose()).transpose();
    px = px.cwiseProduct(gain) + offset;
    for (int c = 0; c < 3; ++c) px(c) += sigma * rng.gaussian();
    out.data.row(i) = px.cwiseMax(0.0).cwiseMin(1.0);
  }
  return out;
}

nlohmann::json OracleSpec::to_json() const {
  return {{"perturb_radius", perturb_radius}, {"drop_prob", drop_prob},     {"overseg_prob", overseg_prob},
          {"depth_scale", depth_scale},       {"depth_shift", depth_shift}, {"depth_noise", depth_noise}};
}

namespace {

PixelMask morph_step(const PixelMask& mask, GridShape shape, bool grow) {
  PixelMask out = mask;
  for (Index r = 0; r < shape.height; ++r) {
    for (Index c = 0; c < shape.width; ++c) {
      const Index i = shape.index(r, c);
      if (mask(i) == grow) continue;
      // Dilation sets a pixel touching the mask; erosion clears a mask pixel
      // touching the outside. The image border is neither.
      const auto probe = [&](Index rr, Index cc) {
        if (rr < 0 || cc < 0 || rr >= shape.height || cc >= shape.width) return false;
        return mask(shape.index(rr, cc)) == grow;
      };
      if (probe(r - 1, c) || probe(r + 1, c) || probe(r, c - 1) || probe(r, c + 1)) out(i) = grow;
    }
  }
  return out;
}

}  // namespace

PixelMask dilate(const PixelMask& mask, GridShape shape, Index radius) {
  PixelMask out = mask;
  for (Index k = 0; k < radius; ++k) out = morph_step(out, shape, true);
  return out;
}

PixelMask erode(const PixelMask& mask, GridShape shape, Index radius) {
  PixelMask out = mask;
  for (Index k = 0; k < radius; ++k) out = morph_step(out, shape, false);
  return out;
}

MaskSet oracle_masks(const std::vector<InstanceRegion>& regions, GridShape shape, const OracleSpec& oracle, Rng& rng) {
  MaskSet set;
  set.shape = shape;
  set.metadata = {{"generator", "oracle"},
                  {"perturb_radius", std::to_string(oracle.perturb_radius)},
                  {"drop_prob", std::to_string(oracle.drop_prob)},
                  {"overseg_prob", std::to_string(oracle.overseg_prob)},
                  {"points_per_side", "128"},
                  {"pred_iou_thresh", "0.86"},
                  {"stability_score_thresh", "0.92"}};
  for (const auto& region : regions) {
    const bool drop = rng.bernoulli(oracle.drop_prob);
    const bool grow = rng.bernoulli(0.5);
    const bool split = rng.bernoulli(oracle.overseg_prob);
    if (drop) continue;
    PixelMask m = grow ? dilate(region.pixels, shape, oracle.perturb_radius)
                       : erode(region.pixels, shape, oracle.perturb_radius);
    if (!m.any()) continue;
    if (!split) {
      set.add(std::move(m));
      continue;
    }
    std::vector<double> cols;
    for (Index i = 0; i < m.size(); ++i) {
      if (m(i)) cols.push_back(static_cast<double>(i % shape.width));
    }
    const double cut = median(cols);
    PixelMask left = PixelMask::Constant(m.size(), false);
    PixelMask right = left;
    for (Index i = 0; i < m.size(); ++i) {
      if (!m(i)) continue;
      (static_cast<double>(i % shape.width) < cut ? left : right)(i) = true;
    }
    if (left.any()) set.add(std::move(left));
    if (right.any()) set.add(std::move(right));
  }
  return set;
}

DepthMap oracle_depth(const DepthMap& gt, const OracleSpec& oracle, Rng& rng) {
  if (!(oracle.depth_scale > 0.0)) throw Error("depth oracle scale must be positive");
  DepthMap out = gt;
  for (Index i = 0; i < gt.values.size(); ++i) {
    if (!gt.valid(i)) continue;
    out.values(i) = oracle.depth_scale * gt.values(i) + oracle.depth_shift + oracle.depth_noise * rng.gaussian();
  }
  return out;
}

void generate_dataset(const std::filesystem::path& out_dir, const DatasetOptions& opts,
                      const nlohmann::json& extra_manifest) {
  const DatasetLayout layout{out_dir};
  if (fs::exists(out_dir) && !fs::is_empty(out_dir)) {
    if (!opts.force) throw Error("output directory " + out_dir.string() + " is not empty (use --force)");
    for (const auto& sub : {layout.images(), layout.labels(), layout.depth(), layout.masks(), layout.pseudo_depth(),
                            layout.teacher_labels(), layout.refined_labels()}) {
      fs::remove_all(sub);
    }
    fs::remove(layout.manifest());
  }
  fs::create_directories(out_dir);
  if (opts.num_images > 0) {
    for (const auto& sub : {layout.images(), layout.labels(), layout.depth(), layout.masks(), layout.pseudo_depth()}) {
      fs::create_directories(sub);
    }
  }

  std::vector<nlohmann::json> entries(opts.num_images);
  parallel_for(opts.num_images, [&](std::size_t idx) {
    char stem_buf[16];
    std::snprintf(stem_buf, sizeof(stem_buf), "%04zu", idx);
    const std::string stem = stem_buf;

    Rng rng = Rng::derive(opts.seed, idx);
    const SceneSpec spec = sample_scene_spec(rng, opts.scenes);
    Scene scene = generate_scene(rng, spec);
    const Image image = opts.shift ? apply_domain_shift(scene.image, *opts.shift, rng) : scene.image;
    const MaskSet masks = oracle_masks(scene.regions, scene.image.shape, opts.oracle, rng);
    const DepthMap pseudo = oracle_depth(scene.depth, opts.oracle, rng);

    write_image_png(layout.image(stem), image);
    write_label_png(layout.label(stem), scene.labels);
    write_fdpt(layout.gt_depth(stem), scene.depth);
    write_maskset(layout.mask(stem), masks);
    write_fdpt(layout.pseudo(stem), pseudo);

    nlohmann::json objects = nlohmann::json::array();
    for (const auto& o : spec.objects) {
      objects.push_back({{"class", class_name(o.cls)}, {"distance_m", o.distance}, {"lateral_m", o.lateral},
                         {"size_m", o.size}});
    }
    entries[idx] = {{"stem", stem},
                    {"rng_stream", idx},
                    {"horizon_row", spec.horizon_row},
                    {"focal", spec.focal},
                    {"cam_height", spec.cam_height},
                    {"objects", objects},
                    {"num_masks", masks.masks.size()}};
  });

  nlohmann::json manifest = {{"name", opts.name},
                             {"num_classes", kSceneClasses},
                             {"class_names", kClassNames},
                             {"num_images", opts.num_images},
                             {"seed", opts.seed},
                             {"scenes", opts.scenes.to_json()},
                             {"shift", opts.shift ? opts.shift->to_json() : nlohmann::json(nullptr)},
                             {"oracle", opts.oracle.to_json()},
                             {"images", entries}};
  if (!extra_manifest.is_null()) manifest["config"] = extra_manifest;
  write_json(layout.manifest(), manifest);
}

}  // namespace famda
