#pragma once

// Procedural road scenes with exact ground truth, plus noisy stand-ins for
// the mask and depth foundation models.

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "famda/gridcore.hpp"
#include "famda/maskcache.hpp"
#include "famda/rng.hpp"

namespace famda {

enum SceneClass : std::uint8_t { kSky = 0, kGround = 1, kBuilding = 2, kObstacle = 3, kPole = 4 };
inline constexpr int kSceneClasses = 5;
inline constexpr std::array<const char*, kSceneClasses> kClassNames = {"sky", "ground", "building", "obstacle", "pole"};

struct SceneObject {
  SceneClass cls = kObstacle;
  double distance = 10.0;  // along the ground, meters
  double lateral = 0.0;    // meters, positive to the right
  double size = 1.5;       // height in meters; width follows a per-class aspect ratio
};

struct SceneSpec {
  Index height = 64;
  Index width = 64;
  int num_classes = kSceneClasses;
  Index horizon_row = 24;
  double focal = 64.0;       // pixels
  double cam_height = 1.5;   // meters
  std::vector<SceneObject> objects;
};

/// Ranges for sampling random scene specs.
struct SceneDistribution {
  Index height = 64;
  Index width = 64;
  Index horizon_min = 20;
  Index horizon_max = 28;
  int buildings_max = 3;
  int obstacles_max = 3;
  int poles_max = 2;

  nlohmann::json to_json() const;
};

SceneSpec sample_scene_spec(Rng& rng, const SceneDistribution& dist);

struct InstanceRegion {
  SceneClass cls;
  PixelMask pixels;
};

struct Scene {
  Image image;
  LabelMap labels;
  DepthMap depth;  // sky invalid
  std::vector<InstanceRegion> regions;  // sky, ground, then one per visible object
};

/// Ground depth at a row below the horizon: focal * cam_height / (row - horizon).
double ground_depth(const SceneSpec& spec, Index row);

/// Renders objects back to front; each object has constant depth.
Scene generate_scene(Rng& rng, const SceneSpec& spec);

/// Photometric target-domain shift. Full-strength parameters are scaled by
/// `strength`, so strength 0 is the identity.
struct ShiftSpec {
  double strength = 0.0;
  std::array<double, 3> gains = {0.6, 1.0, 1.4};
  std::array<double, 3> offsets = {0.1, 0.0, -0.1};
  double noise_sigma = 0.25;
  double palette_rotation = 1.5707963267948966;  // radians about the gray axis

  static ShiftSpec with_strength(double s) {
    ShiftSpec spec;
    spec.strength = s;
    return spec;
  }
  nlohmann::json to_json() const;
};

/// Rotation about the gray axis, per-channel affine, Gaussian noise, clamp.
Image apply_domain_shift(const Image& img, const ShiftSpec& shift, Rng& rng);

struct OracleSpec {
  Index perturb_radius = 0;     // pixels, each region dilated or eroded
  double drop_prob = 0.05;
  double overseg_prob = 0.1;
  double depth_scale = 2.0;     // a > 0
  double depth_shift = 0.5;     // b
  double depth_noise = 0.1;     // meters

  nlohmann::json to_json() const;
};

MaskSet oracle_masks(const std::vector<InstanceRegion>& regions, GridShape shape, const OracleSpec& oracle, Rng& rng);
DepthMap oracle_depth(const DepthMap& gt, const OracleSpec& oracle, Rng& rng);

/// 4-neighbourhood dilation / erosion, `radius` iterations.
PixelMask dilate(const PixelMask& mask, GridShape shape, Index radius);
PixelMask erode(const PixelMask& mask, GridShape shape, Index radius);

struct DatasetOptions {
  std::size_t num_images = 0;
  SceneDistribution scenes;
  std::optional<ShiftSpec> shift;
  OracleSpec oracle;
  std::uint64_t seed = 0;
  bool force = false;
  std::string name;
};

/// Writes images/, labels/, depth/, masks/, pseudo_depth/ and manifest.json.
/// Image i draws everything from Rng::derive(seed, i).
void generate_dataset(const std::filesystem::path& out_dir, const DatasetOptions& opts,
                      const nlohmann::json& extra_manifest = {});

}  // namespace famda
