#pragma once

// Seeded augmentations. Class-mix is for the segmentation stream only; the
// depth stream gets jitter and crop/flip.

#include <vector>

#include "famda/gridcore.hpp"
#include "famda/rng.hpp"

namespace famda {

struct MixResult {
  Image image;
  LabelMap labels;
  PixelMask paste;  // true where the source was pasted
  std::vector<int> chosen_classes;
};

/// Pastes ceil(|S|/2) randomly chosen source classes onto the target.
MixResult class_mix(const Image& src_img, const LabelMap& src_labels, const Image& tgt_img,
                    const LabelMap& tgt_pseudo, Rng& rng);

/// Per-channel gain in [1-0.4s, 1+0.4s] and offset in [-0.2s, 0.2s], clamped.
Image photometric_jitter(const Image& img, Rng& rng, double strength);

struct CropWindow {
  Index top = 0;
  Index left = 0;
  Index size = 0;
  bool flip = false;  // horizontal
};

CropWindow draw_crop_window(Rng& rng, GridShape shape, Index crop);

Image apply_window(const Image& img, const CropWindow& w);
LabelMap apply_window(const LabelMap& labels, const CropWindow& w);
DepthMap apply_window(const DepthMap& depth, const CropWindow& w);

struct AlignedTriple {
  Image image;
  LabelMap labels;
  DepthMap depth;
  CropWindow window;
};

/// One window and one flip decision shared by all three grids. Depth values
/// are copied unchanged.
AlignedTriple random_crop_flip(const Image& img, const LabelMap& labels, const DepthMap& depth, Rng& rng,
                               Index crop);

}  // namespace famda
