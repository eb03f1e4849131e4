#include <set>

#include "famda/augment.hpp"
#include "support.hpp"

using namespace famda;

namespace {

struct Fixture {
  Image src, tgt;
  LabelMap src_labels, tgt_pseudo;
  DepthMap depth;
};

Fixture fixture(std::uint64_t seed, GridShape s = {8, 10}) {
  Rng rng(seed);
  return {test::random_image(rng, s), test::random_image(rng, s), test::random_labels(rng, s, 5, 0.1),
          test::random_labels(rng, s, 5, 0.1), test::random_depth(rng, s, 0.1)};
}

}  // namespace

TEST_CASE("class_mix pastes exactly the chosen source classes") {
  const GridShape s{2, 4};
  LabelMap src(s, 5, 0);
  src.data << 1, 2, 3, 4, 1, 2, 3, 4;
  Rng probe(7);
  Image a(s), b(s);
  a.data.setConstant(1.0);
  const LabelMap tgt(s, 5, 0);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const MixResult m = class_mix(a, src, b, tgt, rng);
    REQUIRE(m.chosen_classes.size() == 2);
    const std::set<int> chosen(m.chosen_classes.begin(), m.chosen_classes.end());
    CHECK(chosen.size() == 2);
    for (Index i = 0; i < s.size(); ++i) {
      const bool pasted = chosen.count(src.data(i)) > 0;
      CHECK(m.paste(i) == pasted);
      CHECK(m.labels.data(i) == (pasted ? src.data(i) : 0));
      CHECK(m.image.data(i, 0) == (pasted ? 1.0 : 0.0));
    }
  }
}

TEST_CASE("class_mix chooses ceil(|S|/2) classes") {
  for (int k = 1; k <= 6; ++k) {
    const GridShape s{1, k};
    LabelMap src(s, 6, 0);
    for (Index i = 0; i < k; ++i) src.data(i) = static_cast<std::uint8_t>(i);
    Rng rng(static_cast<std::uint64_t>(k));
    const MixResult m = class_mix(Image(s), src, Image(s), LabelMap(s, 6, 0), rng);
    CHECK(m.chosen_classes.size() == static_cast<std::size_t>((k + 1) / 2));
    CHECK(m.paste.count() == (k + 1) / 2);
  }
}

TEST_CASE("class_mix with an all-ignore source returns the target") {
  const Fixture f = fixture(71);
  const LabelMap ignore(f.src.shape, 5, kIgnore);
  Rng rng(1);
  const MixResult m = class_mix(f.src, ignore, f.tgt, f.tgt_pseudo, rng);
  CHECK(m.image.data == f.tgt.data);
  CHECK(m.labels == f.tgt_pseudo);
  CHECK_FALSE(m.paste.any());
  CHECK(m.chosen_classes.empty());
}

TEST_CASE("class_mix labels come from source or target pseudo-labels") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Fixture f = fixture(seed);
    Rng rng(seed);
    const MixResult m = class_mix(f.src, f.src_labels, f.tgt, f.tgt_pseudo, rng);
    for (Index i = 0; i < f.src.shape.size(); ++i) {
      const auto& expect_img = m.paste(i) ? f.src : f.tgt;
      CHECK(m.labels.data(i) == (m.paste(i) ? f.src_labels.data(i) : f.tgt_pseudo.data(i)));
      CHECK(m.image.data.row(i) == expect_img.data.row(i));
      if (m.paste(i)) CHECK(f.src_labels.data(i) != kIgnore);
    }
  }
}

TEST_CASE("class_mix rejects mismatched shapes") {
  const Fixture f = fixture(72);
  Rng rng(0);
  CHECK_THROWS_AS(class_mix(f.src, f.src_labels, Image(GridShape{3, 3}), f.tgt_pseudo, rng), Error);
}

TEST_CASE("jitter strength 0 is the identity") {
  const Fixture f = fixture(73);
  Rng rng(5);
  CHECK(photometric_jitter(f.src, rng, 0.0).data == f.src.data);
}

TEST_CASE("jitter stays within the gain and offset bounds") {
  Rng rng(74);
  Image zero(GridShape{3, 3});
  for (int trial = 0; trial < 100; ++trial) {
    const double s = rng.uniform();
    const Image out = photometric_jitter(zero, rng, s);
    CHECK(out.data.minCoeff() >= 0.0);
    CHECK(out.data.maxCoeff() <= 0.2 * s + 1e-15);
    // Zero input: every pixel of a channel carries the same clamped offset.
    for (int c = 0; c < 3; ++c) CHECK((out.data.col(c).array() == out.data(0, c)).all());
  }
  Image one(GridShape{2, 2});
  one.data.setConstant(1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Image out = photometric_jitter(one, rng, 1.0);
    CHECK(out.data.minCoeff() >= 0.4 - 1e-12);
    CHECK(out.data.maxCoeff() <= 1.0);
  }
}

TEST_CASE("crop of the full grid without flip is the identity") {
  const Fixture f = fixture(75, GridShape{6, 6});
  const CropWindow w{0, 0, 6, false};
  CHECK(apply_window(f.src, w).data == f.src.data);
  CHECK(apply_window(f.src_labels, w) == f.src_labels);
  CHECK(apply_window(f.depth, w).values == f.depth.values);
}

TEST_CASE("flipping twice with the same window is the identity") {
  const Fixture f = fixture(76, GridShape{7, 7});
  const CropWindow w{0, 0, 7, true};
  CHECK(apply_window(apply_window(f.src, w), w).data == f.src.data);
  CHECK(apply_window(apply_window(f.src_labels, w), w) == f.src_labels);
  const DepthMap twice = apply_window(apply_window(f.depth, w), w);
  CHECK(twice.values == f.depth.values);
  CHECK((twice.valid == f.depth.valid).all());
}

TEST_CASE("crop/flip keeps the triple aligned and depth values unchanged") {
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    const Fixture f = fixture(static_cast<std::uint64_t>(trial), GridShape{9, 12});
    const Index crop = 1 + static_cast<Index>(rng.uniform_int(9));
    const AlignedTriple t = random_crop_flip(f.src, f.src_labels, f.depth, rng, crop);
    const CropWindow& w = t.window;
    for (Index r = 0; r < crop; ++r) {
      for (Index c = 0; c < crop; ++c) {
        const Index col = w.flip ? w.left + crop - 1 - c : w.left + c;
        const Index src = f.src.shape.index(w.top + r, col);
        const Index dst = r * crop + c;
        CHECK(t.image.data.row(dst) == f.src.data.row(src));
        CHECK(t.labels.data(dst) == f.src_labels.data(src));
        CHECK(t.depth.values(dst) == f.depth.values(src));
        CHECK(t.depth.valid(dst) == f.depth.valid(src));
      }
    }
  }
}

TEST_CASE("flip probability is one half") {
  Rng rng(78);
  int flips = 0;
  const int n = 4000;
  for (int k = 0; k < n; ++k) flips += draw_crop_window(rng, GridShape{4, 4}, 2).flip;
  CHECK(std::abs(flips - n / 2) < 150);
}

TEST_CASE("oversized crops throw") {
  const Fixture f = fixture(79, GridShape{4, 6});
  Rng rng(0);
  CHECK_THROWS_AS(random_crop_flip(f.src, f.src_labels, f.depth, rng, 5), Error);
  CHECK_THROWS_AS(draw_crop_window(rng, GridShape{4, 6}, 0), Error);
  CHECK_THROWS_AS(apply_window(f.src, CropWindow{1, 0, 4, false}), Error);
}

TEST_CASE("same seed, same augmentations") {
  const Fixture f = fixture(80);
  Rng a(9), b(9);
  const MixResult ma = class_mix(f.src, f.src_labels, f.tgt, f.tgt_pseudo, a);
  const MixResult mb = class_mix(f.src, f.src_labels, f.tgt, f.tgt_pseudo, b);
  CHECK(ma.image.data == mb.image.data);
  CHECK(ma.labels == mb.labels);
  CHECK(photometric_jitter(f.src, a, 0.7).data == photometric_jitter(f.src, b, 0.7).data);
  CHECK(random_crop_flip(f.src, f.src_labels, f.depth, a, 5).image.data ==
        random_crop_flip(f.src, f.src_labels, f.depth, b, 5).image.data);
}

TEST_CASE("golden augmentations at seed 42") {
  const Fixture f = fixture(81);
  Rng rng(42);
  const MixResult m = class_mix(f.src, f.src_labels, f.tgt, f.tgt_pseudo, rng);
  test::check_golden_text("class_mix_seed42.txt", test::dump_values(m.image.data) + test::dump_labels(m.labels));
  const Image j = photometric_jitter(f.src, rng, 0.5);
  test::check_golden_text("jitter_seed42.txt", test::dump_values(j.data));
  const AlignedTriple t = random_crop_flip(f.src, f.src_labels, f.depth, rng, 6);
  test::check_golden_text("crop_flip_seed42.txt", test::dump_values(t.image.data) + test::dump_labels(t.labels) +
                                                       test::dump_values(t.depth.values));
}
