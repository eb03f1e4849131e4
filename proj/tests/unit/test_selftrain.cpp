#include <cmath>

#include "famda/dataset.hpp"
#include "famda/depthloss.hpp"
#include "famda/refine.hpp"
#include "famda/selftrain.hpp"
#include "famda/synthworld.hpp"
#include "support.hpp"

using namespace famda;

namespace {

constexpr Index kSide = 20;

SceneDistribution tiny_scenes() {
  SceneDistribution d;
  d.height = kSide;
  d.width = kSide;
  d.horizon_min = 6;
  d.horizon_max = 9;
  return d;
}

TrainData fixture_data(std::uint64_t seed, std::size_t n = 4) {
  TrainData data;
  data.num_classes = kSceneClasses;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = Rng::derive(seed, i);
    Scene src = generate_scene(rng, sample_scene_spec(rng, tiny_scenes()));
    data.source.push_back({"s" + std::to_string(i), src.image, src.labels});
    Scene tgt = generate_scene(rng, sample_scene_spec(rng, tiny_scenes()));
    TargetSample t;
    t.stem = "t" + std::to_string(i);
    t.image = apply_domain_shift(tgt.image, ShiftSpec::with_strength(0.6), rng);
    t.masks = oracle_masks(tgt.regions, tgt.image.shape, OracleSpec{}, rng);
    t.pseudo_depth = oracle_depth(tgt.depth, OracleSpec{}, rng);
    t.clean_features = extract_features(t.image);
    data.target.push_back(std::move(t));
  }
  return data;
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.crop = 16;
  cfg.iters = 40;
  cfg.warmup = 10;
  cfg.log_every = 10;
  cfg.eval_every = 20;
  cfg.seed = 3;
  return cfg;
}

struct StepFixture {
  TrainData data = fixture_data(7, 2);
  MultiTaskModel student;
  MultiTaskModel teacher;
  std::vector<const SourceSample*> src;
  std::vector<const TargetSample*> tgt;

  StepFixture() {
    Rng init(7);
    student = MultiTaskModel::random(kSceneClasses, init, 0.3);
    teacher = make_teacher(MultiTaskModel::random(kSceneClasses, init, 0.3));
    for (std::size_t i = 0; i < 2; ++i) {
      src.push_back(&data.source[i]);
      tgt.push_back(&data.target[i]);
    }
  }
};

}  // namespace

TEST_CASE("ema_update examples") {
  Eigen::VectorXd t(2), s(2);
  t << 1, 2;
  s << 3, 4;
  const ParamVec out = ema_update(t, s, 0.9);
  CHECK(std::abs(out(0) - 1.2) < 1e-12);
  CHECK(std::abs(out(1) - 2.2) < 1e-12);
  CHECK(ema_update(t, s, 1.0) == t);
  CHECK(ema_update(s, s, 0.37) == s);
  CHECK_THROWS_AS(ema_update(t, s, 0.0), Error);
  CHECK_THROWS_AS(ema_update(t, s, 1.5), Error);
  CHECK_THROWS_AS(ema_update(t, Eigen::VectorXd(3), 0.5), Error);
}

TEST_CASE("ema_update matches its formula on random vectors") {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const Index n = 1 + static_cast<Index>(rng.uniform_int(50));
    Eigen::VectorXd t(n), s(n);
    for (Index i = 0; i < n; ++i) {
      t(i) = rng.gaussian(0.0, 3.0);
      s(i) = rng.gaussian(0.0, 3.0);
    }
    const double alpha = 1.0 - rng.uniform();
    const ParamVec out = ema_update(t, s, alpha);
    for (Index i = 0; i < n; ++i) CHECK(std::abs(out(i) - (alpha * t(i) + (1.0 - alpha) * s(i))) <= 1e-12);
  }
}

TEST_CASE("iterated EMA converges geometrically to a fixed student") {
  Rng rng(2);
  Eigen::VectorXd t0(6), s(6);
  for (Index i = 0; i < 6; ++i) {
    t0(i) = rng.gaussian();
    s(i) = rng.gaussian();
  }
  const double alpha = 0.9;
  ParamVec t = t0;
  for (int n = 1; n <= 50; ++n) {
    t = ema_update(t, s, alpha);
    const ParamVec closed = s + std::pow(alpha, n) * (t0 - s);
    CHECK((t - closed).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("EMA scope covers the shared layer and segmentation head only") {
  const MultiTaskModel student(kSceneClasses);
  const auto& L = student.layout();
  const EmaScope scope = ema_scope(L);
  CHECK(scope.tracked == L.shared_size() + L.seg_size());
  CHECK(scope.frozen == L.depth_size());
  const MultiTaskModel teacher = make_teacher(student);
  CHECK(teacher.params().size() == scope.tracked);
  CHECK_FALSE(teacher.has_depth_head());

  Rng rng(3);
  const MultiTaskModel init = make_teacher(MultiTaskModel::random(kSceneClasses, rng));
  MultiTaskModel t = init;
  for (int k = 0; k < 10; ++k) t = update_teacher(t, MultiTaskModel::random(kSceneClasses, rng), 1.0);
  CHECK(t == init);

  CHECK_THROWS_AS(update_teacher(MultiTaskModel(kSceneClasses), student, 0.5), Error);
}

TEST_CASE("pseudo-label quality weight") {
  const TrainData data = fixture_data(4, 1);
  const FeatureGrid& phi = data.target[0].clean_features;
  const MultiTaskModel zero = make_teacher(MultiTaskModel(kSceneClasses));
  // Uniform probabilities: max 0.2.
  CHECK(make_pseudo_label(zero, phi, nullptr, 0.2).quality == 1.0);
  CHECK(make_pseudo_label(zero, phi, nullptr, 0.968).quality == 0.0);

  Rng rng(5);
  const MultiTaskModel teacher = make_teacher(MultiTaskModel::random(kSceneClasses, rng, 2.0));
  const ProbMap probs = forward(teacher, phi).probs;
  const double tau = 0.5;
  const double want = static_cast<double>((probs.data.rowwise().maxCoeff().array() >= tau).count()) /
                      static_cast<double>(phi.shape.size());
  const PseudoLabel pl = make_pseudo_label(teacher, phi, &*data.target[0].masks, tau);
  CHECK(pl.quality == want);
  CHECK(pl.raw == argmax_labels(probs));
  CHECK(pl.labels == majority_vote_refine(pl.raw, probs, *data.target[0].masks));
  CHECK(make_pseudo_label(teacher, phi, nullptr, tau).labels == pl.raw);

  test::check_golden_text("pseudo_label.txt", test::dump_labels(pl.raw) + test::dump_labels(pl.labels) +
                                                  test::dump_values(Eigen::VectorXd::Constant(1, pl.quality)));
}

TEST_CASE("lr = 0 leaves the student alone and only EMA moves the teacher") {
  StepFixture f;
  TrainConfig cfg = small_config();
  cfg.lr = 0.0;
  Rng rng(7);
  const StepOutput out = train_step(f.student, f.teacher, f.src, f.tgt, cfg, rng, true);
  CHECK(out.student == f.student);
  CHECK(out.teacher == update_teacher(f.teacher, f.student, cfg.alpha));
  for (double v : {out.losses.l_ce_s, out.losses.l_ce_t, out.losses.l_rmse_t, out.losses.l_total}) {
    CHECK(std::isfinite(v));
  }
}

TEST_CASE("the teacher only changes through EMA") {
  StepFixture f;
  TrainConfig cfg = small_config();
  Rng rng(8);
  const StepOutput out = train_step(f.student, f.teacher, f.src, f.tgt, cfg, rng, true);
  CHECK(out.teacher == update_teacher(f.teacher, f.student, cfg.alpha));
  CHECK(out.student.params() == sgd_step(f.student.params(), out.grad, cfg.lr));
  Rng rng2(8);
  CHECK(train_step(f.student, f.teacher, f.src, f.tgt, cfg, rng2, false).teacher == f.teacher);
}

TEST_CASE("beta = 0 gives the depth head no gradient") {
  StepFixture f;
  TrainConfig cfg = small_config();
  cfg.beta = 0.0;
  for (bool mix : {true, false}) {
    cfg.mix = mix;
    Rng rng(9);
    const StepOutput out = train_step(f.student, f.teacher, f.src, f.tgt, cfg, rng, true);
    const auto& L = f.student.layout();
    CHECK(out.grad.segment(L.depth_offset(), L.depth_size()).isZero());
    CHECK(out.losses.l_total == out.losses.l_ce_s + out.losses.l_ce_t);
  }
}

TEST_CASE("recorded inputs reproduce the reported losses") {
  StepFixture f;
  for (bool mix : {true, false}) {
    for (DepthLossKind kind : {DepthLossKind::kSsi, DepthLossKind::kPlain}) {
      TrainConfig cfg = small_config();
      cfg.mix = mix;
      cfg.depth_loss = kind;
      Rng rng(10);
      const StepOutput out = train_step(f.student, f.teacher, f.src, f.tgt, cfg, rng, true, true);
      REQUIRE(out.records.size() == 2);
      double ce_s = 0.0, ce_t = 0.0, rmse = 0.0;
      for (const ItemRecord& r : out.records) {
        ce_s += ce_loss(forward(f.student, extract_features(r.src_image)).probs, r.src_labels).loss / 2;
        ce_t += ce_loss(forward(f.student, extract_features(r.seg_image)).probs, r.seg_labels, r.seg_weights).loss / 2;
        const DepthMap pred = forward(f.student, extract_features(r.depth_image)).depth;
        rmse += (kind == DepthLossKind::kSsi ? ssi_rmse_loss(pred, r.depth_target)
                                             : plain_rmse_grad(pred, r.depth_target).loss) /
                2;
        for (Index i = 0; i < r.seg_weights.size(); ++i) {
          CHECK(r.seg_weights(i) == (r.paste(i) ? 1.0 : r.quality));
        }
      }
      CHECK(test::rel_error(out.losses.l_ce_s, ce_s) < 1e-12);
      CHECK(test::rel_error(out.losses.l_ce_t, ce_t) < 1e-12);
      CHECK(test::rel_error(out.losses.l_rmse_t, rmse) < 1e-12);
      CHECK(out.losses.l_total == doctest::Approx(ce_s + ce_t + cfg.beta * rmse).epsilon(1e-12));
    }
  }
}

TEST_CASE("golden loss breakdown at seed 7") {
  StepFixture f;
  TrainConfig cfg = small_config();
  Rng rng(7);
  const StepOutput out = train_step(f.student, f.teacher, f.src, f.tgt, cfg, rng, true);
  Eigen::VectorXd v(5);
  v << out.losses.l_ce_s, out.losses.l_ce_t, out.losses.l_rmse_t, out.losses.q_mean, out.losses.l_total;
  test::check_golden_text("train_step_seed7.txt", test::dump_values(v));
}

TEST_CASE("the depth stream never sees a class-mixed image") {
  StepFixture f;
  TrainConfig cfg = small_config();
  cfg.jitter = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const StepOutput out = train_step(f.student, f.teacher, f.src, f.tgt, cfg, rng, true, true);
    for (std::size_t b = 0; b < out.records.size(); ++b) {
      const ItemRecord& r = out.records[b];
      const TargetSample& t = *f.tgt[b];
      // Some window of the clean target must reproduce both depth inputs.
      bool found = false;
      for (Index top = 0; top + cfg.crop <= kSide && !found; ++top) {
        for (Index left = 0; left + cfg.crop <= kSide && !found; ++left) {
          for (bool flip : {false, true}) {
            const CropWindow w{top, left, cfg.crop, flip};
            if (apply_window(t.image, w).data == r.depth_image.data &&
                apply_window(*t.pseudo_depth, w).values == r.depth_target.values) {
              found = true;
              break;
            }
          }
        }
      }
      CHECK(found);
      for (Index i = 0; i < r.paste.size(); ++i) {
        if (r.paste(i)) CHECK(r.seg_image.data.row(i) == r.src_image.data.row(i));
      }
    }
  }
}

TEST_CASE("missing target caches name the image") {
  StepFixture f;
  TargetSample no_depth = *f.tgt[0];
  no_depth.pseudo_depth.reset();
  TargetSample no_masks = *f.tgt[0];
  no_masks.masks.reset();
  TrainConfig cfg = small_config();
  Rng rng(11);
  CHECK_THROWS_WITH(train_step(f.student, f.teacher, {f.src[0]}, {&no_depth}, cfg, rng, true),
                    doctest::Contains("t0"));
  CHECK_THROWS_WITH(train_step(f.student, f.teacher, {f.src[0]}, {&no_masks}, cfg, rng, true),
                    doctest::Contains("mask cache"));
  cfg.refine = false;
  CHECK_NOTHROW(train_step(f.student, f.teacher, {f.src[0]}, {&no_masks}, cfg, rng, true));
  CHECK_THROWS_AS(train_step(f.student, f.teacher, {}, {}, cfg, rng, false), Error);
}

TEST_CASE("a crop without valid pseudo-depth contributes no depth loss") {
  StepFixture f;
  TargetSample sky = *f.tgt[0];
  sky.pseudo_depth->valid.setConstant(false);
  TrainConfig cfg = small_config();
  Rng rng(12);
  const StepOutput out = train_step(f.student, f.teacher, {f.src[0]}, {&sky}, cfg, rng, true);
  CHECK(out.losses.l_rmse_t == 0.0);
  const auto& L = f.student.layout();
  CHECK(out.grad.segment(L.depth_offset(), L.depth_size()).isZero());
}

TEST_CASE("iters = 0 returns the initial model") {
  const TrainData data = fixture_data(12, 2);
  TrainConfig cfg = small_config();
  cfg.iters = 0;
  const TrainResult r = train_loop(data, cfg);
  CHECK(r.student == r.initial);
  CHECK(r.trace.empty());
  CHECK_FALSE(r.teacher);
}

TEST_CASE("training is deterministic per seed") {
  const TrainData data = fixture_data(13, 3);
  const TrainConfig cfg = small_config();
  const TrainResult a = train_loop(data, cfg);
  const TrainResult b = train_loop(data, cfg);
  CHECK(trace_to_jsonl(a.trace) == trace_to_jsonl(b.trace));
  CHECK(a.student == b.student);
  REQUIRE(a.teacher);
  CHECK(*a.teacher == *b.teacher);

  TrainConfig other = cfg;
  other.seed = 4;
  CHECK_FALSE(train_loop(data, other).student == a.student);
}

TEST_CASE("trace layout") {
  const TrainData data = fixture_data(14, 3);
  std::vector<EvalSample> monitor;
  for (std::uint64_t i = 0; i < 2; ++i) {
    Rng rng = Rng::derive(99, i);
    const Scene s = generate_scene(rng, sample_scene_spec(rng, tiny_scenes()));
    monitor.push_back({"t" + std::to_string(i), extract_features(s.image), s.labels, s.depth});
  }
  const TrainResult r = train_loop(data, small_config(), &monitor);
  REQUIRE(r.trace.size() == 5);
  CHECK(r.trace[0]["phase"] == "init");
  CHECK(r.trace[0].contains("miou"));
  CHECK(r.trace[1]["phase"] == "warmup");
  CHECK(r.trace[1]["l_ce_t"] == 0.0);
  CHECK(r.trace[4]["phase"] == "adapt");
  CHECK(r.trace[4]["step"] == 40);
  for (const char* key : {"l_ce_s", "l_ce_t", "l_rmse_t", "l_total", "q_mean", "miou", "rmse"}) {
    CHECK_MESSAGE(r.trace[4].contains(key), key);
  }
  CHECK(r.trace[2].contains("miou"));
  CHECK_FALSE(r.trace[3].contains("miou"));
  CHECK(r.trace[4].contains("pl_acc_refined"));
}

TEST_CASE("source-only baseline is the loop without target losses") {
  const TrainData data = fixture_data(15, 2);
  TrainConfig cfg = small_config();
  const TrainResult base = source_only_baseline(data, cfg);
  cfg.source_only = true;
  const TrainResult direct = train_loop(data, cfg);
  CHECK(base.student == direct.student);
  CHECK_FALSE(base.teacher);
  for (const auto& e : base.trace) {
    CHECK(e["l_ce_t"] == 0.0);
    CHECK(e["l_rmse_t"] == 0.0);
  }
  // Target data is not needed at all.
  TrainData source_only = data;
  source_only.target.clear();
  CHECK(source_only_baseline(source_only, cfg).student == base.student);
}

TEST_CASE("evaluate_model pools confusion and averages RMSE") {
  std::vector<EvalSample> samples;
  for (std::uint64_t i = 0; i < 3; ++i) {
    Rng rng = Rng::derive(16, i);
    const Scene s = generate_scene(rng, sample_scene_spec(rng, tiny_scenes()));
    samples.push_back({"e" + std::to_string(i), extract_features(s.image), s.labels, s.depth});
  }
  Rng rng(17);
  const MultiTaskModel m = MultiTaskModel::random(kSceneClasses, rng, 1.0);
  const EvalReport report = evaluate_model(m, samples);
  ConfusionMatrix cm(kSceneClasses);
  double rmse = 0.0;
  for (const auto& s : samples) {
    const ForwardResult fw = forward(m, s.features);
    cm.add(argmax_labels(fw.probs), s.labels);
    rmse += evaluate_depth(fw.depth, s.depth) / 3.0;
  }
  CHECK(report.seg.miou == compute_miou(cm).miou);
  CHECK(report.rmse_m == doctest::Approx(rmse).epsilon(1e-12));
  CHECK(report.num_images == 3);
  CHECK_THROWS_AS(evaluate_model(m, {}), Error);
}

TEST_CASE("load_train_data reads no source depth and no target labels") {
  test::TempDir dir("selftrain_load");
  DatasetOptions opts;
  opts.num_images = 2;
  opts.scenes = tiny_scenes();
  opts.name = "source";
  generate_dataset(dir / "source", opts);
  opts.name = "target";
  opts.seed = 1;
  opts.shift = ShiftSpec::with_strength(0.6);
  generate_dataset(dir / "target", opts);
  fs::remove_all(dir / "source" / "depth");
  fs::remove_all(dir / "source" / "pseudo_depth");
  fs::remove_all(dir / "target" / "labels");
  fs::remove_all(dir / "target" / "depth");
  const TrainData data = load_train_data(dir / "source", dir / "target");
  CHECK(data.num_classes == kSceneClasses);
  REQUIRE(data.source.size() == 2);
  REQUIRE(data.target.size() == 2);
  CHECK(data.target[0].masks);
  CHECK(data.target[0].pseudo_depth);
  CHECK(data.target[1].clean_features.data == extract_features(data.target[1].image).data);
}

TEST_CASE("config parsing") {
  const auto kv = parse_key_values("# comment\n alpha = 0.99 \n\nmix=false\ndepth_loss=plain\nseed=18446744073709551615\n");
  CHECK(kv.size() == 4);
  TrainConfig cfg;
  cfg.apply(kv);
  CHECK(cfg.alpha == 0.99);
  CHECK_FALSE(cfg.mix);
  CHECK(cfg.depth_loss == DepthLossKind::kPlain);
  CHECK(cfg.seed == 18446744073709551615ULL);
  CHECK(cfg.to_json()["depth_loss"] == "plain");
  CHECK(cfg.to_json()["seed"] == 18446744073709551615ULL);

  CHECK_THROWS_WITH(parse_key_values("alpha 0.9"), "config line 1: expected key=value");
  CHECK_THROWS_WITH(cfg.apply({{"gamma", "1"}}), "unknown config key 'gamma'");
  CHECK_THROWS_AS(cfg.apply({{"mix", "maybe"}}), Error);
  CHECK_THROWS_AS(cfg.apply({{"lr", "0.1x"}}), Error);
  CHECK_THROWS_AS(cfg.apply({{"seed", "-1"}}), Error);

  for (const auto& [key, value] : std::vector<std::pair<std::string, std::string>>{
           {"alpha", "0"}, {"alpha", "1.5"}, {"beta", "-1"}, {"batch", "0"}, {"tau", "2"}, {"jitter", "3"}}) {
    TrainConfig bad;
    bad.apply({{key, value}});
    CHECK_THROWS_AS(bad.validate(), Error);
  }
  TrainConfig defaults;
  CHECK(defaults.alpha == 0.999);
  CHECK(defaults.beta == 0.1);
  CHECK(defaults.quality_tau == 0.968);
  CHECK(defaults.warmup == 200);
  CHECK_NOTHROW(defaults.validate());
}
