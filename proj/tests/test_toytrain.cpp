#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "iqdet/toy/eval.hpp"
#include "iqdet/toy/scene.hpp"
#include "iqdet/toy/train.hpp"
#include "testutil.hpp"

using namespace iqdet;
using testutil::check_grad;

// ---------------------------------------------------------------------------
// scenes

TEST_CASE("scenes are deterministic and structurally valid") {
  for (std::uint64_t seed : {1ull, 7ull, 1234ull}) {
    const SyntheticScene a = generate_scene(seed);
    const SyntheticScene b = generate_scene(seed);
    CHECK((a.image.data == b.image.data).all());
    REQUIRE(a.instances.size() == b.instances.size());

    CHECK(a.image.channels == 1);
    CHECK(a.image.height == 64);
    CHECK(a.image.width == 64);
    CHECK(a.image.stride == 1.0);
    CHECK(a.image.data.minCoeff() >= 0.0);
    CHECK(a.image.data.maxCoeff() <= 1.0);

    CHECK(a.instances.size() >= 1);
    CHECK(a.instances.size() <= 4);
    for (const GtInstance& gt : a.instances) {
      CHECK_NOTHROW(validate(gt.box));
      CHECK(gt.box.x1 >= 1.0);
      CHECK(gt.box.y1 >= 1.0);
      CHECK(gt.box.x2 <= 63.0);
      CHECK(gt.box.y2 <= 63.0);
      CHECK((gt.class_id == 0 || gt.class_id == 1));
    }
  }
  CHECK_THROWS_AS(generate_scene(1, 32), std::domain_error);
}

TEST_CASE("painted pixels concentrate inside the annotation box") {
  // Single-instance scenes: foreground intensities exceed the background
  // band, so the bright-pixel centroid must fall inside the box.
  int tested = 0;
  for (std::uint64_t seed = 0; seed < 200 && tested < 20; ++seed) {
    const SyntheticScene s = generate_scene(seed);
    if (s.instances.size() != 1) continue;
    ++tested;
    const Box& box = s.instances[0].box;
    Scalar cx = 0, cy = 0, mass = 0;
    for (int i = 0; i < 64; ++i) {
      for (int j = 0; j < 64; ++j) {
        if (s.image.at(0, i, j) > 0.135) {
          cx += j + 0.5;
          cy += i + 0.5;
          mass += 1;
        }
      }
    }
    REQUIRE(mass > 0);
    cx /= mass;
    cy /= mass;
    CHECK(contains(box, cx, cy));
    // And the painted area is a sizable fraction of the box (the ring
    // band covers the least, about a fifth for the largest boxes).
    CHECK(mass >= 0.12 * box.area());
  }
  CHECK(tested == 20);
}

TEST_CASE("different seeds give different scenes") {
  const SyntheticScene a = generate_scene(100);
  const SyntheticScene b = generate_scene(101);
  CHECK((a.image.data != b.image.data).any());
}

// ---------------------------------------------------------------------------
// convolution and detector

TEST_CASE("a center-tap identity kernel reproduces its input") {
  ConvLayer conv = make_conv(2, 2, 1, false);
  conv.w.setZero();
  conv.b.setZero();
  for (int c = 0; c < 2; ++c) conv.w(c, (c * 3 + 1) * 3 + 1) = 1.0;

  Rng rng(101);
  FeatureGrid in(2, 6, 6, 1.0);
  for (Eigen::Index i = 0; i < in.data.size(); ++i) in.data[i] = rng.uniform(-1, 1);
  const FeatureGrid out = conv_forward(conv, in, nullptr);
  CHECK(out.height == 6);
  CHECK(out.width == 6);
  CHECK((out.data == in.data).all());

  // Stride 2 subsamples the even lattice through the center tap.
  ConvLayer conv2 = conv;
  conv2.stride = 2;
  const FeatureGrid half = conv_forward(conv2, in, nullptr);
  CHECK(half.height == 3);
  CHECK(half.width == 3);
  CHECK(half.stride == 2.0);
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) CHECK(half.at(c, i, j) == in.at(c, 2 * i, 2 * j));
}

TEST_CASE("zero-weight convolutions emit their bias") {
  ConvLayer conv = make_conv(3, 2, 1, false);
  conv.w.setZero();
  conv.b << 1.5, -0.25;
  FeatureGrid in(3, 4, 4, 1.0);
  in.data.setConstant(9.0);
  const FeatureGrid out = conv_forward(conv, in, nullptr);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      CHECK(out.at(0, i, j) == 1.5);
      CHECK(out.at(1, i, j) == -0.25);
    }

  // ReLU clips the negative bias plane.
  ConvLayer relu_conv = conv;
  relu_conv.relu = true;
  const FeatureGrid clipped = conv_forward(relu_conv, in, nullptr);
  for (int i = 0; i < 4; ++i) CHECK(clipped.at(1, i, 0) == 0.0);
}

TEST_CASE("conv_backward matches directional finite differences") {
  Rng rng(102);
  for (const bool relu : {false, true}) {
    for (const int stride : {1, 2}) {
      ConvLayer conv = make_conv(2, 3, stride, relu);
      {
        Rng wr(Rng::derive_seed(103, stride + (relu ? 10 : 0)));
        for (Eigen::Index i = 0; i < conv.w.size(); ++i)
          conv.w.data()[i] = wr.uniform(-0.5, 0.5);
        for (Eigen::Index i = 0; i < conv.b.size(); ++i) conv.b[i] = wr.uniform(-0.2, 0.2);
      }
      FeatureGrid in(2, 6, 6, 1.0);
      for (Eigen::Index i = 0; i < in.data.size(); ++i) in.data[i] = rng.uniform(-1, 1);

      ConvCache cache;
      const FeatureGrid out = conv_forward(conv, in, &cache);
      if (relu && cache.pre.cwiseAbs().minCoeff() < 1e-2) continue;  // kink guard

      Array up(out.data.size());
      for (Eigen::Index i = 0; i < up.size(); ++i) up[i] = rng.uniform(-1, 1);

      Matrix dw = Matrix::Zero(conv.w.rows(), conv.w.cols());
      Vector db = Vector::Zero(conv.b.size());
      const Array d_in = conv_backward(conv, cache, up, dw, db);

      const Scalar h = 1e-5;
      const auto loss_of = [&](const ConvLayer& l, const FeatureGrid& x) {
        return (conv_forward(l, x, nullptr).data * up).sum();
      };

      Matrix wdir = Matrix::Zero(conv.w.rows(), conv.w.cols());
      for (Eigen::Index i = 0; i < wdir.size(); ++i) wdir.data()[i] = rng.uniform(-1, 1);
      ConvLayer cp = conv, cm = conv;
      cp.w += h * wdir;
      cm.w -= h * wdir;
      check_grad((dw.array() * wdir.array()).sum(),
                 (loss_of(cp, in) - loss_of(cm, in)) / (2 * h), 1e-6, 1e-8);

      Vector bdir = Vector::Zero(conv.b.size());
      for (Eigen::Index i = 0; i < bdir.size(); ++i) bdir[i] = rng.uniform(-1, 1);
      cp = conv;
      cm = conv;
      cp.b += h * bdir;
      cm.b -= h * bdir;
      check_grad((db.array() * bdir.array()).sum(),
                 (loss_of(cp, in) - loss_of(cm, in)) / (2 * h), 1e-6, 1e-8);

      Array idir(in.data.size());
      for (Eigen::Index i = 0; i < idir.size(); ++i) idir[i] = rng.uniform(-1, 1);
      FeatureGrid ip = in, im = in;
      ip.data += h * idir;
      im.data -= h * idir;
      check_grad((d_in * idir).sum(),
                 (loss_of(conv, ip) - loss_of(conv, im)) / (2 * h), 1e-6, 1e-8);
    }
  }
}

TEST_CASE("detector forward produces the pyramid shapes") {
  const ToyDetectorConfig cfg;
  const ToyDetector det = init_detector(5, cfg);
  const SyntheticScene scene = generate_scene(3);
  const DetectorActivations acts = detector_forward(det, scene.image);

  REQUIRE(acts.features.size() == 2);
  CHECK(acts.g1.height == 32);
  CHECK(acts.g2.height == 16);
  CHECK(acts.features[0].height == 8);
  CHECK(acts.features[0].stride == 8.0);
  CHECK(acts.features[1].height == 4);
  CHECK(acts.features[1].stride == 16.0);
  CHECK(acts.features[0].channels == cfg.channels);

  REQUIRE(acts.preds.size() == 2);
  CHECK(acts.preds[0].cls.channels == 2);
  CHECK(acts.preds[0].reg.channels == 4);
  CHECK(acts.preds[0].aux.channels == 1);
  CHECK(acts.preds[1].cls.height == 4);
  CHECK(acts.preds[1].cls.stride == 16.0);
}

TEST_CASE("detector init is seeded with the focal-prior class bias") {
  const ToyDetectorConfig cfg;
  const ToyDetector a = init_detector(9, cfg);
  const ToyDetector b = init_detector(9, cfg);
  const ToyDetector c = init_detector(10, cfg);
  CHECK(a.stem1.w == b.stem1.w);
  CHECK(a.head_cls.w == b.head_cls.w);
  CHECK(a.stem1.w != c.stem1.w);
  for (Eigen::Index i = 0; i < a.head_cls.b.size(); ++i) {
    CHECK(a.head_cls.b[i] == doctest::Approx(-std::log(99.0)).epsilon(1e-12));
  }
  CHECK(a.head_reg.b.cwiseAbs().maxCoeff() == 0.0);
  // Distinct layers receive distinct streams.
  CHECK(a.stem1.w(0, 0) != a.stem2.w(0, 0));
}

TEST_CASE("detector_backward matches finite differences through the trunk") {
  ToyDetectorConfig cfg;
  cfg.channels = 4;
  cfg.image_size = 32;
  const ToyDetector det = init_detector(11, cfg);

  FeatureGrid image(1, 32, 32, 1.0);
  Rng rng(104);
  for (Eigen::Index i = 0; i < image.data.size(); ++i) image.data[i] = rng.uniform(0, 1);

  const DetectorActivations acts = detector_forward(det, image);

  // Random linear loss over all predictions plus the trunk features (the
  // RoIAlign path enters as feature_grads).
  std::vector<PredictionGrads> pgrads(2);
  std::vector<Array> fgrads(2);
  for (int l = 0; l < 2; ++l) {
    pgrads[l].cls = Array(acts.preds[l].cls.data.size());
    pgrads[l].reg = Array(acts.preds[l].reg.data.size());
    pgrads[l].aux = Array(acts.preds[l].aux.data.size());
    fgrads[l] = Array(acts.features[l].data.size());
    for (Eigen::Index i = 0; i < pgrads[l].cls.size(); ++i) pgrads[l].cls[i] = rng.uniform(-1, 1);
    for (Eigen::Index i = 0; i < pgrads[l].reg.size(); ++i) pgrads[l].reg[i] = rng.uniform(-1, 1);
    for (Eigen::Index i = 0; i < pgrads[l].aux.size(); ++i) pgrads[l].aux[i] = rng.uniform(-1, 1);
    for (Eigen::Index i = 0; i < fgrads[l].size(); ++i) fgrads[l][i] = rng.uniform(-1, 1);
  }

  const auto loss_of = [&](const ToyDetector& d) {
    const DetectorActivations a = detector_forward(d, image);
    Scalar v = 0;
    for (int l = 0; l < 2; ++l) {
      v += (a.preds[l].cls.data * pgrads[l].cls).sum();
      v += (a.preds[l].reg.data * pgrads[l].reg).sum();
      v += (a.preds[l].aux.data * pgrads[l].aux).sum();
      v += (a.features[l].data * fgrads[l]).sum();
    }
    return v;
  };

  const DetectorGrads grads = detector_backward(det, acts, pgrads, fgrads);

  const Scalar h = 1e-5;
  const auto probe = [&](auto get_param, const auto& analytic) {
    Rng dr(105);
    for (int probe_i = 0; probe_i < 5; ++probe_i) {
      ToyDetector dp = det, dm = det;
      auto& mp = get_param(dp);
      auto& mm = get_param(dm);
      const Eigen::Index idx = dr.uniform_int(static_cast<int>(mp.size()));
      mp.data()[idx] += h;
      mm.data()[idx] -= h;
      check_grad(analytic.data()[idx], (loss_of(dp) - loss_of(dm)) / (2 * h),
                 1e-5, 1e-7);
    }
  };

  probe([](ToyDetector& d) -> Matrix& { return d.stem1.w; }, grads.stem1_w);
  probe([](ToyDetector& d) -> Vector& { return d.stem1.b; }, grads.stem1_b);
  probe([](ToyDetector& d) -> Matrix& { return d.stem2.w; }, grads.stem2_w);
  probe([](ToyDetector& d) -> Matrix& { return d.level_convs[0].w; }, grads.level_w[0]);
  probe([](ToyDetector& d) -> Matrix& { return d.level_convs[1].w; }, grads.level_w[1]);
  probe([](ToyDetector& d) -> Matrix& { return d.head_cls.w; }, grads.cls_w);
  probe([](ToyDetector& d) -> Matrix& { return d.head_reg.w; }, grads.reg_w);
  probe([](ToyDetector& d) -> Vector& { return d.head_aux.b; }, grads.aux_b);
}

TEST_CASE("sgd_update applies classical momentum") {
  Matrix w = Matrix::Constant(1, 1, 1.0);
  Matrix v = Matrix::Constant(1, 1, 0.5);
  Matrix g = Matrix::Constant(1, 1, 2.0);
  sgd_update(w, v, g, 0.1, 0.9);
  // v = 0.9*0.5 + 2 = 2.45; w = 1 - 0.1*2.45 = 0.755
  CHECK(v(0, 0) == doctest::Approx(2.45).epsilon(1e-15));
  CHECK(w(0, 0) == doctest::Approx(0.755).epsilon(1e-15));
}

// ---------------------------------------------------------------------------
// training loop

namespace {

TrainConfig tiny_config(int steps, const std::string& mode) {
  TrainConfig cfg;
  cfg.steps = steps;
  cfg.batch = 2;
  cfg.mode = mode;
  cfg.seed = 5;
  cfg.channels = 8;
  cfg.hidden = 16;
  cfg.pool = 3;
  cfg.samples_per_bin = 1;
  return cfg;
}

bool same_weights(const Checkpoint& a, const Checkpoint& b) {
  return (a.detector.stem1.w == b.detector.stem1.w) &&
         (a.detector.head_reg.w == b.detector.head_reg.w) &&
         (a.detector.level_convs[1].w == b.detector.level_convs[1].w) &&
         (a.encoder.w1 == b.encoder.w1) && (a.encoder.w_pi == b.encoder.w_pi);
}

}  // namespace

TEST_CASE("training is reproducible step for step") {
  const TrainConfig cfg = tiny_config(8, "iqdet");
  const TrainResult a = train(cfg);
  const TrainResult b = train(cfg);
  REQUIRE(a.logs.size() == 8);
  for (std::size_t i = 0; i < a.logs.size(); ++i) {
    CHECK(step_log_json(a.logs[i]).dump() == step_log_json(b.logs[i]).dump());
    CHECK(a.logs[i].report.total == b.logs[i].report.total);
    CHECK(std::isfinite(a.logs[i].report.total));
    CHECK(a.logs[i].positives > 0);
  }
  CHECK(same_weights(a.checkpoint, b.checkpoint));
}

TEST_CASE("thread fan-out does not change the arithmetic") {
  TrainConfig cfg = tiny_config(6, "iqdet");
  cfg.batch = 4;
  const TrainResult serial = train(cfg);
  cfg.threads = 3;
  const TrainResult threaded = train(cfg);
  for (std::size_t i = 0; i < serial.logs.size(); ++i) {
    CHECK(serial.logs[i].report.total == threaded.logs[i].report.total);
  }
  CHECK(same_weights(serial.checkpoint, threaded.checkpoint));
}

TEST_CASE("center mode fixes every GMM and skips the quality term") {
  const TrainConfig cfg = tiny_config(4, "center");
  const QualityGMM want = fixed_gmm(cfg.center_sigma);
  int observed = 0;
  const TrainResult r = train(cfg, [&](const StepObservation& obs) {
    ++observed;
    CHECK(obs.report.l_iq == 0.0);
    for (const auto& per_image : obs.gmms) {
      for (const auto& per_inst : per_image) {
        for (const QualityGMM& g : per_inst) {
          CHECK(g.mu == want.mu);
          CHECK(g.sigma == want.sigma);
          CHECK(g.pi == want.pi);
        }
      }
    }
  });
  CHECK(observed == 4);
  for (const StepLog& log : r.logs) CHECK(log.report.l_iq == 0.0);
  // The encoder is untouched in center mode.
  EncoderConfig ec = r.checkpoint.encoder_config;
  CHECK(r.checkpoint.encoder.w1 == init_weights(Rng::derive_seed(cfg.seed, 0xe0e0), ec).w1);
}

TEST_CASE("iqdet mode varies the GMMs across instances") {
  const TrainConfig cfg = tiny_config(2, "iqdet");
  bool any_nonbaseline = false;
  train(cfg, [&](const StepObservation& obs) {
    for (const auto& per_image : obs.gmms) {
      for (const auto& per_inst : per_image) {
        for (const QualityGMM& g : per_inst) {
          CHECK_NOTHROW(validate(g));
          if ((g.mu.array() != 0).any()) any_nonbaseline = true;
        }
      }
    }
  });
  CHECK(any_nonbaseline);
}

TEST_CASE("config validation rejects bad settings") {
  TrainConfig cfg;
  cfg.steps = -1;
  CHECK_THROWS_AS(validate(cfg), std::domain_error);
  cfg = TrainConfig{};
  cfg.mode = "other";
  CHECK_THROWS_AS(validate(cfg), std::domain_error);
  cfg = TrainConfig{};
  cfg.batch = 0;
  CHECK_THROWS_AS(validate(cfg), std::domain_error);
  cfg = TrainConfig{};
  cfg.lr = 0;
  CHECK_THROWS_AS(validate(cfg), std::domain_error);
  cfg = TrainConfig{};
  cfg.image_size = 16;
  CHECK_THROWS_AS(validate(cfg), std::domain_error);
}

TEST_CASE("divergence aborts with a numerical_error") {
  TrainConfig cfg = tiny_config(40, "iqdet");
  cfg.lr = 1e12;
  CHECK_THROWS_AS(train(cfg), numerical_error);
}

TEST_CASE("checkpoints round-trip through the container") {
  const std::string base =
      (std::filesystem::temp_directory_path() / "iqdet_test_ckpt").string();
  const TrainConfig cfg = tiny_config(3, "iqdet");
  const TrainResult r = train(cfg);
  save_checkpoint(base, r.checkpoint);

  const Checkpoint loaded = load_checkpoint(base);
  CHECK(loaded.config.steps == cfg.steps);
  CHECK(loaded.config.mode == cfg.mode);
  CHECK(loaded.config.hidden == cfg.hidden);
  CHECK(loaded.encoder_config.pool == cfg.pool);

  // Weights survive the f32 container exactly when re-saved.
  const std::string base2 = base + "_resave";
  save_checkpoint(base2, loaded);
  std::ifstream f1(base + ".iqt", std::ios::binary);
  std::ifstream f2(base2 + ".iqt", std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)),
                       std::istreambuf_iterator<char>());
  const std::string b2((std::istreambuf_iterator<char>(f2)),
                       std::istreambuf_iterator<char>());
  CHECK(b1 == b2);

  for (const std::string ext : {".iqt", ".json"}) {
    std::filesystem::remove(base + ext);
    std::filesystem::remove(base2 + ext);
  }
}

TEST_CASE("seed streams are deterministic and non-colliding") {
  CHECK(scene_stream_seed(1, 0) == scene_stream_seed(1, 0));
  CHECK(scene_stream_seed(1, 0) != scene_stream_seed(1, 1));
  CHECK(scene_stream_seed(1, 0) != scene_stream_seed(2, 0));
  CHECK(scene_stream_seed(1, 0) != assign_stream_seed(1, 0));
}

// ---------------------------------------------------------------------------
// evaluation

namespace {

// Independent O(n^2) suppression oracle.
std::vector<int> nms_oracle(const std::vector<Box>& boxes,
                            const std::vector<Scalar>& scores, Scalar thresh,
                            int topk) {
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return scores[a] > scores[b];
  });
  std::vector<int> keep;
  std::vector<bool> dead(boxes.size(), false);
  for (int idx : order) {
    if (dead[idx]) continue;
    keep.push_back(idx);
    if (static_cast<int>(keep.size()) == topk) break;
    for (int other : order) {
      if (!dead[other] && other != idx && iou(boxes[idx], boxes[other]) > thresh) {
        dead[other] = true;
      }
    }
  }
  return keep;
}

}  // namespace

TEST_CASE("nms keeps the highest scorer among overlapping boxes") {
  const std::vector<Box> boxes = {{0, 0, 10, 10}, {1, 1, 11, 11}, {40, 40, 50, 50}};
  const std::vector<Scalar> scores = {0.6, 0.9, 0.5};
  const std::vector<int> keep = nms(boxes, scores, 0.6, 100);
  REQUIRE(keep.size() == 2);
  CHECK(keep[0] == 1);
  CHECK(keep[1] == 2);

  // Exactly at the threshold nothing is suppressed (strict >).
  const std::vector<Box> pair = {{0, 0, 10, 10}, {0, 0, 10, 10}};
  CHECK(nms(pair, {0.5, 0.4}, 1.0, 10).size() == 2);

  // Equal scores keep the lower index first.
  const std::vector<int> tie = nms(pair, {0.5, 0.5}, 0.6, 10);
  REQUIRE(tie.size() == 1);
  CHECK(tie[0] == 0);

  CHECK_THROWS_AS(nms(pair, {0.5}, 0.6, 10), std::domain_error);
}

TEST_CASE("nms matches the quadratic oracle") {
  Rng rng(106);
  for (int t = 0; t < 100; ++t) {
    const int n = 1 + rng.uniform_int(200);
    std::vector<Box> boxes;
    std::vector<Scalar> scores;
    for (int i = 0; i < n; ++i) {
      boxes.push_back(testutil::random_box(rng, 64.0, 2.0));
      scores.push_back(rng.uniform());
    }
    const int topk = 1 + rng.uniform_int(100);
    CHECK(nms(boxes, scores, 0.5, topk) == nms_oracle(boxes, scores, 0.5, topk));
  }
}

TEST_CASE("average precision is 1 for perfect ranked detections") {
  std::vector<std::vector<GtInstance>> gts(2);
  gts[0] = {{Box{5, 5, 20, 20}, 0}, {Box{30, 30, 45, 50}, 0}};
  gts[1] = {{Box{10, 10, 26, 24}, 0}};
  std::vector<ScoredDetection> dets;
  for (int s = 0; s < 2; ++s) {
    for (const GtInstance& gt : gts[s]) {
      dets.push_back({s, {gt.box, 0, 0.9}});
    }
  }
  CHECK(average_precision(dets, gts, 0, 0.5) == doctest::Approx(1.0).epsilon(1e-12));

  // A confident false positive ahead of the hits lowers the AP.
  dets.push_back({0, {Box{50, 50, 60, 60}, 0, 0.99}});
  CHECK(average_precision(dets, gts, 0, 0.5) < 1.0);
  CHECK(average_precision({}, gts, 0, 0.5) == 0.0);
}

TEST_CASE("training improves the loss and evaluation runs end to end") {
  TrainConfig cfg = tiny_config(525, "iqdet");
  cfg.batch = 4;
  const TrainResult r = train(cfg);
  REQUIRE(r.logs.size() == 525);

  // Smoothed early-vs-late comparison over 50-step windows.
  const auto window_mean = [&](int lo) {
    Scalar acc = 0;
    for (int i = lo; i < lo + 50; ++i) acc += r.logs[i].report.total;
    return acc / 50;
  };
  const Scalar early = window_mean(0);
  const Scalar late = window_mean(475);
  CHECK(late < early);

  const EvalResult ev = evaluate(r.checkpoint, 40, 777);
  CHECK(ev.scenes == 40);
  CHECK(ev.gt_count > 40);
  CHECK(ev.ap50 >= 0.0);
  CHECK(ev.ap50 <= 1.0);
  CHECK(ev.ap75 <= ev.ap50 + 1e-12);
  CHECK(ev.mean_pos_iou > 0.0);
  CHECK(ev.mean_pos_iou <= 1.0);

  // Evaluation is pure.
  const EvalResult ev2 = evaluate(r.checkpoint, 40, 777);
  CHECK(ev.ap50 == ev2.ap50);
  CHECK(ev.mean_pos_iou == ev2.mean_pos_iou);

  // The learned quality distributions are instance-specific: the dominant
  // component's mean varies across a batch of fresh instances instead of
  // collapsing to one shared value.
  std::vector<Scalar> mu;
  for (std::uint64_t s = 9000; s < 9030; ++s) {
    const SyntheticScene scene = generate_scene(s);
    const DetectorActivations acts = detector_forward(r.checkpoint.detector, scene.image);
    for (const GtInstance& inst : scene.instances) {
      const PooledFeature pf =
          roialign(acts.features[0], inst.box, r.checkpoint.encoder_config.pool,
                   cfg.samples_per_bin);
      const QualityGMM g = encode(r.checkpoint.encoder, pf, r.checkpoint.encoder_config);
      int k = 0;
      for (int i = 1; i < g.components(); ++i)
        if (g.pi[i] > g.pi[k]) k = i;
      mu.push_back(g.mu(k, 0));
      mu.push_back(g.mu(k, 1));
    }
  }
  Scalar mean = 0;
  for (Scalar v : mu) mean += v;
  mean /= static_cast<Scalar>(mu.size());
  Scalar var = 0;
  for (Scalar v : mu) var += (v - mean) * (v - mean);
  const Scalar spread = std::sqrt(var / static_cast<Scalar>(mu.size()));
  CHECK(spread > 0.05);
}
