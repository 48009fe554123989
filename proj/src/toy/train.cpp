#include "iqdet/toy/train.hpp"

#include <cmath>
#include <exception>
#include <sstream>
#include <thread>

#include "iqdet/rng.hpp"
#include "iqdet/tensor_io.hpp"
#include "iqdet/toy/scene.hpp"

namespace iqdet {
namespace {

constexpr std::uint64_t kDetectorSalt = 0xd0d0;
constexpr std::uint64_t kEncoderSalt = 0xe0e0;
constexpr std::uint64_t kSceneSpace = 0x100000000ull;
constexpr std::uint64_t kAssignSpace = 0x200000000ull;

EncoderWeights zero_like(const EncoderWeights& w) {
  EncoderWeights z;
  z.w1 = Matrix::Zero(w.w1.rows(), w.w1.cols());
  z.b1 = Vector::Zero(w.b1.size());
  z.w2 = Matrix::Zero(w.w2.rows(), w.w2.cols());
  z.b2 = Vector::Zero(w.b2.size());
  z.w_mu = Matrix::Zero(w.w_mu.rows(), w.w_mu.cols());
  z.b_mu = Vector::Zero(w.b_mu.size());
  z.w_sigma = Matrix::Zero(w.w_sigma.rows(), w.w_sigma.cols());
  z.b_sigma = Vector::Zero(w.b_sigma.size());
  z.w_pi = Matrix::Zero(w.w_pi.rows(), w.w_pi.cols());
  z.b_pi = Vector::Zero(w.b_pi.size());
  return z;
}

void accumulate(EncoderWeights& into, const EncoderWeights& g) {
  into.w1 += g.w1;
  into.b1 += g.b1;
  into.w2 += g.w2;
  into.b2 += g.b2;
  into.w_mu += g.w_mu;
  into.b_mu += g.b_mu;
  into.w_sigma += g.w_sigma;
  into.b_sigma += g.b_sigma;
  into.w_pi += g.w_pi;
  into.b_pi += g.b_pi;
}

void scale(EncoderWeights& w, Scalar s) {
  w.w1 *= s;
  w.b1 *= s;
  w.w2 *= s;
  w.b2 *= s;
  w.w_mu *= s;
  w.b_mu *= s;
  w.w_sigma *= s;
  w.b_sigma *= s;
  w.w_pi *= s;
  w.b_pi *= s;
}

struct ImageResult {
  DetectorGrads det_grads;
  EncoderWeights enc_grads;
  bool has_enc_grads = false;
  LossReport report;
  Scalar iou_sum = 0;
  int positives = 0;
  std::vector<std::vector<QualityGMM>> gmms;  // [instance][level]
};

ImageResult process_image(const ToyDetector& det, const EncoderWeights& enc,
                          const EncoderConfig& ecfg, const TrainConfig& cfg,
                          std::uint64_t scene_seed, std::uint64_t assign_seed, int step,
                          int image_index) {
  const SyntheticScene scene = generate_scene(scene_seed, cfg.image_size);
  DetectorActivations acts = detector_forward(det, scene.image);
  const bool with_iq = cfg.mode == "iqdet";
  const int levels = det.config.levels();
  const int n = static_cast<int>(scene.instances.size());

  ImageResult out;
  out.gmms.assign(n, std::vector<QualityGMM>(levels));
  std::vector<std::vector<PooledFeature>> pooled;
  if (with_iq) pooled.assign(n, std::vector<PooledFeature>(levels));
  for (int i = 0; i < n; ++i)
    for (int l = 0; l < levels; ++l) {
      if (with_iq) {
        pooled[i][l] = roialign(acts.features[l], scene.instances[i].box, cfg.pool, cfg.samples_per_bin);
        out.gmms[i][l] = encode(enc, pooled[i][l], ecfg);
      } else {
        out.gmms[i][l] = fixed_gmm(cfg.center_sigma);
      }
    }

  std::vector<GridGeom> geoms;
  for (const auto& f : acts.features) geoms.push_back(f.geom());
  Rng arng(assign_seed);
  const AssignmentResult assignment = assign_image(
      scene.instances, out.gmms, geoms, {cfg.draws_per_level, cfg.k_select}, arng);
  const TotalLossResult loss =
      total_loss(assignment, acts.preds, scene.instances, cfg.lambda_iq, with_iq);

  if (!std::isfinite(loss.report.total)) {
    std::ostringstream msg;
    msg << "non-finite loss at step " << step << " image " << image_index
        << ": l_cls=" << loss.report.l_cls << " l_reg=" << loss.report.l_reg
        << " l_aux=" << loss.report.l_aux << " l_iq=" << loss.report.l_iq;
    throw numerical_error(msg.str());
  }

  std::vector<Array> feat_grads(levels);
  out.enc_grads = zero_like(enc);
  if (with_iq) {
    for (int l = 0; l < levels; ++l) feat_grads[l] = Array::Zero(acts.features[l].data.size());
    for (int i = 0; i < n; ++i)
      for (int l = 0; l < levels; ++l) {
        const EncoderGrad eg = encode_grad(enc, pooled[i][l], loss.gmm_grads[i][l], ecfg);
        accumulate(out.enc_grads, eg.weights);
        out.has_enc_grads = true;
        feat_grads[l] += roialign_backward(acts.features[l], scene.instances[i].box, cfg.pool,
                                           cfg.samples_per_bin, eg.input);
      }
  }
  out.det_grads = detector_backward(det, acts, loss.grids, feat_grads);
  out.report = loss.report;
  out.iou_sum = loss.mean_positive_iou * loss.positive_count;
  out.positives = loss.positive_count;
  return out;
}

bool params_finite(const ToyDetector& det, const EncoderWeights& enc) {
  const auto conv_ok = [](const ConvLayer& c) {
    return c.w.allFinite() && c.b.allFinite();
  };
  bool ok = conv_ok(det.stem1) && conv_ok(det.stem2) && conv_ok(det.head_cls) &&
            conv_ok(det.head_reg) && conv_ok(det.head_aux);
  for (const ConvLayer& c : det.level_convs) ok = ok && conv_ok(c);
  return ok && enc.w1.allFinite() && enc.b1.allFinite() && enc.w2.allFinite() &&
         enc.b2.allFinite() && enc.w_mu.allFinite() && enc.b_mu.allFinite() &&
         enc.w_sigma.allFinite() && enc.b_sigma.allFinite() && enc.w_pi.allFinite() &&
         enc.b_pi.allFinite();
}

}  // namespace

void validate(const TrainConfig& c) {
  if (c.steps < 0) throw std::domain_error("steps must be >= 0");
  if (c.batch < 1) throw std::domain_error("batch must be positive");
  if (!(c.lr > 0) || !std::isfinite(c.lr)) throw std::domain_error("lr must be positive");
  if (!(c.momentum >= 0) || c.momentum >= 1) throw std::domain_error("momentum must be in [0, 1)");
  if (!(c.lambda_iq >= 0)) throw std::domain_error("lambda_iq must be >= 0");
  if (c.k_components < 1) throw std::domain_error("k_components must be positive");
  if (c.k_select < 1) throw std::domain_error("k_select must be positive");
  if (c.draws_per_level < 1) throw std::domain_error("draws_per_level must be positive");
  if (c.pool < 1 || c.samples_per_bin < 1) throw std::domain_error("pool sizes must be positive");
  if (c.hidden < 1) throw std::domain_error("hidden must be positive");
  if (c.mode != "iqdet" && c.mode != "center") throw std::domain_error("mode must be iqdet or center");
  if (!(c.center_sigma >= kSigmaFloor)) throw std::domain_error("center_sigma below floor");
  if (c.num_classes < 1 || c.channels < 1) throw std::domain_error("model widths must be positive");
  if (c.image_size < 48) throw std::domain_error("image_size must be >= 48");
  if (c.threads < 1) throw std::domain_error("threads must be positive");
}

std::uint64_t scene_stream_seed(std::uint64_t seed, std::uint64_t index) {
  return Rng::derive_seed(seed, kSceneSpace + index);
}

std::uint64_t assign_stream_seed(std::uint64_t seed, std::uint64_t index) {
  return Rng::derive_seed(seed, kAssignSpace + index);
}

Json step_log_json(const StepLog& log) {
  return Json{{"step", log.step},         {"l_cls", log.report.l_cls},
              {"l_reg", log.report.l_reg}, {"l_aux", log.report.l_aux},
              {"l_iq", log.report.l_iq},   {"lambda_iq", log.report.lambda_iq},
              {"total", log.report.total}, {"mean_pos_iou", log.mean_pos_iou},
              {"positives", log.positives}};
}

TrainResult train(const TrainConfig& config, const StepObserver& observer) {
  validate(config);
  ToyDetectorConfig dcfg;
  dcfg.num_classes = config.num_classes;
  dcfg.channels = config.channels;
  dcfg.image_size = config.image_size;
  ToyDetector det = init_detector(Rng::derive_seed(config.seed, kDetectorSalt), dcfg);

  EncoderConfig ecfg;
  ecfg.channels = config.channels;
  ecfg.pool = config.pool;
  ecfg.hidden = config.hidden;
  ecfg.k_components = config.k_components;
  ecfg.learn_mu = config.learn_mu;
  ecfg.learn_sigma = config.learn_sigma;
  ecfg.learn_pi = config.learn_pi;
  EncoderWeights enc = init_weights(Rng::derive_seed(config.seed, kEncoderSalt), ecfg);

  DetectorGrads det_vel = DetectorGrads::zero(det);
  EncoderWeights enc_vel = zero_like(enc);

  TrainResult result;
  for (int step = 0; step < config.steps; ++step) {
    std::vector<ImageResult> images(config.batch);
    auto worker = [&](int b) {
      const std::uint64_t index = static_cast<std::uint64_t>(step) * config.batch + b;
      images[b] = process_image(det, enc, ecfg, config, scene_stream_seed(config.seed, index),
                                assign_stream_seed(config.seed, index), step, b);
    };
    if (config.threads <= 1 || config.batch == 1) {
      for (int b = 0; b < config.batch; ++b) worker(b);
    } else {
      std::vector<std::thread> pool;
      std::vector<std::exception_ptr> errors(config.batch);
      for (int t = 0; t < std::min(config.threads, config.batch); ++t)
        pool.emplace_back([&, t] {
          for (int b = t; b < config.batch; b += std::min(config.threads, config.batch)) {
            try {
              worker(b);
            } catch (...) {
              errors[b] = std::current_exception();
            }
          }
        });
      for (auto& th : pool) th.join();
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    }

    // Merge in image order; every reduction below is fixed-order.
    DetectorGrads det_grads = DetectorGrads::zero(det);
    EncoderWeights enc_grads = zero_like(enc);
    StepLog log;
    log.step = step;
    log.report.lambda_iq = config.lambda_iq;
    Scalar iou_sum = 0;
    std::vector<std::vector<std::vector<QualityGMM>>> step_gmms;
    for (int b = 0; b < config.batch; ++b) {
      const ImageResult& r = images[b];
      det_grads.accumulate(r.det_grads);
      if (r.has_enc_grads) accumulate(enc_grads, r.enc_grads);
      log.report.l_cls += r.report.l_cls;
      log.report.l_reg += r.report.l_reg;
      log.report.l_aux += r.report.l_aux;
      log.report.l_iq += r.report.l_iq;
      log.report.total += r.report.total;
      iou_sum += r.iou_sum;
      log.positives += r.positives;
      step_gmms.push_back(r.gmms);
    }
    const Scalar inv_batch = 1.0 / config.batch;
    log.report.l_cls *= inv_batch;
    log.report.l_reg *= inv_batch;
    log.report.l_aux *= inv_batch;
    log.report.l_iq *= inv_batch;
    log.report.total *= inv_batch;
    log.mean_pos_iou = log.positives > 0 ? iou_sum / log.positives : 0.0;
    det_grads.scale(inv_batch);
    scale(enc_grads, inv_batch);

    if (observer) observer(StepObservation{step, step_gmms, log.report});

    sgd_update(det.stem1.w, det_vel.stem1_w, det_grads.stem1_w, config.lr, config.momentum);
    sgd_update(det.stem1.b, det_vel.stem1_b, det_grads.stem1_b, config.lr, config.momentum);
    sgd_update(det.stem2.w, det_vel.stem2_w, det_grads.stem2_w, config.lr, config.momentum);
    sgd_update(det.stem2.b, det_vel.stem2_b, det_grads.stem2_b, config.lr, config.momentum);
    for (std::size_t l = 0; l < det.level_convs.size(); ++l) {
      sgd_update(det.level_convs[l].w, det_vel.level_w[l], det_grads.level_w[l], config.lr,
                 config.momentum);
      sgd_update(det.level_convs[l].b, det_vel.level_b[l], det_grads.level_b[l], config.lr,
                 config.momentum);
    }
    sgd_update(det.head_cls.w, det_vel.cls_w, det_grads.cls_w, config.lr, config.momentum);
    sgd_update(det.head_cls.b, det_vel.cls_b, det_grads.cls_b, config.lr, config.momentum);
    sgd_update(det.head_reg.w, det_vel.reg_w, det_grads.reg_w, config.lr, config.momentum);
    sgd_update(det.head_reg.b, det_vel.reg_b, det_grads.reg_b, config.lr, config.momentum);
    sgd_update(det.head_aux.w, det_vel.aux_w, det_grads.aux_w, config.lr, config.momentum);
    sgd_update(det.head_aux.b, det_vel.aux_b, det_grads.aux_b, config.lr, config.momentum);
    if (config.mode == "iqdet") {
      sgd_update(enc.w1, enc_vel.w1, enc_grads.w1, config.lr, config.momentum);
      sgd_update(enc.b1, enc_vel.b1, enc_grads.b1, config.lr, config.momentum);
      sgd_update(enc.w2, enc_vel.w2, enc_grads.w2, config.lr, config.momentum);
      sgd_update(enc.b2, enc_vel.b2, enc_grads.b2, config.lr, config.momentum);
      sgd_update(enc.w_mu, enc_vel.w_mu, enc_grads.w_mu, config.lr, config.momentum);
      sgd_update(enc.b_mu, enc_vel.b_mu, enc_grads.b_mu, config.lr, config.momentum);
      sgd_update(enc.w_sigma, enc_vel.w_sigma, enc_grads.w_sigma, config.lr, config.momentum);
      sgd_update(enc.b_sigma, enc_vel.b_sigma, enc_grads.b_sigma, config.lr, config.momentum);
      sgd_update(enc.w_pi, enc_vel.w_pi, enc_grads.w_pi, config.lr, config.momentum);
      sgd_update(enc.b_pi, enc_vel.b_pi, enc_grads.b_pi, config.lr, config.momentum);
    }
    if (!params_finite(det, enc)) {
      std::ostringstream msg;
      msg << "non-finite parameters after the update at step " << step;
      throw numerical_error(msg.str());
    }
    result.logs.push_back(log);
  }
  result.checkpoint = Checkpoint{std::move(det), std::move(enc), ecfg, config};
  return result;
}

namespace {

Json train_config_json(const TrainConfig& c) {
  return Json{{"steps", c.steps},
              {"batch", c.batch},
              {"lr", c.lr},
              {"momentum", c.momentum},
              {"seed", c.seed},
              {"lambda_iq", c.lambda_iq},
              {"k_components", c.k_components},
              {"k_select", c.k_select},
              {"draws_per_level", c.draws_per_level},
              {"pool", c.pool},
              {"samples_per_bin", c.samples_per_bin},
              {"hidden", c.hidden},
              {"mode", c.mode},
              {"learn_mu", c.learn_mu},
              {"learn_sigma", c.learn_sigma},
              {"learn_pi", c.learn_pi},
              {"center_sigma", c.center_sigma},
              {"num_classes", c.num_classes},
              {"channels", c.channels},
              {"image_size", c.image_size}};
}

TrainConfig train_config_from_json(const Json& j) {
  TrainConfig c;
  c.steps = j.at("steps").get<int>();
  c.batch = j.at("batch").get<int>();
  c.lr = j.at("lr").get<Scalar>();
  c.momentum = j.at("momentum").get<Scalar>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.lambda_iq = j.at("lambda_iq").get<Scalar>();
  c.k_components = j.at("k_components").get<int>();
  c.k_select = j.at("k_select").get<int>();
  c.draws_per_level = j.at("draws_per_level").get<int>();
  c.pool = j.at("pool").get<int>();
  c.samples_per_bin = j.at("samples_per_bin").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.mode = j.at("mode").get<std::string>();
  c.learn_mu = j.at("learn_mu").get<bool>();
  c.learn_sigma = j.at("learn_sigma").get<bool>();
  c.learn_pi = j.at("learn_pi").get<bool>();
  c.center_sigma = j.at("center_sigma").get<Scalar>();
  c.num_classes = j.at("num_classes").get<int>();
  c.channels = j.at("channels").get<int>();
  c.image_size = j.at("image_size").get<int>();
  return c;
}

void push_conv(TensorContainer& t, const std::string& prefix, const ConvLayer& layer) {
  t.push_back(matrix_tensor(prefix + ".w", layer.w));
  t.push_back(vector_tensor(prefix + ".b", layer.b));
}

void pull_conv(const TensorContainer& t, std::size_t& i, const std::string& prefix,
               ConvLayer& layer) {
  if (i + 1 >= t.size() || t[i].name != prefix + ".w" || t[i + 1].name != prefix + ".b")
    throw std::runtime_error("checkpoint tensor order mismatch at " + prefix);
  layer.w = tensor_to_matrix(t[i++]);
  layer.b = tensor_to_vector(t[i++]);
}

}  // namespace

void save_checkpoint(const std::string& base, const Checkpoint& ckpt) {
  TensorContainer tensors;
  push_conv(tensors, "det.stem1", ckpt.detector.stem1);
  push_conv(tensors, "det.stem2", ckpt.detector.stem2);
  for (std::size_t l = 0; l < ckpt.detector.level_convs.size(); ++l)
    push_conv(tensors, "det.level" + std::to_string(l), ckpt.detector.level_convs[l]);
  push_conv(tensors, "det.head_cls", ckpt.detector.head_cls);
  push_conv(tensors, "det.head_reg", ckpt.detector.head_reg);
  push_conv(tensors, "det.head_aux", ckpt.detector.head_aux);
  const auto& e = ckpt.encoder;
  tensors.push_back(matrix_tensor("qde.w1", e.w1));
  tensors.push_back(vector_tensor("qde.b1", e.b1));
  tensors.push_back(matrix_tensor("qde.w2", e.w2));
  tensors.push_back(vector_tensor("qde.b2", e.b2));
  tensors.push_back(matrix_tensor("qde.w_mu", e.w_mu));
  tensors.push_back(vector_tensor("qde.b_mu", e.b_mu));
  tensors.push_back(matrix_tensor("qde.w_sigma", e.w_sigma));
  tensors.push_back(vector_tensor("qde.b_sigma", e.b_sigma));
  tensors.push_back(matrix_tensor("qde.w_pi", e.w_pi));
  tensors.push_back(vector_tensor("qde.b_pi", e.b_pi));
  write_tensors(base + ".iqt", tensors);

  Json manifest{{"format", "iqdet-checkpoint-v1"},
                {"config", train_config_json(ckpt.config)},
                {"levels", static_cast<int>(ckpt.detector.level_convs.size())}};
  save_json(base + ".json", manifest);
}

Checkpoint load_checkpoint(const std::string& base) {
  const Json manifest = load_json(base + ".json");
  if (manifest.value("format", "") != "iqdet-checkpoint-v1")
    throw std::runtime_error("unrecognized checkpoint format in " + base + ".json");
  Checkpoint ckpt;
  ckpt.config = train_config_from_json(manifest.at("config"));
  validate(ckpt.config);

  ToyDetectorConfig dcfg;
  dcfg.num_classes = ckpt.config.num_classes;
  dcfg.channels = ckpt.config.channels;
  dcfg.image_size = ckpt.config.image_size;
  ckpt.detector = init_detector(0, dcfg);

  EncoderConfig ecfg;
  ecfg.channels = ckpt.config.channels;
  ecfg.pool = ckpt.config.pool;
  ecfg.hidden = ckpt.config.hidden;
  ecfg.k_components = ckpt.config.k_components;
  ecfg.learn_mu = ckpt.config.learn_mu;
  ecfg.learn_sigma = ckpt.config.learn_sigma;
  ecfg.learn_pi = ckpt.config.learn_pi;
  ckpt.encoder_config = ecfg;

  const TensorContainer tensors = read_tensors(base + ".iqt");
  std::size_t i = 0;
  pull_conv(tensors, i, "det.stem1", ckpt.detector.stem1);
  pull_conv(tensors, i, "det.stem2", ckpt.detector.stem2);
  for (std::size_t l = 0; l < ckpt.detector.level_convs.size(); ++l)
    pull_conv(tensors, i, "det.level" + std::to_string(l), ckpt.detector.level_convs[l]);
  pull_conv(tensors, i, "det.head_cls", ckpt.detector.head_cls);
  pull_conv(tensors, i, "det.head_reg", ckpt.detector.head_reg);
  pull_conv(tensors, i, "det.head_aux", ckpt.detector.head_aux);
  auto next_matrix = [&](const std::string& name) {
    if (i >= tensors.size() || tensors[i].name != name)
      throw std::runtime_error("checkpoint tensor order mismatch at " + name);
    return tensor_to_matrix(tensors[i++]);
  };
  auto next_vector = [&](const std::string& name) {
    if (i >= tensors.size() || tensors[i].name != name)
      throw std::runtime_error("checkpoint tensor order mismatch at " + name);
    return tensor_to_vector(tensors[i++]);
  };
  ckpt.encoder.w1 = next_matrix("qde.w1");
  ckpt.encoder.b1 = next_vector("qde.b1");
  ckpt.encoder.w2 = next_matrix("qde.w2");
  ckpt.encoder.b2 = next_vector("qde.b2");
  ckpt.encoder.w_mu = next_matrix("qde.w_mu");
  ckpt.encoder.b_mu = next_vector("qde.b_mu");
  ckpt.encoder.w_sigma = next_matrix("qde.w_sigma");
  ckpt.encoder.b_sigma = next_vector("qde.b_sigma");
  ckpt.encoder.w_pi = next_matrix("qde.w_pi");
  ckpt.encoder.b_pi = next_vector("qde.b_pi");
  if (i != tensors.size()) throw std::runtime_error("unexpected extra tensors in checkpoint");
  return ckpt;
}

}  // namespace iqdet
