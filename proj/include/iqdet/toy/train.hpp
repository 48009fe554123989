#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "iqdet/losses.hpp"
#include "iqdet/qde.hpp"
#include "iqdet/serialize.hpp"
#include "iqdet/toy/detector.hpp"

namespace iqdet {

struct TrainConfig {
  int steps = 2000;
  int batch = 4;
  Scalar lr = 0.01;
  Scalar momentum = 0.9;
  std::uint64_t seed = 1;
  Scalar lambda_iq = 1.0;
  int k_components = 2;    // GMM components per level
  int k_select = 12;       // positives kept per instance
  int draws_per_level = 12;
  int pool = 7;
  int samples_per_bin = 2;
  int hidden = 64;
  std::string mode = "iqdet";  // iqdet | center
  bool learn_mu = true, learn_sigma = true, learn_pi = true;
  Scalar center_sigma = 0.5;  // the fixed center-sampling GMM width
  int num_classes = 2;
  int channels = 32;
  int image_size = 64;
  int threads = 1;  // batch-level workers; results merge in image order
};

void validate(const TrainConfig& config);

// Loss divergence (NaN/Inf) aborts training with a step diagnostic.
struct numerical_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct StepLog {
  int step = 0;
  LossReport report;  // batch-averaged
  Scalar mean_pos_iou = 0;
  int positives = 0;
};

Json step_log_json(const StepLog& log);

struct Checkpoint {
  ToyDetector detector;
  EncoderWeights encoder;
  EncoderConfig encoder_config;
  TrainConfig config;
};

// The per-step view handed to an observer before the parameter update:
// the GMMs actually used for assignment, indexed [image][instance][level].
struct StepObservation {
  int step = 0;
  const std::vector<std::vector<std::vector<QualityGMM>>>& gmms;
  const LossReport& report;
};
using StepObserver = std::function<void(const StepObservation&)>;

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<StepLog> logs;
};

TrainResult train(const TrainConfig& config, const StepObserver& observer = {});

// Deterministic seed streams shared by training and evaluation.
std::uint64_t scene_stream_seed(std::uint64_t seed, std::uint64_t index);
std::uint64_t assign_stream_seed(std::uint64_t seed, std::uint64_t index);

// base path + ".iqt" (tensors) and ".json" (config manifest).
void save_checkpoint(const std::string& base, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& base);

}  // namespace iqdet
