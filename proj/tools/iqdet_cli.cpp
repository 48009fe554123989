#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"

#include "iqdet/rng.hpp"
#include "iqdet/serialize.hpp"
#include "iqdet/tensor_io.hpp"
#include "iqdet/toy/eval.hpp"
#include "iqdet/toy/train.hpp"
#include "iqdet/viz.hpp"

namespace {

using iqdet::Json;
using iqdet::Scalar;

using ConfigMap = std::map<std::string, std::string>;

ConfigMap parse_config(const std::string& path, const std::vector<std::string>& allowed) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config: " + path);
  ConfigMap out;
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    out[key] = value;
  }
  return out;
}

template <typename T>
T parse_value(const std::string& s);

template <>
int parse_value<int>(const std::string& s) {
  std::size_t used = 0;
  const int v = std::stoi(s, &used);
  if (used != s.size()) throw std::runtime_error("not an integer: " + s);
  return v;
}

template <>
Scalar parse_value<Scalar>(const std::string& s) {
  std::size_t used = 0;
  const Scalar v = std::stod(s, &used);
  if (used != s.size()) throw std::runtime_error("not a number: " + s);
  return v;
}

template <>
std::uint64_t parse_value<std::uint64_t>(const std::string& s) {
  std::size_t used = 0;
  const std::uint64_t v = std::stoull(s, &used);
  if (used != s.size()) throw std::runtime_error("not an unsigned integer: " + s);
  return v;
}

template <>
bool parse_value<bool>(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::runtime_error("not a bool: " + s);
}

template <>
std::string parse_value<std::string>(const std::string& s) {
  return s;
}

template <typename T>
void maybe_set(const ConfigMap& cfg, const std::string& key, T& field) {
  const auto it = cfg.find(key);
  if (it != cfg.end()) field = parse_value<T>(it->second);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

int resolve_threads(int requested) {
  int threads = requested > 0 ? requested
                              : std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("IQDET_THREADS")) {
    const int cap = parse_value<int>(env);
    if (cap < 1) throw std::runtime_error("IQDET_THREADS must be positive");
    threads = std::min(threads, cap);
  }
  return threads;
}

void emit(const Json& j, const std::string& out_path) {
  if (out_path.empty())
    std::cout << j.dump(2) << "\n";
  else
    iqdet::save_json(out_path, j);
}

// ---- assign ----------------------------------------------------------

const std::vector<std::string> kAssignKeys = {
    "level_names", "level_strides", "k_select",        "draws_per_level", "k_components",
    "pool",        "samples_per_bin", "hidden",        "encoder_seed"};

struct AssignOptions {
  std::string features, annotations, gmm, config, out;
  std::uint64_t seed = 1;
};

void run_assign(const AssignOptions& opt) {
  ConfigMap cfg;
  if (!opt.config.empty()) cfg = parse_config(opt.config, kAssignKeys);

  std::vector<std::string> names = {"p0", "p1"};
  std::vector<int> strides = {8, 16};
  if (cfg.count("level_names")) names = split_list(cfg.at("level_names"));
  if (cfg.count("level_strides")) {
    strides.clear();
    for (const auto& s : split_list(cfg.at("level_strides"))) strides.push_back(parse_value<int>(s));
  }
  if (names.size() != strides.size() || names.empty())
    throw std::runtime_error("level_names and level_strides must align and be non-empty");

  iqdet::PyramidSpec pyramid;
  for (std::size_t l = 0; l < names.size(); ++l) pyramid.levels.push_back({names[l], strides[l]});
  validate(pyramid);

  iqdet::AssignConfig acfg;
  maybe_set(cfg, "k_select", acfg.k_select);
  maybe_set(cfg, "draws_per_level", acfg.draws_per_level);

  const auto tensors = iqdet::read_tensors(opt.features);
  std::vector<iqdet::FeatureGrid> grids;
  for (std::size_t l = 0; l < names.size(); ++l) {
    const iqdet::NamedTensor* found = nullptr;
    for (const auto& t : tensors)
      if (t.name == names[l]) found = &t;
    if (!found) throw std::runtime_error("feature tensor not found: " + names[l]);
    grids.push_back(iqdet::to_grid(*found, strides[l]));
  }
  for (const auto& g : grids)
    if (g.channels != grids[0].channels)
      throw std::runtime_error("feature levels disagree on channel count");

  const auto ann = iqdet::annotations_from_json(iqdet::load_json(opt.annotations));

  std::vector<std::vector<iqdet::QualityGMM>> gmms;
  if (!opt.gmm.empty()) {
    auto per_level = iqdet::gmm_levels_from_json(iqdet::load_json(opt.gmm));
    if (per_level.size() == 1 && names.size() > 1)
      per_level.assign(names.size(), per_level[0]);
    if (per_level.size() != names.size())
      throw std::runtime_error("gmm level count does not match the pyramid");
    gmms.assign(ann.instances.size(), per_level);
  } else {
    iqdet::EncoderConfig ecfg;
    ecfg.channels = grids[0].channels;
    maybe_set(cfg, "pool", ecfg.pool);
    maybe_set(cfg, "hidden", ecfg.hidden);
    maybe_set(cfg, "k_components", ecfg.k_components);
    std::uint64_t encoder_seed = 7;
    maybe_set(cfg, "encoder_seed", encoder_seed);
    int samples_per_bin = 2;
    maybe_set(cfg, "samples_per_bin", samples_per_bin);
    const auto weights = iqdet::init_weights(encoder_seed, ecfg);
    for (const auto& inst : ann.instances) {
      std::vector<iqdet::QualityGMM> per_level;
      for (const auto& g : grids)
        per_level.push_back(
            iqdet::encode(weights, iqdet::roialign(g, inst.box, ecfg.pool, samples_per_bin), ecfg));
      gmms.push_back(std::move(per_level));
    }
  }

  std::vector<iqdet::GridGeom> geoms;
  for (const auto& g : grids) geoms.push_back(g.geom());
  iqdet::Rng rng(opt.seed);
  const auto result = iqdet::assign_image(ann.instances, gmms, geoms, acfg, rng);
  emit(iqdet::assignment_to_json(result, pyramid, geoms), opt.out);
}

// ---- sample ----------------------------------------------------------

struct SampleOptions {
  std::string gmm, out;
  int count = 12;
  std::uint64_t seed = 1;
};

void run_sample(const SampleOptions& opt) {
  if (opt.count < 1) throw std::runtime_error("--count must be positive");
  const auto gmm = iqdet::gmm_from_json(iqdet::load_json(opt.gmm));
  iqdet::Rng rng(opt.seed);
  const auto samples = iqdet::sample_offsets(gmm, opt.count, rng);
  Json offsets = Json::array(), qualities = Json::array();
  for (const auto& s : samples) {
    offsets.push_back(Json::array({s.offset.dx, s.offset.dy}));
    qualities.push_back(s.quality);
  }
  emit(Json{{"count", opt.count}, {"seed", opt.seed}, {"offsets", offsets}, {"qualities", qualities}},
       opt.out);
}

// ---- viz -------------------------------------------------------------

struct VizOptions {
  std::string gmm, out;
  int resolution = 64;
  int count = 12;
  std::uint64_t seed = 1;
};

void run_viz(const VizOptions& opt) {
  const auto gmm = iqdet::gmm_from_json(iqdet::load_json(opt.gmm));
  iqdet::Rng rng(opt.seed);
  const auto samples = iqdet::sample_offsets(gmm, opt.count, rng);
  iqdet::write_bytes(opt.out + ".pgm", iqdet::render_quality_pgm(gmm, opt.resolution));
  iqdet::write_bytes(opt.out + ".ppm", iqdet::render_overlay_ppm(gmm, opt.resolution, samples));
}

// ---- train-toy / eval-toy --------------------------------------------

const std::vector<std::string> kTrainKeys = {
    "steps",        "batch",        "lr",          "momentum",       "seed",
    "lambda_iq",    "k_components", "k_select",    "draws_per_level", "pool",
    "samples_per_bin", "hidden",    "mode",        "learn_mu",       "learn_sigma",
    "learn_pi",     "center_sigma", "num_classes", "channels",       "image_size",
    "threads"};

struct TrainOptions {
  std::string config, mode, out;
  std::uint64_t seed = 0;
  int steps = -1;
  int threads = 0;
  bool seed_given = false;
};

void run_train_toy(const TrainOptions& opt) {
  iqdet::TrainConfig cfg;
  cfg.threads = 0;  // auto unless set
  if (!opt.config.empty()) {
    const auto m = parse_config(opt.config, kTrainKeys);
    maybe_set(m, "steps", cfg.steps);
    maybe_set(m, "batch", cfg.batch);
    maybe_set(m, "lr", cfg.lr);
    maybe_set(m, "momentum", cfg.momentum);
    maybe_set(m, "seed", cfg.seed);
    maybe_set(m, "lambda_iq", cfg.lambda_iq);
    maybe_set(m, "k_components", cfg.k_components);
    maybe_set(m, "k_select", cfg.k_select);
    maybe_set(m, "draws_per_level", cfg.draws_per_level);
    maybe_set(m, "pool", cfg.pool);
    maybe_set(m, "samples_per_bin", cfg.samples_per_bin);
    maybe_set(m, "hidden", cfg.hidden);
    maybe_set(m, "mode", cfg.mode);
    maybe_set(m, "learn_mu", cfg.learn_mu);
    maybe_set(m, "learn_sigma", cfg.learn_sigma);
    maybe_set(m, "learn_pi", cfg.learn_pi);
    maybe_set(m, "center_sigma", cfg.center_sigma);
    maybe_set(m, "num_classes", cfg.num_classes);
    maybe_set(m, "channels", cfg.channels);
    maybe_set(m, "image_size", cfg.image_size);
    maybe_set(m, "threads", cfg.threads);
  }
  if (opt.seed_given) cfg.seed = opt.seed;
  if (opt.steps >= 0) cfg.steps = opt.steps;
  if (!opt.mode.empty()) cfg.mode = opt.mode;
  if (opt.threads > 0) cfg.threads = opt.threads;
  cfg.threads = resolve_threads(cfg.threads);

  std::filesystem::create_directories(opt.out);
  const auto result = iqdet::train(cfg);

  std::ofstream log(opt.out + "/log.jsonl", std::ios::binary | std::ios::trunc);
  if (!log) throw std::runtime_error("cannot open log for writing");
  for (const auto& entry : result.logs) log << iqdet::step_log_json(entry).dump() << "\n";
  if (!log) throw std::runtime_error("log write failed");
  log.close();
  iqdet::save_checkpoint(opt.out + "/checkpoint", result.checkpoint);
}

struct EvalOptions {
  std::string checkpoint, out;
  int count = 200;
  std::uint64_t seed = 777;
};

void run_eval_toy(const EvalOptions& opt) {
  const auto ckpt = iqdet::load_checkpoint(opt.checkpoint);
  const auto result = iqdet::evaluate(ckpt, opt.count, opt.seed);
  emit(Json{{"ap50", result.ap50},
            {"ap75", result.ap75},
            {"mean_pos_iou", result.mean_pos_iou},
            {"scenes", result.scenes},
            {"gt_count", result.gt_count}},
       opt.out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"IQDet instance-wise quality-distribution label assignment"};
  app.require_subcommand(1);

  AssignOptions assign_opt;
  auto* assign = app.add_subcommand("assign", "Assign positives/negatives for one image");
  assign->add_option("--features", assign_opt.features, "feature tensors (.iqt)")->required();
  assign->add_option("--annotations", assign_opt.annotations, "annotation JSON")->required();
  assign->add_option("--gmm", assign_opt.gmm, "per-level GMM JSON (otherwise a seeded encoder runs)");
  assign->add_option("--config", assign_opt.config, "flat key=value config");
  assign->add_option("--seed", assign_opt.seed, "sampling seed");
  assign->add_option("--out", assign_opt.out, "output path (default stdout)");
  assign->callback([&] { run_assign(assign_opt); });

  SampleOptions sample_opt;
  auto* sample = app.add_subcommand("sample", "Draw offsets from a quality GMM");
  sample->add_option("--gmm", sample_opt.gmm, "GMM JSON")->required();
  sample->add_option("--count", sample_opt.count, "number of draws");
  sample->add_option("--seed", sample_opt.seed, "sampling seed");
  sample->add_option("--out", sample_opt.out, "output path (default stdout)");
  sample->callback([&] { run_sample(sample_opt); });

  VizOptions viz_opt;
  auto* viz = app.add_subcommand("viz", "Render the quality surface and sampled points");
  viz->add_option("--gmm", viz_opt.gmm, "GMM JSON")->required();
  viz->add_option("--resolution", viz_opt.resolution, "image side length (>= 16)");
  viz->add_option("--count", viz_opt.count, "overlay sample count");
  viz->add_option("--seed", viz_opt.seed, "sampling seed");
  viz->add_option("--out", viz_opt.out, "output basename (.pgm/.ppm appended)")->required();
  viz->callback([&] { run_viz(viz_opt); });

  TrainOptions train_opt;
  auto* train = app.add_subcommand("train-toy", "Train the toy detector");
  train->add_option("--config", train_opt.config, "flat key=value config");
  train->add_option("--seed", train_opt.seed, "training seed")
      ->each([&](const std::string&) { train_opt.seed_given = true; });
  train->add_option("--steps", train_opt.steps, "number of SGD steps");
  train->add_option("--mode", train_opt.mode, "iqdet | center")
      ->check(CLI::IsMember({"iqdet", "center"}));
  train->add_option("--threads", train_opt.threads, "batch workers (capped by IQDET_THREADS)");
  train->add_option("--out", train_opt.out, "output directory")->required();
  train->callback([&] { run_train_toy(train_opt); });

  EvalOptions eval_opt;
  auto* evalc = app.add_subcommand("eval-toy", "Evaluate a toy checkpoint on held-out scenes");
  evalc->add_option("--checkpoint", eval_opt.checkpoint, "checkpoint basename")->required();
  evalc->add_option("--count", eval_opt.count, "number of scenes");
  evalc->add_option("--seed", eval_opt.seed, "scene seed");
  evalc->add_option("--out", eval_opt.out, "output path (default stdout)");
  evalc->callback([&] { run_eval_toy(eval_opt); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const iqdet::numerical_error& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 4;
  } catch (const std::domain_error& e) {
    std::cerr << "invariant violation: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
