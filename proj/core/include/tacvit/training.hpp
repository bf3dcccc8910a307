#pragma once

#include <array>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tacvit/models.hpp"
#include "tacvit/simulator.hpp"

namespace tacvit {

struct TrainConfig {
  int64_t batch_size = 16;
  int64_t epochs = 30;
  double lr = 1e-4;
  double weight_decay = 1e-5;
  bool decoupled_wd = true;
  uint64_t seed = 0;
  double split_fraction = 0.8;
  bool lora_mode = false;  // apply the gradual-unfreeze schedule each epoch
  int64_t unfreeze_epoch = 5;
  int64_t unfreeze_blocks = 4;
  std::string pixel_norm = "center";  // none | center ([0,1] -> [-1,1])

  void validate() const {
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (split_fraction <= 0 || split_fraction >= 1)
      throw ConfigError("train: split_fraction must be in (0,1)");
  }
};

// Fixed-range mapping of the six targets (z,Rx,Ry,Fx,Fy,Fz) to [-1,1]; range
// constants, not data statistics, so every model shares one normalizer.
struct LabelNormalizer {
  static constexpr int kTargets = 6;
  static std::array<double, kTargets> targets(const ContactLabel& l) {
    return {l.z, l.rx, l.ry, l.fx, l.fy, l.fz};
  }
  static std::array<double, kTargets> normalize(const ContactLabel& l);
  static std::array<double, kTargets> denormalize(const std::array<double, kTargets>& n);
  static const char* target_name(int i);
};

struct DataRef {
  const DatasetManifest* manifest;
  int index;
};

// Seeded per-sensor shuffle + split; each sensor contributes `fraction` of its
// samples to the train side.
std::pair<std::vector<DataRef>, std::vector<DataRef>> split_dataset(
    const std::vector<DatasetManifest>& manifests, double fraction, uint64_t seed);

struct Sample {
  Tensor<float> image;
  std::array<float, LabelNormalizer::kTargets> target;  // normalized
  ContactLabel label;
  int sensor_id = 0;
};

std::vector<Sample> load_samples(const std::vector<DataRef>& refs, int64_t image_size,
                                 int64_t channels, const std::string& pixel_norm);

// Bilinear resize + channel replication used by the sample loader.
Tensor<float> prepare_image(const Tensor<float>& gray, int64_t image_size, int64_t channels,
                            const std::string& pixel_norm);

// Either model family behind one forward surface.
struct Model {
  std::string family;  // "tacvit" | "cnn"
  VitConfig vit;
  CnnConfig cnn;
  ModelParams<float> params;
  bool use_lora = false;

  Tensor<float> forward(Tape<float>& tape, const std::vector<Tensor<float>>& images) const {
    if (family == "tacvit") return vit_forward(tape, images, params, vit, use_lora);
    if (family == "cnn") return cnn_forward(tape, images, params, cnn);
    throw ConfigError("unknown model family: " + family);
  }
  int64_t image_size() const { return family == "tacvit" ? vit.image_size : cnn.image_size; }
  int64_t channels() const { return family == "tacvit" ? vit.channels : cnn.channels; }
  KvConfig arch_config() const;
};

Model make_vit_model(const VitConfig& cfg, uint64_t seed, bool with_lora);
Model make_cnn_model(const CnnConfig& cfg, uint64_t seed);

void save_model(const Model& model, const std::string& path);
Model load_model(const std::string& path);

struct EpochStats {
  int64_t epoch = 0;
  double train_mse = 0;
  double val_mse = 0;
  std::array<double, LabelNormalizer::kTargets> val_mae{};  // physical units
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  int64_t best_epoch = -1;
  std::string to_csv() const;
};

TrainHistory train(Model& model, const std::vector<Sample>& train_set,
                   const std::vector<Sample>& val_set, const TrainConfig& cfg);

struct EvalResult {
  std::array<double, LabelNormalizer::kTargets> mae{};  // physical units
  // prediction/truth pairs in physical units, for scatter output
  std::vector<std::array<double, 2 * LabelNormalizer::kTargets>> pairs;
};

EvalResult evaluate_mae(const Model& model, const std::vector<Sample>& samples);

}  // namespace tacvit
