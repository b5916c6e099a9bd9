#pragma once

#include <map>
#include <string>

#include "core/data.hpp"
#include "core/losses.hpp"
#include "core/model.hpp"
#include "core/projection.hpp"

namespace mppm {

enum class RunMode { train_ambient, train_latent, reconstruct, generate, evaluate, grad_check };
std::string run_mode_name(RunMode m);

struct OptimizerSettings {
  AdamConfig autoencoder;  // encoder and decoder
  AdamConfig distance;     // distance net, usually a smaller learning rate
};

struct TrainSettings {
  int epochs = 500;
  int batch_size = 550;
  int patience = 100;
};

struct KernelSettings {
  double sigma_ker = 0.0;  // <= 0 selects the median-distance heuristic
  int n_samples = 256;
  int subsample_k = 512;
  int subsample_threshold = 2000;
};

struct DatasetSettings {
  std::string kind = "circle";  // circle | mnist
  CircleDatasetSpec circle;
  std::string train_images, train_labels, test_images, test_labels;
  int train_subset = 0;  // 0 keeps every row
  int test_subset = 0;
};

struct RunConfig {
  RunMode mode = RunMode::train_ambient;
  uint64_t seed = 1;
  std::string out_dir = "runs/out";
  std::string checkpoint;  // required by the inference modes
  DatasetSettings dataset;
  ArchitectureSpec arch;
  LossWeights weights;
  OptimizerSettings opt;
  TrainSettings train;
  ProjectionConfig projection;
  KernelSettings kernel;
  bool degrade_enabled = false;
  DegradationSpec degrade;
  int count = 0;  // images to process / samples to draw; resolved per mode
};

using KeyValues = std::map<std::string, std::string>;

// key = value lines; '#' starts a comment; blank lines skipped. Later keys
// override earlier ones.
KeyValues parse_config_text(const std::string& text);
KeyValues load_config_file(const std::string& path);
// "key=value" from the command line; highest precedence.
void apply_override(KeyValues& kv, const std::string& spec);

// Materializes every default (several depend on the dataset and mode) and
// validates; unknown keys are a hard error.
RunConfig resolve_config(const KeyValues& kv);

// The fully-resolved configuration as reload-able key = value text.
std::string render_config(const RunConfig& cfg);

}  // namespace mppm
