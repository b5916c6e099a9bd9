#pragma once

#include <functional>
#include <limits>

#include "core/config.hpp"
#include "core/losses.hpp"

namespace mppm {

struct EpochStats {
  int epoch = 0;  // 1-based
  std::array<double, 6> terms{};
  double total = 0.0;
  int degenerate_skips = 0;
};

struct TrainResult {
  ManifoldModel model;  // lowest-loss snapshot; the init when epochs == 0
  std::vector<EpochStats> history;
  int best_epoch = 0;
  double best_loss = std::numeric_limits<double>::infinity();
  int epochs_run = 0;
  bool early_stopped = false;
};

std::string epoch_csv_header();
std::string epoch_csv_line(const EpochStats& s);

// Called after every epoch, once the stats are final.
using EpochCallback = std::function<void(const EpochStats&)>;

// Joint loop over encoder, decoder, and distance net: per epoch the clean set
// is shuffled into batches and corrupted copies of an independently permuted
// selection ride along. Early stopping keeps the best epoch's weights. A
// non-finite loss or gradient aborts with the failing batch in the message.
TrainResult train_model(const RunConfig& cfg, const Mat& clean,
                        const EpochCallback& on_epoch = {});

// Anchors are the encoder codes of the clean set; bandwidth falls back to the
// median-distance heuristic when settings say auto. Writes the resolved
// bandwidth into the model.
KernelDensity finalize_kernel(ManifoldModel& model, const Mat& clean, const KernelSettings& ks);

}  // namespace mppm
