#pragma once

#include <array>

#include "core/kernel.hpp"
#include "core/model.hpp"

namespace mppm {

struct LossWeights {
  std::array<double, 6> lambda{1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
  // The printed latent consistency terms are unsquared norms; this switches
  // them to squared residuals.
  bool square_consistency_terms = false;
  // Treat grad D / ||grad D|| as a constant during backprop (skips the
  // second-order path through the distance net).
  bool detach_shift_direction = false;

  void validate() const;
};

struct TrainBatch {
  Mat clean;                 // members of the clean set
  Mat corrupted;             // clean[source] + Gaussian noise
  std::vector<int> pairing;  // corrupted row -> nearest clean row in the dataset
  Mat paired_clean;          // the x* rows matching `pairing`
};

// Adds i.i.d. N(0, sigma_d^2) per coordinate; never clipped.
Vec corrupt(std::span<const double> x, double sigma_d, Rng& rng);

// Exact scan; ties break to the lowest index.
std::pair<int, Vec> nearest_clean(std::span<const double> x, const Mat& dataset);
// Same scan vectorized over many queries (BLAS inner products).
std::vector<int> nearest_clean_bulk(const Mat& queries, const Mat& dataset);

TrainBatch make_batch(const Mat& dataset, std::span<const int> batch_indices,
                      std::span<const int> corruption_sources, double sigma_d, uint64_t noise_seed,
                      uint64_t epoch, uint64_t batch_id);

struct ModelGrads {
  NetGrads encoder, decoder, distance;

  static ModelGrads make(const ManifoldModel& m) {
    return {m.encoder.make_grads(), m.decoder.make_grads(), m.distance_net.make_grads()};
  }
  void zero() {
    encoder.zero();
    decoder.zero();
    distance.zero();
  }
  bool finite() const { return encoder.finite() && decoder.finite() && distance.finite(); }
};

struct LossBreakdown {
  std::array<double, 6> terms{};
  double total = 0.0;
  int degenerate_skips = 0;
};

// Regression targets captured at a reference parameter point. The lambda1
// target is detached during training; freezing it makes finite-difference
// sweeps see the same constant the analytic gradient saw.
struct FrozenTargets {
  Vec t;
};

FrozenTargets capture_ambient_targets(const ManifoldModel& model, const TrainBatch& batch);
FrozenTargets capture_latent_targets(const ManifoldModel& model, const TrainBatch& batch);

// Composite objective over the batch; accumulates parameter gradients for all
// three networks when grads is non-null. Train mode draws fresh dropout masks
// from dropout_seed (keyed per sample); eval mode is deterministic.
LossBreakdown ambient_loss(const ManifoldModel& model, const TrainBatch& batch,
                           const LossWeights& weights, Mode mode, uint64_t dropout_seed,
                           ModelGrads* grads, const FrozenTargets* frozen = nullptr);

LossBreakdown latent_loss(const ManifoldModel& model, const TrainBatch& batch,
                          const LossWeights& weights, Mode mode, uint64_t dropout_seed,
                          ModelGrads* grads, const FrozenTargets* frozen = nullptr);

}  // namespace mppm
