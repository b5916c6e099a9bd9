#pragma once

#include <string>

#include "core/kernel.hpp"

namespace mppm {

enum class Termination { max_steps, tolerance, score_underflow_fallback_exhausted };
std::string termination_name(Termination t);

struct ProjectionConfig {
  double alpha = 0.15;  // distance-gradient step weight
  double beta = 0.1;    // kernel-mean weight
  int num_steps = 60;
  double convergence_tol = 0.005;
  bool record_trajectory = false;

  void validate() const;  // requires 0 < alpha, 0 <= beta, alpha + beta < 1
};

// Iterates and the distance value at each one; filled only when the config
// asks for recording. Step count and termination are always set.
struct Trajectory {
  Mat iterates;
  Vec distances;
  int steps_taken = 0;
  Termination terminated_by = Termination::max_steps;
};

struct ProjectionResult {
  Vec point;  // final iterate; the latent loop decodes it back to ambient space
  Trajectory trajectory;
};

// Kernel-mean provider for the beta branch of the update.
struct MeanField {
  virtual ~MeanField() = default;
  virtual Vec mean(std::span<const double> p, Rng& rng) const = 0;  // may throw ScoreUnderflow
};

// Monte Carlo decoder mean in ambient space.
struct DecoderMeanField final : MeanField {
  const ScoreField* field;
  explicit DecoderMeanField(const ScoreField& f) : field(&f) {}
  Vec mean(std::span<const double> p, Rng& rng) const override { return g_bar(p, *field, rng); }
};

// Closed-form weighted anchor mean in latent space; deterministic.
struct AnchorMeanField final : MeanField {
  const KernelDensity* kd;
  explicit AnchorMeanField(const KernelDensity& k) : kd(&k) {}
  Vec mean(std::span<const double> p, Rng&) const override { return z_bar(p, *kd); }
};

struct StepStatus {
  double dist = 0.0;  // distance value at the input point
  bool geometric_applied = false;
  bool kernel_applied = false;
  bool stalled = false;  // both branches unavailable; the point came back unchanged
};

// One blended update x' = (1-beta) x + beta mean(x) - alpha D grad D / |grad D|.
// A kernel underflow drops to the pure distance step; a degenerate distance
// gradient keeps only the kernel branch; with neither branch usable the input
// comes back unchanged and `stalled` is set.
Vec projection_step(std::span<const double> x, const DistanceField& dist, const MeanField* mean,
                    const ProjectionConfig& cfg, Rng& rng, StepStatus* status = nullptr);

// Iterates projection_step until the step budget runs out, the move falls
// under convergence_tol (when positive), or a step stalls.
ProjectionResult project(std::span<const double> x0, const DistanceField& dist,
                         const MeanField* mean, const ProjectionConfig& cfg, Rng& rng);

// Ambient loop on a learned model.
Vec mppm_step(std::span<const double> x, const ScoreField& field, const ProjectionConfig& cfg,
              Rng& rng);
ProjectionResult mppm_reconstruct(std::span<const double> x0, const ScoreField& field,
                                  const ProjectionConfig& cfg, Rng& rng);

// Latent loop: encode once, iterate in code space, decode the final iterate.
// Deterministic given its inputs; the trajectory lives in latent space.
Vec lmppm_step(std::span<const double> z, const ManifoldModel& model,
               const KernelDensity& anchors, const ProjectionConfig& cfg);
ProjectionResult lmppm_reconstruct(std::span<const double> x0, const ManifoldModel& model,
                                   const KernelDensity& anchors, const ProjectionConfig& cfg);

struct GenerationResult {
  Mat samples;  // one decoded sample per row
  std::vector<Trajectory> trajectories;
};

// Draws `count` noise inputs from N(0.5, 0.25 I) and runs the latent loop on
// each; trajectories are always recorded.
GenerationResult generate(const ManifoldModel& model, const KernelDensity& anchors,
                          const ProjectionConfig& cfg, Rng& rng, int count);

}  // namespace mppm
