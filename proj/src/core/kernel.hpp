#pragma once

#include <functional>

#include "core/model.hpp"

namespace mppm {

// Latent codes of the clean set, refreshed as training moves the encoder.
struct LatentAnchorSet {
  Mat codes;
  int64_t epoch_stamp = -1;
};

struct KernelDensity {
  Mat anchors;  // one anchor per row
  double sigma_ker = 0.1;
  int n_samples = 256;
  // Above the threshold, estimators restrict to the k anchors nearest the
  // query's latent code (exact scan).
  int subsample_k = 512;
  int subsample_threshold = 2000;
};

struct ScoreField {
  const ManifoldModel* model = nullptr;
  const KernelDensity* kernel = nullptr;
};

// Generic distance field so projection loops run on either the learned
// network or an analytic reference.
struct DistanceField {
  virtual ~DistanceField() = default;
  virtual double value(std::span<const double> p) const = 0;
  virtual Vec gradient(std::span<const double> p) const = 0;
};

struct LearnedDistanceField final : DistanceField {
  const ManifoldModel* model = nullptr;
  explicit LearnedDistanceField(const ManifoldModel& m) : model(&m) {}
  double value(std::span<const double> p) const override { return distance(*model, p); }
  Vec gradient(std::span<const double> p) const override { return distance_gradient(*model, p); }
};

// Unnormalized kernel density: sum of exp(-||z - z_a||^2 / 2 sigma^2).
double kernel_density(std::span<const double> z, const KernelDensity& kd);

// Threshold below which the summed kernel mass counts as zero.
inline constexpr double kScoreFloor = 1e-300;

using BatchFn = std::function<Mat(const Mat&)>;

// Monte Carlo estimate of the kernel-weighted decoder mean: per anchor draw
// n_samples latents from N(z_a, sigma_ker^2 I), weight each decoded point by
// exp(-||x - G(z)||^2 / 2 sigma_d^2), and average jointly over all anchors.
// Normalization constants cancel. Throws ScoreUnderflow when the total weight
// falls below the floor.
Vec g_bar_fn(std::span<const double> x, const Mat& anchors, const BatchFn& decoder, int out_dim,
             double sigma_ker, double sigma_d, int n_samples, Rng& rng);

Vec g_bar(std::span<const double> x, const ScoreField& field, Rng& rng);

// Distance-derived score: -(1/sigma_d^2) D(x) grad D(x).
Vec score_d(std::span<const double> x, const DistanceField& field, double sigma_d);
Vec score_d(std::span<const double> x, const ManifoldModel& model);

// Kernel score: -(1/2 sigma_d^2)(x - g_bar(x)); computed through g_bar.
Vec score_non_u(std::span<const double> x, const ScoreField& field, Rng& rng);

// Kernel-weighted anchor mean.
Vec z_bar(std::span<const double> z, const Mat& anchors, double sigma_ker);
Vec z_bar(std::span<const double> z, const KernelDensity& kd);

// Indices of the k rows nearest to the query (exact scan, ties by index).
std::vector<int> nearest_rows(const Mat& rows, std::span<const double> query, int k);

// Median pairwise distance over the rows; sets of more than 2000 rows are
// thinned by a fixed-seed subsample before the exact scan.
double median_pairwise_distance(const Mat& rows);

// Anchor matrix on disk: a short text header followed by little-endian
// float64 rows.
void save_anchors(const std::filesystem::path& path, const Mat& anchors);
Mat load_anchors(const std::filesystem::path& path);

}  // namespace mppm
