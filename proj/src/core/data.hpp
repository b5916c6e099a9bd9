#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "core/common.hpp"
#include "core/rng.hpp"

namespace mppm {

struct CircleDatasetSpec {
  int count = 550;
  double theta0 = 1.5707963267948966;  // pi/2
  double sigma_theta = 0.5;
  double theta_min = 0.0;
  double theta_max = 3.141592653589793;
};

// Points on {x^2+y^2=1, z=0} with angles from a truncated normal (rejection).
Mat sample_circle(const CircleDatasetSpec& spec, Rng& rng);

struct ImageDataset {
  Mat images;  // one image per row, row-major pixels in [0,1]
  std::vector<int> labels;  // empty when absent
  int height = 0;
  int width = 0;

  int count() const { return images.rows; }
};

ImageDataset read_idx(const std::filesystem::path& images_path,
                      const std::optional<std::filesystem::path>& labels_path = std::nullopt);
void write_idx(const std::filesystem::path& images_path, const ImageDataset& ds,
               const std::optional<std::filesystem::path>& labels_path = std::nullopt);

enum class DegradationKind {
  gaussian_noise,
  downsample,
  missing_pixels,
  scribbles,
  oversharpen,
  elastic,
};

std::string degradation_name(DegradationKind k);
DegradationKind degradation_from_name(const std::string& name);

struct DegradationSpec {
  DegradationKind kind = DegradationKind::gaussian_noise;
  double sigma = 0.2;        // gaussian_noise
  double factor = 0.5;       // downsample scale in (0, 1]
  double coverage = 0.04;    // missing_pixels fraction
  int count = 13;            // scribbles
  double strength = 10.0;    // oversharpen s
  double blur_sigma = 1.0;   // oversharpen sigma_s
  double alpha = 34.0;       // elastic displacement scale
  double elastic_sigma = 1.5;  // elastic smoothing
  uint64_t seed = 0;

  void validate() const;
};

Vec degrade(std::span<const double> image, int h, int w, const DegradationSpec& spec);

double mse(std::span<const double> a, std::span<const double> b);
// Deviation measured in the xy-plane: max |sqrt(x^2+y^2) - 1| over rows.
double max_circle_deviation(const Mat& points);
// Full 3-D point-to-circle distance, reported as a secondary diagnostic.
double max_circle_deviation_3d(const Mat& points);
// 11x11 Gaussian window (sigma 1.5), C1=(0.01)^2, C2=(0.03)^2 on L=1 data,
// averaged over the valid (fully-covered) region.
double ssim(std::span<const double> a, std::span<const double> b, int h, int w);

void write_pgm(const std::filesystem::path& path, std::span<const double> image, int h, int w);
Vec read_pgm(const std::filesystem::path& path, int& h, int& w);
// Grid of images concatenated into one PGM, row-major, 2px separators.
void write_montage(const std::filesystem::path& path, const std::vector<Vec>& images, int h, int w,
                   int columns);

}  // namespace mppm
