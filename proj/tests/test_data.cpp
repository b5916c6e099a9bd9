#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "core/data.hpp"
#include "oracles.hpp"

using namespace mppm;

TEST_CASE("circle samples lie exactly on the manifold") {
  CircleDatasetSpec spec;
  spec.count = 2000;
  Rng rng(1);
  Mat pts = sample_circle(spec, rng);
  REQUIRE(pts.rows == 2000);
  for (int i = 0; i < pts.rows; ++i) {
    double r2 = pts.at(i, 0) * pts.at(i, 0) + pts.at(i, 1) * pts.at(i, 1);
    CHECK(std::fabs(r2 - 1.0) < 1e-12);
    CHECK(pts.at(i, 2) == 0.0);
  }
}

TEST_CASE("tiny sigma collapses to the center angle") {
  CircleDatasetSpec spec;
  spec.count = 50;
  spec.sigma_theta = 1e-9;
  Rng rng(2);
  Mat pts = sample_circle(spec, rng);
  for (int i = 0; i < pts.rows; ++i) {
    CHECK(pts.at(i, 0) == doctest::Approx(std::cos(spec.theta0)).epsilon(1e-6));
    CHECK(pts.at(i, 1) == doctest::Approx(std::sin(spec.theta0)).epsilon(1e-6));
  }
}

TEST_CASE("angle statistics and truncation bounds hold") {
  CircleDatasetSpec spec;
  spec.count = 100000;
  spec.theta0 = std::numbers::pi / 2;
  spec.sigma_theta = 0.5;
  spec.theta_min = spec.theta0 - std::numbers::pi / 2;
  spec.theta_max = spec.theta0 + std::numbers::pi / 2;
  Rng rng(3);
  Mat pts = sample_circle(spec, rng);
  double mean = 0.0;
  for (int i = 0; i < pts.rows; ++i) {
    double theta = std::atan2(pts.at(i, 1), pts.at(i, 0));
    CHECK(theta >= spec.theta_min - 1e-12);
    CHECK(theta <= spec.theta_max + 1e-12);
    mean += theta;
  }
  mean /= pts.rows;
  // Symmetric truncation keeps the mean at theta0; 3 sigma sampling band.
  CHECK(std::fabs(mean - spec.theta0) < 3.0 * spec.sigma_theta / std::sqrt(double(spec.count)));
}

TEST_CASE("degenerate bounds are rejected") {
  CircleDatasetSpec spec;
  spec.theta_min = 2.0;
  spec.theta_max = 1.0;
  Rng rng(4);
  CHECK_THROWS_AS(sample_circle(spec, rng), ConfigError);
  CircleDatasetSpec spec2;
  spec2.sigma_theta = 0.0;
  CHECK_THROWS_AS(sample_circle(spec2, rng), ConfigError);
}

TEST_CASE("idx round-trip preserves pixels and labels") {
  ImageDataset ds;
  ds.height = 4;
  ds.width = 5;
  ds.images = Mat(3, 20);
  Rng rng(5);
  for (double& v : ds.images.data) v = std::floor(rng.uniform() * 256.0) / 255.0;
  for (double& v : ds.images.data) v = std::min(v, 1.0);
  ds.labels = {7, 0, 9};
  auto dir = std::filesystem::temp_directory_path();
  auto ipath = dir / "mppm_test.idx3";
  auto lpath = dir / "mppm_test.idx1";
  write_idx(ipath, ds, lpath);
  auto rd = read_idx(ipath, lpath);
  CHECK(rd.count() == 3);
  CHECK(rd.height == 4);
  CHECK(rd.width == 5);
  CHECK(rd.labels == ds.labels);
  for (size_t i = 0; i < ds.images.data.size(); ++i)
    CHECK(rd.images.data[i] == doctest::Approx(ds.images.data[i]).epsilon(1e-12));
  std::filesystem::remove(ipath);
  std::filesystem::remove(lpath);
}

TEST_CASE("empty idx dataset round-trips") {
  ImageDataset ds;
  ds.height = 28;
  ds.width = 28;
  ds.images = Mat(0, 784);
  auto ipath = std::filesystem::temp_directory_path() / "mppm_empty.idx3";
  write_idx(ipath, ds);
  auto rd = read_idx(ipath);
  CHECK(rd.count() == 0);
  CHECK(rd.height == 28);
  std::filesystem::remove(ipath);
}

TEST_CASE("idx rejects bad magic and truncation") {
  auto path = std::filesystem::temp_directory_path() / "mppm_bad.idx3";
  {
    std::ofstream f(path, std::ios::binary);
    f.write("\x00\x00\x08\x05", 4);
  }
  CHECK_THROWS_AS(read_idx(path), IoError);
  {
    std::ofstream f(path, std::ios::binary);
    // Valid magic, count 2, dims 2x2, but only one image body.
    const unsigned char hdr[] = {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2};
    f.write(reinterpret_cast<const char*>(hdr), sizeof(hdr));
    f.write("\x01\x02\x03\x04", 4);
  }
  CHECK_THROWS_AS(read_idx(path), IoError);
  std::filesystem::remove(path);
}

namespace {

Vec test_image(int h, int w, uint64_t seed) {
  Rng rng(seed);
  Vec img(static_cast<size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double v = 0.5 + 0.4 * std::sin(0.4 * x) * std::cos(0.3 * y) + 0.05 * rng.uniform();
      img[static_cast<size_t>(y) * w + x] = std::clamp(v, 0.0, 1.0);
    }
  return img;
}

}  // namespace

TEST_CASE("identity degradations") {
  int h = 28, w = 28;
  Vec img = test_image(h, w, 6);

  DegradationSpec noise;
  noise.kind = DegradationKind::gaussian_noise;
  noise.sigma = 0.0;
  CHECK(degrade(img, h, w, noise) == img);

  DegradationSpec sharp;
  sharp.kind = DegradationKind::oversharpen;
  sharp.strength = 0.0;
  CHECK(degrade(img, h, w, sharp) == img);

  DegradationSpec down;
  down.kind = DegradationKind::downsample;
  down.factor = 1.0;
  Vec d = degrade(img, h, w, down);
  for (size_t i = 0; i < img.size(); ++i) CHECK(std::fabs(d[i] - img[i]) < 1e-10);

  DegradationSpec el;
  el.kind = DegradationKind::elastic;
  el.alpha = 0.0;
  CHECK(degrade(img, h, w, el) == img);
}

TEST_CASE("degradations are seeded and deterministic, output in range") {
  int h = 28, w = 28;
  Vec img = test_image(h, w, 7);
  for (auto kind : {DegradationKind::gaussian_noise, DegradationKind::downsample,
                    DegradationKind::missing_pixels, DegradationKind::scribbles,
                    DegradationKind::oversharpen, DegradationKind::elastic}) {
    DegradationSpec spec;
    spec.kind = kind;
    spec.sigma = 0.3;
    spec.factor = 0.5;
    spec.coverage = 0.08;
    spec.count = 13;
    spec.strength = 10.0;
    spec.alpha = 34.0;
    spec.elastic_sigma = 1.5;
    spec.seed = 99;
    Vec a = degrade(img, h, w, spec);
    Vec b = degrade(img, h, w, spec);
    CHECK(a == b);
    for (double v : a) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    spec.seed = 100;
    if (kind != DegradationKind::downsample && kind != DegradationKind::oversharpen) {
      Vec c = degrade(img, h, w, spec);
      CHECK(c != a);
    }
    CHECK(a != img);
  }
}

TEST_CASE("missing pixels hits the requested coverage on a white image") {
  int h = 28, w = 28;
  Vec white(static_cast<size_t>(h) * w, 1.0);
  DegradationSpec spec;
  spec.kind = DegradationKind::missing_pixels;
  spec.coverage = 0.08;
  spec.seed = 8;
  Vec out = degrade(white, h, w, spec);
  int black = 0;
  for (double v : out)
    if (v == 0.0) ++black;
  double frac = static_cast<double>(black) / (h * w);
  CHECK(frac == doctest::Approx(0.08).epsilon(0.25));
  CHECK(std::fabs(frac - 0.08) <= 0.02);
}

TEST_CASE("downsample blurs away detail") {
  int h = 28, w = 28;
  Vec img(static_cast<size_t>(h) * w, 0.0);
  // Checkerboard: the harshest content for a 0.35 round trip.
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) img[static_cast<size_t>(y) * w + x] = (x + y) % 2 ? 1.0 : 0.0;
  DegradationSpec spec;
  spec.kind = DegradationKind::downsample;
  spec.factor = 0.35;
  Vec out = degrade(img, h, w, spec);
  double var = 0.0, mean = 0.0;
  for (double v : out) mean += v;
  mean /= out.size();
  for (double v : out) var += (v - mean) * (v - mean);
  var /= out.size();
  CHECK(var < 0.05);
}

TEST_CASE("metrics basics") {
  int h = 28, w = 28;
  Vec img = test_image(h, w, 9);
  CHECK(mse(img, img) == 0.0);
  CHECK(ssim(img, img, h, w) == doctest::Approx(1.0).epsilon(1e-12));

  Vec scaled = img;
  for (double& v : scaled) v *= 0.5;
  double s = ssim(img, scaled, h, w);
  CHECK(s < 1.0);
  CHECK(ssim(img, scaled, h, w) == doctest::Approx(ssim(scaled, img, h, w)).epsilon(1e-12));

  Mat pts(2, 3);
  pts.at(0, 0) = 2.0;
  pts.at(1, 0) = 0.8;
  pts.at(1, 1) = 0.0;
  pts.at(1, 2) = 0.3;
  CHECK(max_circle_deviation(pts) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(max_circle_deviation_3d(pts) ==
        doctest::Approx(std::max(1.0, std::hypot(0.2, 0.3))).epsilon(1e-12));
}

TEST_CASE("ssim matches the closed form on flat images") {
  int h = 16, w = 16;
  Vec a(static_cast<size_t>(h) * w, 0.5);
  Vec b(static_cast<size_t>(h) * w, 0.25);
  // Zero variances: ssim reduces to the luminance ratio.
  double expect = (2 * 0.5 * 0.25 + 1e-4) / (0.5 * 0.5 + 0.25 * 0.25 + 1e-4);
  CHECK(ssim(a, b, h, w) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("mse of a known perturbation") {
  Vec a = {0.0, 0.5, 1.0};
  Vec b = {0.1, 0.5, 0.8};
  CHECK(mse(a, b) == doctest::Approx((0.01 + 0.04) / 3.0).epsilon(1e-12));
}

TEST_CASE("pgm round-trip and montage dimensions") {
  int h = 9, w = 7;
  Vec img = test_image(h, w, 10);
  auto path = std::filesystem::temp_directory_path() / "mppm_test.pgm";
  write_pgm(path, img, h, w);
  int rh = 0, rw = 0;
  Vec rd = read_pgm(path, rh, rw);
  CHECK(rh == h);
  CHECK(rw == w);
  for (size_t i = 0; i < img.size(); ++i) CHECK(std::fabs(rd[i] - img[i]) <= 0.5 / 255.0 + 1e-12);

  std::vector<Vec> imgs(5, img);
  auto mpath = std::filesystem::temp_directory_path() / "mppm_montage.pgm";
  write_montage(mpath, imgs, h, w, 3);
  int mh = 0, mw = 0;
  Vec mont = read_pgm(mpath, mh, mw);
  CHECK(mh == 2 * h + 2);
  CHECK(mw == 3 * w + 4);
  CHECK(mont.size() == static_cast<size_t>(mh) * mw);
  std::filesystem::remove(path);
  std::filesystem::remove(mpath);
}
