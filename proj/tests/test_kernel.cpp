#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "core/kernel.hpp"
#include "oracles.hpp"

using namespace mppm;

namespace {

KernelDensity single_anchor(const Vec& z0, double sigma) {
  KernelDensity kd;
  kd.anchors = Mat(1, static_cast<int>(z0.size()));
  std::copy(z0.begin(), z0.end(), kd.anchors.row(0));
  kd.sigma_ker = sigma;
  return kd;
}

MlpNetwork identity_net_1d() {
  DenseLayer l;
  l.weights = Mat(1, 1);
  l.weights.at(0, 0) = 1.0;
  l.bias = {0.0};
  l.activation = Activation::identity;
  return MlpNetwork({l});
}

// 1-D latent circle decoder used by the quadrature oracle.
Mat circle_decode(const Mat& z) {
  Mat out(z.rows, 3);
  for (int i = 0; i < z.rows; ++i) {
    out.at(i, 0) = std::cos(z.at(i, 0));
    out.at(i, 1) = std::sin(z.at(i, 0));
    out.at(i, 2) = 0.0;
  }
  return out;
}

}  // namespace

TEST_CASE("kernel density closed forms") {
  Vec z0 = {0.3, -0.2};
  auto kd = single_anchor(z0, 0.7);
  CHECK(kernel_density(z0, kd) == doctest::Approx(1.0).epsilon(1e-15));

  Vec z1 = {0.3 + 0.7, -0.2};
  CHECK(kernel_density(z1, kd) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));

  KernelDensity two;
  two.anchors = Mat(2, 2);
  two.anchors.at(0, 0) = 1.0;
  two.anchors.at(1, 0) = -1.0;
  two.sigma_ker = 0.9;
  Vec origin = {0.0, 0.0};
  double expect = 2.0 * std::exp(-1.0 / (2.0 * 0.9 * 0.9));
  CHECK(kernel_density(origin, two) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("z_bar closed forms and reimplementation oracle") {
  // All anchors identical: z_bar is that point regardless of query.
  KernelDensity same;
  same.anchors = Mat(5, 3);
  for (int i = 0; i < 5; ++i) {
    same.anchors.at(i, 0) = 0.4;
    same.anchors.at(i, 1) = -1.1;
    same.anchors.at(i, 2) = 2.0;
  }
  Vec far = {9.0, 9.0, 9.0};
  Vec zb = z_bar(far, same.anchors, 1.0);
  CHECK(zb[0] == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(zb[1] == doctest::Approx(-1.1).epsilon(1e-12));
  CHECK(zb[2] == doctest::Approx(2.0).epsilon(1e-12));

  // Symmetric anchors about the query.
  Mat sym(2, 2);
  sym.at(0, 0) = 0.8;
  sym.at(0, 1) = -0.3;
  sym.at(1, 0) = -0.8;
  sym.at(1, 1) = 0.3;
  Vec origin = {0.0, 0.0};
  Vec zb2 = z_bar(origin, sym, 0.5);
  CHECK(std::fabs(zb2[0]) < 1e-15);
  CHECK(std::fabs(zb2[1]) < 1e-15);

  // Independent naive recomputation on random anchors.
  Rng rng(21);
  Mat anchors(100, 4);
  for (double& v : anchors.data) v = rng.uniform(-1.0, 1.0);
  Vec q = {0.2, -0.4, 0.1, 0.9};
  double sig = 0.6;
  Vec naive(4, 0.0);
  double den = 0.0;
  for (int a = 0; a < anchors.rows; ++a) {
    double w = std::exp(-squared_distance(q, anchors.row_span(a)) / (2.0 * sig * sig));
    den += w;
    for (int c = 0; c < 4; ++c) naive[size_t(c)] += w * anchors.at(a, c);
  }
  for (double& v : naive) v /= den;
  Vec got = z_bar(q, anchors, sig);
  for (int c = 0; c < 4; ++c) CHECK(got[size_t(c)] == doctest::Approx(naive[size_t(c)]).epsilon(1e-12));

  // Convex hull bound.
  double maxn = 0.0;
  for (int a = 0; a < anchors.rows; ++a) maxn = std::max(maxn, norm(anchors.row_span(a)));
  CHECK(norm(got) <= maxn + 1e-12);

  // Huge bandwidth: uniform weights, centroid limit.
  Vec centroid(4, 0.0);
  for (int a = 0; a < anchors.rows; ++a)
    for (int c = 0; c < 4; ++c) centroid[size_t(c)] += anchors.at(a, c);
  for (double& v : centroid) v /= anchors.rows;
  Vec wide = z_bar(q, anchors, 1e6);
  for (int c = 0; c < 4; ++c) CHECK(std::fabs(wide[size_t(c)] - centroid[size_t(c)]) < 1e-6);
}

TEST_CASE("z_bar underflow raises") {
  Mat anchors(3, 2);
  anchors.at(0, 0) = 0.0;
  anchors.at(1, 0) = 0.1;
  anchors.at(2, 0) = -0.1;
  Vec q = {500.0, 0.0};
  CHECK_THROWS_AS(z_bar(q, anchors, 0.1), ScoreUnderflow);
}

TEST_CASE("z_bar subsampling matches manual selection") {
  Rng rng(22);
  KernelDensity kd;
  kd.anchors = Mat(2500, 3);
  for (double& v : kd.anchors.data) v = rng.uniform(-2.0, 2.0);
  kd.sigma_ker = 0.8;
  kd.subsample_k = 512;
  kd.subsample_threshold = 2000;
  Vec q = {0.3, -0.3, 0.7};
  Vec got = z_bar(q, kd);
  auto idx = nearest_rows(kd.anchors, q, 512);
  Mat sel(512, 3);
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy_n(kd.anchors.row(idx[i]), 3, sel.row(static_cast<int>(i)));
  Vec manual = z_bar(q, sel, kd.sigma_ker);
  for (int c = 0; c < 3; ++c) CHECK(got[size_t(c)] == manual[size_t(c)]);
}

TEST_CASE("nearest_rows is an exact scan with index ties") {
  Mat rows(4, 1);
  rows.at(0, 0) = 1.0;
  rows.at(1, 0) = -1.0;
  rows.at(2, 0) = 1.0;
  rows.at(3, 0) = 0.2;
  Vec q = {0.0};
  auto idx = nearest_rows(rows, q, 3);
  CHECK(idx[0] == 3);
  // Equal distances resolve to the lower index first.
  CHECK(idx[1] == 0);
  CHECK(idx[2] == 1);
}

TEST_CASE("median pairwise distance on a known set") {
  Mat rows(3, 1);
  rows.at(0, 0) = 0.0;
  rows.at(1, 0) = 1.0;
  rows.at(2, 0) = 3.0;
  // Pairwise distances {1, 3, 2}; median 2.
  CHECK(median_pairwise_distance(rows) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("g_bar degenerate kernel width returns the anchor's decode") {
  ManifoldModel m;
  m.decoder = identity_net_1d();
  m.encoder = identity_net_1d();
  m.distance_net = identity_net_1d();
  m.sigma_d = 1.0;
  KernelDensity kd = single_anchor({0.7}, 1e-12);
  kd.n_samples = 64;
  ScoreField field{&m, &kd};
  Rng rng(23);
  Vec x = {-3.0};
  Vec gb = g_bar(x, field, rng);
  CHECK(gb[0] == doctest::Approx(0.7).epsilon(1e-9));
}

TEST_CASE("g_bar symmetry zero for the 1-D identity decoder") {
  ManifoldModel m;
  m.decoder = identity_net_1d();
  m.encoder = identity_net_1d();
  m.distance_net = identity_net_1d();
  m.sigma_d = 1.0;
  KernelDensity kd = single_anchor({0.0}, 1.0);
  kd.n_samples = 100000;
  ScoreField field{&m, &kd};
  Rng rng(24);
  Vec x = {0.0};
  Vec gb = g_bar(x, field, rng);
  CHECK(std::fabs(gb[0]) < 0.02);
}

TEST_CASE("g_bar matches 1-D quadrature on the circle decoder") {
  // Two anchors on a 1-D latent circle parameterization.
  Mat anchors(2, 1);
  anchors.at(0, 0) = std::numbers::pi / 2;
  anchors.at(1, 0) = std::numbers::pi / 2 + 0.6;
  double sigma_ker = 0.3, sigma_d = 0.5;
  Vec x = {0.1, 1.3, 0.0};

  Rng rng(25);
  Vec mc = g_bar_fn(x, anchors, circle_decode, 3, sigma_ker, sigma_d, 50000, rng);

  auto weight = [&](double z) {
    double gx = std::cos(z), gy = std::sin(z);
    double d2 = (x[0] - gx) * (x[0] - gx) + (x[1] - gy) * (x[1] - gy) + x[2] * x[2];
    return std::exp(-d2 / (2.0 * sigma_d * sigma_d));
  };
  Vec num(3, 0.0);
  double den = 0.0;
  for (int a = 0; a < 2; ++a) {
    double za = anchors.at(a, 0);
    auto gauss = [&](double z) {
      double d = (z - za) / sigma_ker;
      return std::exp(-0.5 * d * d);
    };
    den += oracle::trapezoid([&](double z) { return weight(z) * gauss(z); }, za - 8 * sigma_ker,
                             za + 8 * sigma_ker, 20000);
    num[0] += oracle::trapezoid([&](double z) { return std::cos(z) * weight(z) * gauss(z); },
                                za - 8 * sigma_ker, za + 8 * sigma_ker, 20000);
    num[1] += oracle::trapezoid([&](double z) { return std::sin(z) * weight(z) * gauss(z); },
                                za - 8 * sigma_ker, za + 8 * sigma_ker, 20000);
  }
  Vec quad = {num[0] / den, num[1] / den, 0.0};
  double rel = std::sqrt(squared_distance(mc, quad)) / norm(quad);
  CHECK(rel < 0.02);
}

TEST_CASE("monte carlo std shrinks like 1/sqrt(n)") {
  Mat anchors(1, 1);
  anchors.at(0, 0) = 0.0;
  Vec x = {0.8};
  BatchFn dec = [](const Mat& z) { return z; };
  auto spread = [&](int n, uint64_t seed0) {
    double m = 0.0, m2 = 0.0;
    const int reps = 200;
    for (int r = 0; r < reps; ++r) {
      Rng rng(seed0 + static_cast<uint64_t>(r));
      double v = g_bar_fn(x, anchors, dec, 1, 1.0, 1.0, n, rng)[0];
      m += v;
      m2 += v * v;
    }
    m /= reps;
    return std::sqrt(m2 / reps - m * m);
  };
  double s1 = spread(256, 1000);
  double s2 = spread(512, 5000);
  double ratio = s1 / s2;
  CHECK(ratio > std::sqrt(2.0) * 0.8);
  CHECK(ratio < std::sqrt(2.0) * 1.2);
}

TEST_CASE("g_bar underflow raises") {
  ManifoldModel m;
  m.decoder = identity_net_1d();
  m.encoder = identity_net_1d();
  m.distance_net = identity_net_1d();
  m.sigma_d = 0.01;
  KernelDensity kd = single_anchor({0.0}, 0.01);
  kd.n_samples = 32;
  ScoreField field{&m, &kd};
  Rng rng(26);
  Vec x = {100.0};
  CHECK_THROWS_AS(g_bar(x, field, rng), ScoreUnderflow);
}

TEST_CASE("score_d closed forms") {
  oracle::CircleDistance circle;
  struct CircleField final : DistanceField {
    oracle::CircleDistance c;
    double value(std::span<const double> p) const override { return c.distance(p); }
    Vec gradient(std::span<const double> p) const override { return c.gradient(p); }
  } field;

  Vec x = {2.0, 0.0, 0.0};
  Vec s = score_d(x, field, 1.0);
  CHECK(s[0] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(s[1] == 0.0);
  CHECK(s[2] == 0.0);
  Vec moved = {x[0] + s[0], x[1] + s[1], x[2] + s[2]};
  CHECK(moved[0] == doctest::Approx(1.0).epsilon(1e-12));

  // On the manifold the score vanishes.
  Vec on = {0.0, 1.0, 0.0};
  Vec s2 = score_d(on, field, 0.7);
  CHECK(norm(s2) == 0.0);
}

TEST_CASE("score_non_u is defined through g_bar") {
  ManifoldModel m;
  m.decoder = identity_net_1d();
  m.encoder = identity_net_1d();
  m.distance_net = identity_net_1d();
  m.sigma_d = 1.0;
  KernelDensity kd = single_anchor({0.0}, 1.0);
  kd.n_samples = 512;
  ScoreField field{&m, &kd};

  Vec x = {1.0};
  Rng r1(27);
  Rng r2(27);
  Vec s = score_non_u(x, field, r1);
  Vec gb = g_bar(x, field, r2);
  // Same stream, exact identity.
  CHECK(s[0] + 0.5 * (x[0] - gb[0]) == 0.0);
}

TEST_CASE("score_non_u closed form at x=1 is -1/4") {
  ManifoldModel m;
  m.decoder = identity_net_1d();
  m.encoder = identity_net_1d();
  m.distance_net = identity_net_1d();
  m.sigma_d = 1.0;
  KernelDensity kd = single_anchor({0.0}, 1.0);
  kd.n_samples = 200000;
  ScoreField field{&m, &kd};
  Rng rng(28);
  Vec x = {1.0};
  Vec s = score_non_u(x, field, rng);
  // Gaussian product: G_bar(1) = 0.5, so the score is -(1/2)(1-0.5) = -0.25.
  CHECK(s[0] == doctest::Approx(-0.25).epsilon(0.02));
}

TEST_CASE("score_non_u fixed point at a degenerate kernel") {
  ManifoldModel m;
  m.decoder = identity_net_1d();
  m.encoder = identity_net_1d();
  m.distance_net = identity_net_1d();
  m.sigma_d = 1.0;
  KernelDensity kd = single_anchor({0.4}, 1e-14);
  kd.n_samples = 64;
  ScoreField field{&m, &kd};
  Rng rng(29);
  Vec x = {0.4};
  Vec s = score_non_u(x, field, rng);
  CHECK(std::fabs(s[0]) < 1e-12);
}

TEST_CASE("g_bar stays in the convex hull of decoded outputs") {
  ManifoldModel m;
  // Sigmoid head bounds decodes to (0,1).
  DenseLayer l;
  l.weights = Mat(2, 1);
  l.weights.at(0, 0) = 1.3;
  l.weights.at(1, 0) = -0.7;
  l.bias = {0.1, 0.4};
  l.activation = Activation::sigmoid;
  m.decoder = MlpNetwork({l});
  m.encoder = identity_net_1d();
  m.distance_net = identity_net_1d();
  m.sigma_d = 0.8;
  KernelDensity kd = single_anchor({0.2}, 0.6);
  kd.n_samples = 2048;
  ScoreField field{&m, &kd};
  Rng rng(30);
  Vec x = {0.9};
  CHECK_THROWS_AS(g_bar(x, field, rng), DimensionError);

  Vec x2 = {0.9, 0.1};
  Rng rng2(31);
  // encoder is 1-D but only used when subsampling triggers; keep below the
  // threshold so ambient dim checks bind to the decoder range test.
  ManifoldModel m2;
  m2.decoder = MlpNetwork({l});
  DenseLayer e;
  e.weights = Mat(1, 2);
  e.weights.at(0, 0) = 1.0;
  e.bias = {0.0};
  e.activation = Activation::identity;
  m2.encoder = MlpNetwork({e});
  m2.distance_net = identity_net_1d();
  m2.sigma_d = 0.8;
  ScoreField field2{&m2, &kd};
  Vec gb = g_bar(x2, field2, rng2);
  CHECK(gb[0] > 0.0);
  CHECK(gb[0] < 1.0);
  CHECK(gb[1] > 0.0);
  CHECK(gb[1] < 1.0);
}
