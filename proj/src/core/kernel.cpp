#include "core/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace mppm {

double kernel_density(std::span<const double> z, const KernelDensity& kd) {
  require(static_cast<int>(z.size()) == kd.anchors.cols, "kernel_density: dim mismatch");
  double inv = 1.0 / (2.0 * kd.sigma_ker * kd.sigma_ker);
  double s = 0.0;
  for (int a = 0; a < kd.anchors.rows; ++a)
    s += std::exp(-squared_distance(z, kd.anchors.row_span(a)) * inv);
  return s;
}

namespace {

const double kLogFloor = std::log(kScoreFloor);

// Streaming log-sum-exp accumulator with a vector numerator riding along.
struct LseMean {
  double max_lw = -std::numeric_limits<double>::infinity();
  double denom = 0.0;  // sum of exp(lw - max_lw)
  Vec num;             // sum of exp(lw - max_lw) * value

  explicit LseMean(size_t dim) : num(dim, 0.0) {}

  void add(double lw, std::span<const double> value) {
    if (lw > max_lw) {
      double scale = std::isinf(max_lw) ? 0.0 : std::exp(max_lw - lw);
      denom *= scale;
      for (double& v : num) v *= scale;
      max_lw = lw;
    }
    double w = std::exp(lw - max_lw);
    denom += w;
    for (size_t i = 0; i < num.size(); ++i) num[i] += w * value[i];
  }

  double log_total() const {
    if (denom <= 0.0) return -std::numeric_limits<double>::infinity();
    return max_lw + std::log(denom);
  }

  Vec mean() const {
    Vec m = num;
    for (double& v : m) v /= denom;
    return m;
  }
};

}  // namespace

Vec g_bar_fn(std::span<const double> x, const Mat& anchors, const BatchFn& decoder, int out_dim,
             double sigma_ker, double sigma_d, int n_samples, Rng& rng) {
  require(anchors.rows > 0, "g_bar: empty anchor set");
  require(n_samples >= 1, "g_bar: n_samples must be >= 1");
  double inv = 1.0 / (2.0 * sigma_d * sigma_d);
  LseMean acc(static_cast<size_t>(out_dim));
  // Decode whole anchor blocks per call; draw and accumulate in the same
  // anchor-major order as a per-anchor loop would, so results are identical.
  int block = std::max(1, 16384 / n_samples);
  for (int a0 = 0; a0 < anchors.rows; a0 += block) {
    int a1 = std::min(anchors.rows, a0 + block);
    Mat z((a1 - a0) * n_samples, anchors.cols);
    for (int a = a0; a < a1; ++a) {
      const double* za = anchors.row(a);
      for (int i = 0; i < n_samples; ++i) {
        double* zi = z.row((a - a0) * n_samples + i);
        for (int c = 0; c < anchors.cols; ++c) zi[c] = za[c] + sigma_ker * rng.normal();
      }
    }
    Mat gx = decoder(z);
    require(gx.rows == z.rows && gx.cols == out_dim, "g_bar: decoder output shape");
    for (int i = 0; i < z.rows; ++i) {
      double lw = -squared_distance(x, gx.row_span(i)) * inv;
      acc.add(lw, gx.row_span(i));
    }
  }
  if (acc.log_total() < kLogFloor)
    throw ScoreUnderflow("kernel mass underflow: query too far from the decoded manifold");
  return acc.mean();
}

namespace {

Mat select_rows(const Mat& src, const std::vector<int>& idx) {
  Mat out(static_cast<int>(idx.size()), src.cols);
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy_n(src.row(idx[i]), src.cols, out.row(static_cast<int>(i)));
  return out;
}

}  // namespace

Vec g_bar(std::span<const double> x, const ScoreField& field, Rng& rng) {
  const ManifoldModel& m = *field.model;
  const KernelDensity& kd = *field.kernel;
  require(static_cast<int>(x.size()) == m.ambient_dim(), "g_bar: ambient dim mismatch");
  const Mat* anchors = &kd.anchors;
  Mat selected;
  if (kd.anchors.rows > kd.subsample_threshold) {
    Vec zq = m.encode(x);
    selected = select_rows(kd.anchors, nearest_rows(kd.anchors, zq, kd.subsample_k));
    anchors = &selected;
  }
  BatchFn dec = [&m](const Mat& z) { return m.decoder.forward_eval_batch(z); };
  return g_bar_fn(x, *anchors, dec, m.ambient_dim(), kd.sigma_ker, m.sigma_d, kd.n_samples, rng);
}

Vec score_d(std::span<const double> x, const DistanceField& field, double sigma_d) {
  double d = field.value(x);
  Vec g = field.gradient(x);
  double scale = -d / (sigma_d * sigma_d);
  for (double& v : g) v *= scale;
  return g;
}

Vec score_d(std::span<const double> x, const ManifoldModel& model) {
  require(model.space == Space::ambient, "score_d needs an ambient model");
  LearnedDistanceField f(model);
  return score_d(x, f, model.sigma_d);
}

Vec score_non_u(std::span<const double> x, const ScoreField& field, Rng& rng) {
  Vec gb = g_bar(x, field, rng);
  double sigma_d = field.model->sigma_d;
  double inv = 1.0 / (2.0 * sigma_d * sigma_d);
  Vec s(x.size());
  for (size_t i = 0; i < x.size(); ++i) s[i] = -inv * (x[i] - gb[i]);
  return s;
}

Vec z_bar(std::span<const double> z, const Mat& anchors, double sigma_ker) {
  require(anchors.rows > 0, "z_bar: empty anchor set");
  require(static_cast<int>(z.size()) == anchors.cols, "z_bar: dim mismatch");
  double inv = 1.0 / (2.0 * sigma_ker * sigma_ker);
  LseMean acc(z.size());
  for (int a = 0; a < anchors.rows; ++a) {
    double lw = -squared_distance(z, anchors.row_span(a)) * inv;
    acc.add(lw, anchors.row_span(a));
  }
  if (acc.log_total() < kLogFloor)
    throw ScoreUnderflow("kernel mass underflow: query too far from the anchor set");
  return acc.mean();
}

Vec z_bar(std::span<const double> z, const KernelDensity& kd) {
  if (kd.anchors.rows > kd.subsample_threshold) {
    Mat sel = select_rows(kd.anchors, nearest_rows(kd.anchors, z, kd.subsample_k));
    return z_bar(z, sel, kd.sigma_ker);
  }
  return z_bar(z, kd.anchors, kd.sigma_ker);
}

std::vector<int> nearest_rows(const Mat& rows, std::span<const double> query, int k) {
  require(rows.rows > 0, "nearest_rows: empty set");
  k = std::min(k, rows.rows);
  std::vector<std::pair<double, int>> d(static_cast<size_t>(rows.rows));
  for (int i = 0; i < rows.rows; ++i)
    d[static_cast<size_t>(i)] = {squared_distance(query, rows.row_span(i)), i};
  std::partial_sort(d.begin(), d.begin() + k, d.end());
  std::vector<int> idx(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) idx[static_cast<size_t>(i)] = d[static_cast<size_t>(i)].second;
  return idx;
}

double median_pairwise_distance(const Mat& rows) {
  require(rows.rows >= 2, "median distance needs at least two rows");
  const Mat* src = &rows;
  Mat thin;
  if (rows.rows > 2000) {
    Rng rng = Rng::keyed(0x6d656469616eULL, {static_cast<uint64_t>(rows.rows)});
    std::vector<int> idx(static_cast<size_t>(rows.rows));
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx);
    idx.resize(2000);
    std::sort(idx.begin(), idx.end());
    thin = select_rows(rows, idx);
    src = &thin;
  }
  std::vector<double> d;
  d.reserve(static_cast<size_t>(src->rows) * (src->rows - 1) / 2);
  for (int i = 0; i < src->rows; ++i)
    for (int j = i + 1; j < src->rows; ++j)
      d.push_back(squared_distance(src->row_span(i), src->row_span(j)));
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  return std::sqrt(*mid);
}

void save_anchors(const std::filesystem::path& path, const Mat& anchors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write anchors: " + path.string());
  out << "mppm-anchors 1\nrows " << anchors.rows << " cols " << anchors.cols
      << "\nend-header\n";
  out.write(reinterpret_cast<const char*>(anchors.data.data()),
            static_cast<std::streamsize>(anchors.data.size() * sizeof(double)));
  if (!out) throw IoError("short write to " + path.string());
}

Mat load_anchors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read anchors: " + path.string());
  std::string magic, tag_rows, tag_cols, tag_end;
  int rows = 0, cols = 0, version = 0;
  in >> magic >> version >> tag_rows >> rows >> tag_cols >> cols >> tag_end;
  if (magic != "mppm-anchors" || version != 1 || tag_rows != "rows" || tag_cols != "cols" ||
      tag_end != "end-header" || rows < 0 || cols < 0)
    throw IoError("bad anchors header in " + path.string());
  in.get();  // newline after the header
  Mat out(rows, cols);
  in.read(reinterpret_cast<char*>(out.data.data()),
          static_cast<std::streamsize>(out.data.size() * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(out.data.size() * sizeof(double)))
    throw IoError("truncated anchors in " + path.string());
  return out;
}

}  // namespace mppm
