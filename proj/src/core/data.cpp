#include "core/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace mppm {

Mat sample_circle(const CircleDatasetSpec& spec, Rng& rng) {
  if (spec.sigma_theta <= 0.0) throw ConfigError("sigma_theta must be positive");
  if (!(spec.theta_min < spec.theta_max)) throw ConfigError("degenerate angle bounds");
  Mat pts(spec.count, 3);
  for (int i = 0; i < spec.count; ++i) {
    double theta;
    do {
      theta = rng.normal(spec.theta0, spec.sigma_theta);
    } while (theta < spec.theta_min || theta > spec.theta_max);
    pts.at(i, 0) = std::cos(theta);
    pts.at(i, 1) = std::sin(theta);
    pts.at(i, 2) = 0.0;
  }
  return pts;
}

namespace {

uint32_t read_be32(std::istream& f, const std::filesystem::path& path) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (!f) throw IoError("truncated header: " + path.string());
  return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

void write_be32(std::ostream& f, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

constexpr uint32_t kIdxImagesMagic = 0x00000803;
constexpr uint32_t kIdxLabelsMagic = 0x00000801;

}  // namespace

ImageDataset read_idx(const std::filesystem::path& images_path,
                      const std::optional<std::filesystem::path>& labels_path) {
  std::ifstream f(images_path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + images_path.string());
  if (read_be32(f, images_path) != kIdxImagesMagic)
    throw IoError("bad image magic: " + images_path.string());
  uint32_t count = read_be32(f, images_path);
  uint32_t rows = read_be32(f, images_path);
  uint32_t cols = read_be32(f, images_path);
  ImageDataset ds;
  ds.height = static_cast<int>(rows);
  ds.width = static_cast<int>(cols);
  ds.images = Mat(static_cast<int>(count), static_cast<int>(rows * cols));
  std::vector<unsigned char> buf(rows * cols);
  for (uint32_t i = 0; i < count; ++i) {
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw IoError("truncated image data: " + images_path.string());
    double* out = ds.images.row(static_cast<int>(i));
    for (size_t j = 0; j < buf.size(); ++j) out[j] = buf[j] / 255.0;
  }
  if (labels_path) {
    std::ifstream lf(*labels_path, std::ios::binary);
    if (!lf) throw IoError("cannot open: " + labels_path->string());
    if (read_be32(lf, *labels_path) != kIdxLabelsMagic)
      throw IoError("bad label magic: " + labels_path->string());
    uint32_t lcount = read_be32(lf, *labels_path);
    if (lcount != count) throw IoError("label count does not match image count");
    std::vector<unsigned char> lbuf(lcount);
    lf.read(reinterpret_cast<char*>(lbuf.data()), static_cast<std::streamsize>(lbuf.size()));
    if (!lf) throw IoError("truncated label data: " + labels_path->string());
    ds.labels.assign(lbuf.begin(), lbuf.end());
  }
  return ds;
}

void write_idx(const std::filesystem::path& images_path, const ImageDataset& ds,
               const std::optional<std::filesystem::path>& labels_path) {
  std::ofstream f(images_path, std::ios::binary);
  if (!f) throw IoError("cannot open for write: " + images_path.string());
  write_be32(f, kIdxImagesMagic);
  write_be32(f, static_cast<uint32_t>(ds.count()));
  write_be32(f, static_cast<uint32_t>(ds.height));
  write_be32(f, static_cast<uint32_t>(ds.width));
  std::vector<unsigned char> buf(static_cast<size_t>(ds.height) * ds.width);
  for (int i = 0; i < ds.count(); ++i) {
    const double* px = ds.images.row(i);
    for (size_t j = 0; j < buf.size(); ++j) {
      double v = std::clamp(px[j], 0.0, 1.0);
      buf[j] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }
  if (!f) throw IoError("write failed: " + images_path.string());
  if (labels_path) {
    require(ds.labels.size() == static_cast<size_t>(ds.count()), "labels missing for label file");
    std::ofstream lf(*labels_path, std::ios::binary);
    if (!lf) throw IoError("cannot open for write: " + labels_path->string());
    write_be32(lf, kIdxLabelsMagic);
    write_be32(lf, static_cast<uint32_t>(ds.labels.size()));
    for (int l : ds.labels) lf.put(static_cast<char>(l));
    if (!lf) throw IoError("write failed: " + labels_path->string());
  }
}

std::string degradation_name(DegradationKind k) {
  switch (k) {
    case DegradationKind::gaussian_noise: return "gaussian_noise";
    case DegradationKind::downsample: return "downsample";
    case DegradationKind::missing_pixels: return "missing_pixels";
    case DegradationKind::scribbles: return "scribbles";
    case DegradationKind::oversharpen: return "oversharpen";
    case DegradationKind::elastic: return "elastic";
  }
  return "gaussian_noise";
}

DegradationKind degradation_from_name(const std::string& name) {
  if (name == "gaussian_noise") return DegradationKind::gaussian_noise;
  if (name == "downsample") return DegradationKind::downsample;
  if (name == "missing_pixels") return DegradationKind::missing_pixels;
  if (name == "scribbles") return DegradationKind::scribbles;
  if (name == "oversharpen") return DegradationKind::oversharpen;
  if (name == "elastic") return DegradationKind::elastic;
  throw ConfigError("unknown degradation: " + name);
}

void DegradationSpec::validate() const {
  if (kind == DegradationKind::gaussian_noise && sigma < 0.0)
    throw ConfigError("noise sigma must be non-negative");
  if (kind == DegradationKind::downsample && (factor <= 0.0 || factor > 1.0))
    throw ConfigError("downsample factor must lie in (0, 1]");
  if (kind == DegradationKind::missing_pixels && (coverage < 0.0 || coverage > 1.0))
    throw ConfigError("coverage must lie in [0, 1]");
  if (kind == DegradationKind::scribbles && count < 0) throw ConfigError("scribble count < 0");
  if (kind == DegradationKind::oversharpen && blur_sigma <= 0.0)
    throw ConfigError("oversharpen blur sigma must be positive");
  if (kind == DegradationKind::elastic && elastic_sigma <= 0.0)
    throw ConfigError("elastic sigma must be positive");
}

namespace {

double bilinear_at(std::span<const double> img, int h, int w, double y, double x) {
  // Zero padding outside the frame.
  int y0 = static_cast<int>(std::floor(y));
  int x0 = static_cast<int>(std::floor(x));
  double fy = y - y0, fx = x - x0;
  auto px = [&](int yy, int xx) -> double {
    if (yy < 0 || yy >= h || xx < 0 || xx >= w) return 0.0;
    return img[static_cast<size_t>(yy) * w + xx];
  };
  return (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)) +
         fy * ((1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1));
}

Vec resize_bilinear(std::span<const double> img, int h, int w, int nh, int nw) {
  Vec out(static_cast<size_t>(nh) * nw);
  double sy = static_cast<double>(h) / nh;
  double sx = static_cast<double>(w) / nw;
  for (int y = 0; y < nh; ++y) {
    double srcy = (y + 0.5) * sy - 0.5;
    for (int x = 0; x < nw; ++x) {
      double srcx = (x + 0.5) * sx - 0.5;
      // Clamp to the edge so border pixels do not mix with zero padding.
      double cy = std::clamp(srcy, 0.0, static_cast<double>(h - 1));
      double cx = std::clamp(srcx, 0.0, static_cast<double>(w - 1));
      out[static_cast<size_t>(y) * nw + x] = bilinear_at(img, h, w, cy, cx);
    }
  }
  return out;
}

Vec gaussian_blur(std::span<const double> img, int h, int w, double sigma) {
  int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  Vec kernel(static_cast<size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[static_cast<size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += kernel[static_cast<size_t>(i + radius)];
  }
  for (double& k : kernel) k /= sum;
  Vec tmp(static_cast<size_t>(h) * w, 0.0), out(static_cast<size_t>(h) * w, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        int xx = std::clamp(x + i, 0, w - 1);
        acc += kernel[static_cast<size_t>(i + radius)] * img[static_cast<size_t>(y) * w + xx];
      }
      tmp[static_cast<size_t>(y) * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        int yy = std::clamp(y + i, 0, h - 1);
        acc += kernel[static_cast<size_t>(i + radius)] * tmp[static_cast<size_t>(yy) * w + x];
      }
      out[static_cast<size_t>(y) * w + x] = acc;
    }
  return out;
}

void draw_disc(Vec& img, int h, int w, double cy, double cx, double radius, double value) {
  int y0 = std::max(0, static_cast<int>(std::floor(cy - radius)));
  int y1 = std::min(h - 1, static_cast<int>(std::ceil(cy + radius)));
  int x0 = std::max(0, static_cast<int>(std::floor(cx - radius)));
  int x1 = std::min(w - 1, static_cast<int>(std::ceil(cx + radius)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      double dy = y - cy, dx = x - cx;
      if (dy * dy + dx * dx <= radius * radius) img[static_cast<size_t>(y) * w + x] = value;
    }
}

}  // namespace

Vec degrade(std::span<const double> image, int h, int w, const DegradationSpec& spec) {
  spec.validate();
  require(static_cast<int>(image.size()) == h * w, "image size does not match dims");
  Rng rng = Rng::keyed(spec.seed, {0xde94adeULL, static_cast<uint64_t>(spec.kind)});
  Vec out(image.begin(), image.end());
  switch (spec.kind) {
    case DegradationKind::gaussian_noise: {
      for (double& v : out) v = std::clamp(v + spec.sigma * rng.normal(), 0.0, 1.0);
      break;
    }
    case DegradationKind::downsample: {
      int nh = std::max(1, static_cast<int>(std::lround(h * spec.factor)));
      int nw = std::max(1, static_cast<int>(std::lround(w * spec.factor)));
      if (nh == h && nw == w) break;
      Vec small = resize_bilinear(out, h, w, nh, nw);
      out = resize_bilinear(small, nh, nw, h, w);
      break;
    }
    case DegradationKind::missing_pixels: {
      const int patch = 4;
      int target = static_cast<int>(
          std::lround(spec.coverage * h * w / (patch * patch)));
      std::vector<uint8_t> occupied(static_cast<size_t>(h) * w, 0);
      int placed = 0, attempts = 0;
      while (placed < target && attempts < 200 * std::max(1, target)) {
        ++attempts;
        int y = static_cast<int>(rng.below(static_cast<uint64_t>(h - patch + 1)));
        int x = static_cast<int>(rng.below(static_cast<uint64_t>(w - patch + 1)));
        bool clash = false;
        for (int dy = 0; dy < patch && !clash; ++dy)
          for (int dx = 0; dx < patch; ++dx)
            if (occupied[static_cast<size_t>(y + dy) * w + (x + dx)]) {
              clash = true;
              break;
            }
        if (clash) continue;
        for (int dy = 0; dy < patch; ++dy)
          for (int dx = 0; dx < patch; ++dx) {
            occupied[static_cast<size_t>(y + dy) * w + (x + dx)] = 1;
            out[static_cast<size_t>(y + dy) * w + (x + dx)] = 0.0;
          }
        ++placed;
      }
      break;
    }
    case DegradationKind::scribbles: {
      for (int s = 0; s < spec.count; ++s) {
        double intensity = rng.uniform();
        double radius = rng.uniform() < 0.5 ? 0.5 : 1.0;
        double y = rng.uniform(0.0, h - 1.0);
        double x = rng.uniform(0.0, w - 1.0);
        int segments = 5 + static_cast<int>(rng.below(11));
        double heading = rng.uniform(0.0, 2.0 * 3.141592653589793);
        for (int seg = 0; seg < segments; ++seg) {
          heading += rng.uniform(-1.0, 1.0);
          double len = rng.uniform(2.0, 6.0);
          double ny = std::clamp(y + len * std::sin(heading), 0.0, h - 1.0);
          double nx = std::clamp(x + len * std::cos(heading), 0.0, w - 1.0);
          int steps = std::max(1, static_cast<int>(std::ceil(2.0 * std::hypot(ny - y, nx - x))));
          for (int t = 0; t <= steps; ++t) {
            double f = static_cast<double>(t) / steps;
            draw_disc(out, h, w, y + f * (ny - y), x + f * (nx - x), radius, intensity);
          }
          y = ny;
          x = nx;
        }
      }
      break;
    }
    case DegradationKind::oversharpen: {
      Vec blurred = gaussian_blur(out, h, w, spec.blur_sigma);
      for (size_t i = 0; i < out.size(); ++i)
        out[i] = std::clamp(out[i] + spec.strength * (out[i] - blurred[i]), 0.0, 1.0);
      break;
    }
    case DegradationKind::elastic: {
      if (spec.alpha == 0.0) break;
      size_t n = static_cast<size_t>(h) * w;
      Vec dx(n), dy(n);
      for (size_t i = 0; i < n; ++i) dx[i] = rng.uniform(-1.0, 1.0);
      for (size_t i = 0; i < n; ++i) dy[i] = rng.uniform(-1.0, 1.0);
      dx = gaussian_blur(dx, h, w, spec.elastic_sigma);
      dy = gaussian_blur(dy, h, w, spec.elastic_sigma);
      // Displacements in pixels scale as alpha/2, matching the normalized-grid
      // convention of the usual elastic transform.
      Vec warped(n);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          size_t i = static_cast<size_t>(y) * w + x;
          warped[i] = bilinear_at(image, h, w, y + 0.5 * spec.alpha * dy[i],
                                  x + 0.5 * spec.alpha * dx[i]);
        }
      out = std::move(warped);
      break;
    }
  }
  return out;
}

double mse(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size() && !a.empty(), "mse: size mismatch");
  return squared_distance(a, b) / static_cast<double>(a.size());
}

double max_circle_deviation(const Mat& points) {
  require(points.cols >= 2, "points need at least 2 coordinates");
  double m = 0.0;
  for (int i = 0; i < points.rows; ++i)
    m = std::max(m, std::fabs(std::hypot(points.at(i, 0), points.at(i, 1)) - 1.0));
  return m;
}

double max_circle_deviation_3d(const Mat& points) {
  require(points.cols >= 3, "points need 3 coordinates");
  double m = 0.0;
  for (int i = 0; i < points.rows; ++i) {
    double planar = std::hypot(points.at(i, 0), points.at(i, 1)) - 1.0;
    m = std::max(m, std::hypot(planar, points.at(i, 2)));
  }
  return m;
}

double ssim(std::span<const double> a, std::span<const double> b, int h, int w) {
  require(a.size() == b.size(), "ssim: size mismatch");
  require(static_cast<int>(a.size()) == h * w, "ssim: dims mismatch");
  constexpr int kWin = 11, kRad = 5;
  constexpr double kC1 = 0.01 * 0.01, kC2 = 0.03 * 0.03;
  require(h >= kWin && w >= kWin, "ssim: image smaller than the window");
  static const std::vector<double> kKernel = [] {
    std::vector<double> k(kWin);
    double s = 0.0;
    for (int i = 0; i < kWin; ++i) {
      double d = i - kRad;
      k[static_cast<size_t>(i)] = std::exp(-0.5 * d * d / (1.5 * 1.5));
      s += k[static_cast<size_t>(i)];
    }
    for (double& v : k) v /= s;
    return k;
  }();

  double total = 0.0;
  int valid = 0;
  for (int cy = kRad; cy < h - kRad; ++cy) {
    for (int cx = kRad; cx < w - kRad; ++cx) {
      double ma = 0, mb = 0, va = 0, vb = 0, cov = 0;
      for (int dy = -kRad; dy <= kRad; ++dy)
        for (int dx = -kRad; dx <= kRad; ++dx) {
          double wgt = kKernel[static_cast<size_t>(dy + kRad)] * kKernel[static_cast<size_t>(dx + kRad)];
          size_t idx = static_cast<size_t>(cy + dy) * w + (cx + dx);
          ma += wgt * a[idx];
          mb += wgt * b[idx];
        }
      for (int dy = -kRad; dy <= kRad; ++dy)
        for (int dx = -kRad; dx <= kRad; ++dx) {
          double wgt = kKernel[static_cast<size_t>(dy + kRad)] * kKernel[static_cast<size_t>(dx + kRad)];
          size_t idx = static_cast<size_t>(cy + dy) * w + (cx + dx);
          double da = a[idx] - ma, db = b[idx] - mb;
          va += wgt * da * da;
          vb += wgt * db * db;
          cov += wgt * da * db;
        }
      double num = (2 * ma * mb + kC1) * (2 * cov + kC2);
      double den = (ma * ma + mb * mb + kC1) * (va + vb + kC2);
      total += num / den;
      ++valid;
    }
  }
  return total / valid;
}

void write_pgm(const std::filesystem::path& path, std::span<const double> image, int h, int w) {
  require(static_cast<int>(image.size()) == h * w, "pgm: dims mismatch");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for write: " + path.string());
  f << "P5\n" << w << " " << h << "\n255\n";
  for (double v : image)
    f.put(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  if (!f) throw IoError("write failed: " + path.string());
}

Vec read_pgm(const std::filesystem::path& path, int& h, int& w) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path.string());
  std::string magic;
  f >> magic;
  if (magic != "P5") throw IoError("not a P5 pgm: " + path.string());
  int maxval = 0;
  f >> w >> h >> maxval;
  if (!f || maxval != 255) throw IoError("unsupported pgm: " + path.string());
  f.get();
  Vec img(static_cast<size_t>(h) * w);
  for (double& v : img) {
    int c = f.get();
    if (c == EOF) throw IoError("truncated pgm: " + path.string());
    v = c / 255.0;
  }
  return img;
}

void write_montage(const std::filesystem::path& path, const std::vector<Vec>& images, int h, int w,
                   int columns) {
  require(columns > 0 && !images.empty(), "montage needs images and columns");
  int rows = (static_cast<int>(images.size()) + columns - 1) / columns;
  const int sep = 2;
  int mh = rows * h + (rows - 1) * sep;
  int mw = columns * w + (columns - 1) * sep;
  Vec canvas(static_cast<size_t>(mh) * mw, 0.5);
  for (size_t k = 0; k < images.size(); ++k) {
    require(static_cast<int>(images[k].size()) == h * w, "montage image dims mismatch");
    int gy = (static_cast<int>(k) / columns) * (h + sep);
    int gx = (static_cast<int>(k) % columns) * (w + sep);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        canvas[static_cast<size_t>(gy + y) * mw + (gx + x)] = images[k][static_cast<size_t>(y) * w + x];
  }
  write_pgm(path, canvas, mh, mw);
}

}  // namespace mppm
