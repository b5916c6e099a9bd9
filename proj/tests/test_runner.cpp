#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "core/runner.hpp"
#include "core/train.hpp"

using namespace mppm;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / "mppm_runner_tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int line_count(const std::string& text) {
  int n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

// 8x8 blob images, values in [0,1], labels cycling 0..9.
void make_tiny_idx(const fs::path& dir, const std::string& stem, int n, uint64_t seed) {
  const int h = 12, w = 12;
  ImageDataset ds;
  ds.height = h;
  ds.width = w;
  ds.images = Mat(n, h * w);
  ds.labels.resize(static_cast<size_t>(n));
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    double cx = rng.uniform(2.0, w - 2.0);
    double cy = rng.uniform(2.0, h - 2.0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        ds.images.at(i, y * w + x) = std::exp(-d2 / 6.0);
      }
    ds.labels[static_cast<size_t>(i)] = i % 10;
  }
  write_idx(dir / (stem + "-images.idx"), ds, dir / (stem + "-labels.idx"));
}

std::string tiny_circle_base(const fs::path& out) {
  return "dataset = circle\n"
         "circle.count = 30\n"
         "arch.encoder = 3,8,4\n"
         "arch.decoder = 4,8,3\n"
         "arch.distance = 3,8,1\n"
         "epochs = 5\n"
         "batch_size = 16\n"
         "lr = 0.01\n"
         "seed = 5\n"
         "out = " + out.string() + "\n";
}

std::string tiny_image_base(const fs::path& data_dir, const fs::path& out) {
  return "dataset = mnist\n"
         "mnist.train_images = " + (data_dir / "train-images.idx").string() + "\n"
         "mnist.train_labels = " + (data_dir / "train-labels.idx").string() + "\n"
         "mnist.test_images = " + (data_dir / "test-images.idx").string() + "\n"
         "mnist.test_labels = " + (data_dir / "test-labels.idx").string() + "\n"
         "arch.encoder = 144,16,4\n"
         "arch.decoder = 4,16,144\n"
         "arch.distance = 4,8,1\n"
         "epochs = 3\n"
         "batch_size = 16\n"
         "patience = 8\n"
         "seed = 7\n"
         "out = " + out.string() + "\n";
}

RunConfig resolve(const std::string& text) { return resolve_config(parse_config_text(text)); }

}  // namespace

TEST_CASE("circle pipeline: train, reconstruct, evaluate") {
  fs::path train_out = fresh_dir("circle_train");
  run(resolve(tiny_circle_base(train_out)));

  std::string manifest = slurp(train_out / "manifest.txt");
  CHECK(manifest.find("status = complete") != std::string::npos);
  CHECK(manifest.find("build = ") != std::string::npos);
  CHECK(manifest.find("wall_clock_seconds = ") != std::string::npos);
  CHECK(manifest.find("artifact = checkpoint") != std::string::npos);
  CHECK(manifest.find("mode = train_ambient") != std::string::npos);

  std::string log = slurp(train_out / "training_log.csv");
  CHECK(line_count(log) == 6);  // header + five epochs
  CHECK(log.rfind(epoch_csv_header(), 0) == 0);

  ManifoldModel model = load_model(train_out / "checkpoint");
  CHECK(model.space == Space::ambient);
  CHECK(model.sigma_ker > 0.0);
  Mat anchors = load_anchors(train_out / "checkpoint" / "anchors.mat");
  CHECK(anchors.rows == 30);
  CHECK(anchors.cols == 4);

  fs::path rec_out = fresh_dir("circle_rec");
  std::string rec_cfg = tiny_circle_base(rec_out) +
                        "mode = reconstruct\ncount = 12\nsteps = 8\n"
                        "record_trajectory = true\ncheckpoint = " +
                        (train_out / "checkpoint").string() + "\n";
  run(resolve(rec_cfg));
  CHECK(slurp(rec_out / "manifest.txt").find("status = complete") != std::string::npos);
  std::string metrics = slurp(rec_out / "metrics.csv");
  CHECK(line_count(metrics) == 13);
  CHECK(metrics.rfind("id,mse_corrupted,mse_restored,mse_dae,steps,terminated_by", 0) == 0);
  CHECK(line_count(slurp(rec_out / "points.csv")) == 13);
  CHECK(fs::exists(rec_out / "trajectories.csv"));
  CHECK(slurp(rec_out / "summary.txt").find("mean mse restored") != std::string::npos);

  // Same config and seed must reproduce the metrics byte for byte.
  fs::path rec_out2 = fresh_dir("circle_rec2");
  std::string rec_cfg2 = tiny_circle_base(rec_out2) +
                         "mode = reconstruct\ncount = 12\nsteps = 8\n"
                         "record_trajectory = true\ncheckpoint = " +
                         (train_out / "checkpoint").string() + "\n";
  run(resolve(rec_cfg2));
  CHECK(slurp(rec_out2 / "metrics.csv") == metrics);
  CHECK(slurp(rec_out2 / "trajectories.csv") == slurp(rec_out / "trajectories.csv"));

  fs::path eval_out = fresh_dir("circle_eval");
  std::string eval_cfg = tiny_circle_base(eval_out) +
                         "mode = evaluate\ncount = 10\nsteps = 6\ncheckpoint = " +
                         (train_out / "checkpoint").string() + "\n";
  run(resolve(eval_cfg));
  std::string eval_csv = slurp(eval_out / "evaluation.csv");
  CHECK(line_count(eval_csv) == 3);
  CHECK(eval_csv.find("dae,10,") != std::string::npos);
  CHECK(eval_csv.find("mppm,10,") != std::string::npos);
}

TEST_CASE("image pipeline: train, reconstruct, generate, evaluate") {
  fs::path data_dir = fresh_dir("img_data");
  make_tiny_idx(data_dir, "train", 40, 11);
  make_tiny_idx(data_dir, "test", 12, 12);

  fs::path train_out = fresh_dir("img_train");
  run(resolve(tiny_image_base(data_dir, train_out)));
  CHECK(slurp(train_out / "manifest.txt").find("status = complete") != std::string::npos);
  ManifoldModel model = load_model(train_out / "checkpoint");
  CHECK(model.space == Space::latent);
  std::string ckpt = (train_out / "checkpoint").string();

  fs::path rec_out = fresh_dir("img_rec");
  run(resolve(tiny_image_base(data_dir, rec_out) +
              "mode = reconstruct\ncount = 6\nsteps = 3\n"
              "degrade = gaussian_noise\ndegrade.sigma = 0.5\n"
              "record_trajectory = true\ncheckpoint = " + ckpt + "\n"));
  std::string metrics = slurp(rec_out / "metrics.csv");
  CHECK(line_count(metrics) == 7);
  CHECK(metrics.rfind("id,label,", 0) == 0);
  for (const char* name : {"inputs.pgm", "degraded.pgm", "restored.pgm", "dae.pgm"})
    CHECK(fs::exists(rec_out / name));
  std::string traj = slurp(rec_out / "trajectories.csv");
  CHECK(traj.rfind("id,step,distance,c0,c1,c2,c3", 0) == 0);
  // labels came through from the idx file
  CHECK(metrics.find("0,0,") == metrics.find("0,"));

  fs::path gen_out = fresh_dir("img_gen");
  run(resolve(tiny_image_base(data_dir, gen_out) +
              "mode = generate\ncount = 4\nsteps = 5\ncheckpoint = " + ckpt + "\n"));
  CHECK(slurp(gen_out / "manifest.txt").find("status = complete") != std::string::npos);
  CHECK(fs::exists(gen_out / "samples.pgm"));  // 144 pixels is a perfect square
  std::string gen_metrics = slurp(gen_out / "gen_metrics.csv");
  CHECK(line_count(gen_metrics) == 5);
  std::string gen_traj = slurp(gen_out / "trajectories.csv");
  CHECK(line_count(gen_traj) == 1 + 4 * 6);  // header + (steps+1) rows per sample

  fs::path eval_out = fresh_dir("img_eval");
  run(resolve(tiny_image_base(data_dir, eval_out) +
              "mode = evaluate\ncount = 3\nsteps = 2\ncheckpoint = " + ckpt + "\n"));
  std::string eval_csv = slurp(eval_out / "evaluation.csv");
  CHECK(line_count(eval_csv) == 1 + 24);  // 6 kinds x 2 severities x 2 methods
  CHECK(eval_csv.find("dae,gaussian_noise,mild,3,") != std::string::npos);
  CHECK(eval_csv.find("lmppm,oversharpen,severe,3,") != std::string::npos);

  fs::path eval_custom = fresh_dir("img_eval_custom");
  run(resolve(tiny_image_base(data_dir, eval_custom) +
              "mode = evaluate\ncount = 3\nsteps = 2\n"
              "degrade = missing_pixels\ndegrade.coverage = 0.1\ncheckpoint = " + ckpt + "\n"));
  std::string custom_csv = slurp(eval_custom / "evaluation.csv");
  CHECK(line_count(custom_csv) == 3);
  CHECK(custom_csv.find("lmppm,missing_pixels,custom,3,") != std::string::npos);
}

TEST_CASE("failed runs leave a failed manifest and rethrow") {
  fs::path bad_ckpt = fresh_dir("bad_ckpt");  // exists but holds no model
  fs::path out = fresh_dir("fail_out");
  RunConfig cfg = resolve(tiny_circle_base(out) +
                          "mode = generate\ncount = 2\ncheckpoint = " + bad_ckpt.string() + "\n");
  CHECK_THROWS(run(cfg));
  std::string manifest = slurp(out / "manifest.txt");
  CHECK(manifest.find("status = failed") != std::string::npos);
  CHECK(manifest.find("error = ") != std::string::npos);
}

TEST_CASE("generation needs a latent-space checkpoint") {
  fs::path train_out = fresh_dir("circle_train_for_gen");
  run(resolve(tiny_circle_base(train_out) + "epochs = 1\n"));
  fs::path out = fresh_dir("gen_ambient");
  RunConfig cfg = resolve(tiny_circle_base(out) + "mode = generate\ncount = 2\ncheckpoint = " +
                          (train_out / "checkpoint").string() + "\n");
  CHECK_THROWS(run(cfg));
  CHECK(slurp(out / "manifest.txt").find("status = failed") != std::string::npos);
}

TEST_CASE("gradient check writes a passing report") {
  fs::path out = fresh_dir("gradcheck");
  run(resolve("mode = gradcheck\nseed = 3\nout = " + out.string() + "\n"));
  std::string report = slurp(out / "report.txt");
  CHECK(line_count(report) == 13);  // 6 + 7 term lines
  CHECK(report.find("FAIL") == std::string::npos);
  CHECK(report.find("ambient composite") != std::string::npos);
  CHECK(report.find("latent term6") != std::string::npos);
  CHECK(slurp(out / "manifest.txt").find("status = complete") != std::string::npos);
}
