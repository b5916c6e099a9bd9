#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "core/config.hpp"
#include "core/data.hpp"
#include "core/train.hpp"

using namespace mppm;

namespace {

RunConfig tiny_config(const std::string& extra = "") {
  std::string text =
      "mode = train\n"
      "circle.count = 40\n"
      "arch.encoder = 3,8,4\n"
      "arch.decoder = 4,8,3\n"
      "arch.distance = 3,8,1\n"
      "epochs = 25\n"
      "batch_size = 16\n"
      "patience = 100\n"
      "lr = 0.01\n"
      "seed = 5\n";
  return resolve_config(parse_config_text(text + extra));
}

Mat tiny_data(const RunConfig& cfg) {
  Rng rng = Rng::keyed(cfg.seed, "data/circle");
  return sample_circle(cfg.dataset.circle, rng);
}

Vec all_params(const ManifoldModel& m) {
  Vec out;
  for (const MlpNetwork* net : {&m.encoder, &m.decoder, &m.distance_net})
    for (size_t i = 0; i < net->parameter_count(); ++i) out.push_back(net->param(i));
  return out;
}

}  // namespace

TEST_CASE("loss decreases over training and history is complete") {
  RunConfig cfg = tiny_config();
  Mat data = tiny_data(cfg);
  TrainResult res = train_model(cfg, data);
  REQUIRE(res.epochs_run == 25);
  REQUIRE(res.history.size() == 25);
  CHECK(res.history.front().epoch == 1);
  CHECK(res.history.back().epoch == 25);
  CHECK(res.history.back().total < res.history.front().total);
  CHECK(res.best_loss <= res.history.back().total);
  CHECK(res.best_epoch >= 1);
  CHECK_FALSE(res.early_stopped);
  for (const auto& s : res.history) {
    double sum = 0.0;
    for (double t : s.terms) sum += t;
    CHECK(s.total == doctest::Approx(sum).epsilon(1e-12));
  }
}

TEST_CASE("latent-space training also improves") {
  RunConfig cfg = tiny_config("mode = train_latent\narch.distance = 4,8,1\nepochs = 20\n");
  REQUIRE(cfg.arch.space == Space::latent);
  REQUIRE(cfg.arch.distance.sizes.front() == 4);
  Mat data = tiny_data(cfg);
  TrainResult res = train_model(cfg, data);
  CHECK(res.history.back().total < res.history.front().total);
}

TEST_CASE("same seed is bitwise deterministic, another seed is not") {
  RunConfig cfg = tiny_config("epochs = 6\n");
  Mat data = tiny_data(cfg);
  Vec a = all_params(train_model(cfg, data).model);
  Vec b = all_params(train_model(cfg, data).model);
  CHECK(a == b);

  RunConfig other = tiny_config("epochs = 6\nseed = 6\n");
  Vec c = all_params(train_model(other, tiny_data(cfg)).model);
  CHECK(a != c);
}

TEST_CASE("zero epochs returns the untouched init") {
  RunConfig cfg = tiny_config("epochs = 0\n");
  Mat data = tiny_data(cfg);
  TrainResult res = train_model(cfg, data);
  CHECK(res.epochs_run == 0);
  CHECK(res.history.empty());
  CHECK(res.best_epoch == 0);
  CHECK(all_params(res.model) == all_params(build_model(cfg.arch, cfg.seed)));
}

TEST_CASE("early stopping restores the best epoch's weights") {
  // A vanishing learning rate makes epoch totals pure noise, so the running
  // minimum stalls quickly.
  RunConfig cfg = tiny_config("epochs = 80\npatience = 3\nlr = 1e-10\n");
  Mat data = tiny_data(cfg);
  TrainResult res = train_model(cfg, data);
  REQUIRE(res.early_stopped);
  REQUIRE(res.epochs_run < 80);
  CHECK(res.epochs_run - res.best_epoch >= 3);

  // Rerunning for exactly best_epoch epochs replays the same batches, so it
  // must land on the stored best weights bit for bit.
  RunConfig replay = tiny_config("epochs = " + std::to_string(res.best_epoch) +
                                 "\npatience = 3\nlr = 1e-10\n");
  TrainResult short_run = train_model(replay, data);
  CHECK(all_params(res.model) == all_params(short_run.model));
}

TEST_CASE("non-finite data aborts with a diagnostic") {
  RunConfig cfg = tiny_config("epochs = 3\n");
  Mat data = tiny_data(cfg);
  data.at(0, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    train_model(cfg, data);
    FAIL("expected NumericsError");
  } catch (const NumericsError& e) {
    std::string msg = e.what();
    CHECK(msg.find("epoch 1") != std::string::npos);
    CHECK(msg.find("batch") != std::string::npos);
  }
}

TEST_CASE("epoch callback fires once per epoch in order") {
  RunConfig cfg = tiny_config("epochs = 4\n");
  Mat data = tiny_data(cfg);
  std::vector<int> seen;
  train_model(cfg, data, [&](const EpochStats& s) { seen.push_back(s.epoch); });
  CHECK(seen == std::vector<int>{1, 2, 3, 4});
}

TEST_CASE("csv formatting") {
  CHECK(epoch_csv_header() == "epoch,term1,term2,term3,term4,term5,term6,total,degenerate_skips");
  EpochStats s;
  s.epoch = 3;
  s.terms = {1.0, 0.5, 0.0, 0.0, 2.25, 0.0};
  s.total = 3.75;
  s.degenerate_skips = 2;
  CHECK(epoch_csv_line(s) == "3,1,0.5,0,0,2.25,0,3.75,2");
}

TEST_CASE("finalize_kernel resolves the bandwidth") {
  RunConfig cfg = tiny_config("epochs = 0\n");
  Mat data = tiny_data(cfg);
  ManifoldModel model = build_model(cfg.arch, cfg.seed);

  KernelSettings fixed;
  fixed.sigma_ker = 0.7;
  fixed.n_samples = 32;
  KernelDensity kd = finalize_kernel(model, data, fixed);
  CHECK(kd.sigma_ker == doctest::Approx(0.7));
  CHECK(model.sigma_ker == doctest::Approx(0.7));
  CHECK(kd.n_samples == 32);
  CHECK(kd.anchors.rows == data.rows);
  CHECK(kd.anchors.cols == model.latent_dim());

  KernelSettings autow;
  autow.sigma_ker = 0.0;
  KernelDensity kauto = finalize_kernel(model, data, autow);
  CHECK(kauto.sigma_ker ==
        doctest::Approx(0.5 * median_pairwise_distance(kauto.anchors)).epsilon(1e-12));
  CHECK(kauto.sigma_ker > 0.0);
}

TEST_CASE("anchor files round-trip") {
  Mat m(3, 2);
  for (int i = 0; i < 6; ++i) m.data[static_cast<size_t>(i)] = 0.125 * i - 0.3;
  auto p = std::filesystem::temp_directory_path() / "mppm_anchors_test.mat";
  save_anchors(p, m);
  Mat back = load_anchors(p);
  CHECK(back.rows == 3);
  CHECK(back.cols == 2);
  CHECK(back.data == m.data);
  std::filesystem::remove(p);
  CHECK_THROWS_AS(load_anchors(p), IoError);
}

TEST_CASE("dimension mismatch is rejected") {
  RunConfig cfg = tiny_config("epochs = 1\n");
  Mat wrong(10, 5);
  CHECK_THROWS_AS(train_model(cfg, wrong), DimensionError);
}
