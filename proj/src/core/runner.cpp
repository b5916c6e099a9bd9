#include "core/runner.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>

#include "core/projection.hpp"
#include "core/train.hpp"

#ifndef MPPM_BUILD_ID
#define MPPM_BUILD_ID "unknown"
#endif

namespace mppm {

namespace {

namespace fs = std::filesystem;

std::string now_utc() {
  std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

struct Manifest {
  fs::path path;
  const RunConfig* cfg = nullptr;
  std::string started = now_utc();
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  std::vector<std::string> artifacts;

  void add(const std::string& rel) { artifacts.push_back(rel); }

  void write(const std::string& status, std::string error = "") {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write manifest: " + path.string());
    for (char& c : error)
      if (c == '\n' || c == '\r') c = ' ';
    out << "mppm-run 1\n";
    out << "status = " << status << "\n";
    out << "build = " << MPPM_BUILD_ID << "\n";
    out << "started = " << started << "\n";
    if (status != "running") {
      double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      out << "wall_clock_seconds = " << num(secs) << "\n";
    }
    if (!error.empty()) out << "error = " << error << "\n";
    for (const auto& a : artifacts) out << "artifact = " << a << "\n";
    out << "--- resolved config ---\n" << render_config(*cfg);
    out.flush();
  }
};

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  return out;
}

Mat circle_train_data(const RunConfig& cfg) {
  Rng rng = Rng::keyed(cfg.seed, "data/circle");
  return sample_circle(cfg.dataset.circle, rng);
}

ImageDataset read_images(const std::string& images, const std::string& labels, int subset) {
  std::optional<fs::path> lp;
  if (!labels.empty() && fs::exists(labels)) lp = labels;
  ImageDataset ds = read_idx(images, lp);
  if (subset > 0 && subset < ds.images.rows) {
    Mat cut(subset, ds.images.cols);
    std::copy_n(ds.images.data.begin(), cut.data.size(), cut.data.begin());
    ds.images = std::move(cut);
    if (!ds.labels.empty()) ds.labels.resize(static_cast<size_t>(subset));
  }
  return ds;
}

Mat training_data(const RunConfig& cfg) {
  if (cfg.dataset.kind == "circle") return circle_train_data(cfg);
  return read_images(cfg.dataset.train_images, cfg.dataset.train_labels,
                     cfg.dataset.train_subset)
      .images;
}

// Checkpoint plus its anchor set; config may override the stored kernel
// bandwidth and always supplies the sampling counts.
KernelDensity load_checkpoint(const RunConfig& cfg, ManifoldModel& model) {
  model = load_model(cfg.checkpoint);
  KernelDensity kd;
  kd.anchors = load_anchors(fs::path(cfg.checkpoint) / "anchors.mat");
  kd.sigma_ker = cfg.kernel.sigma_ker > 0.0 ? cfg.kernel.sigma_ker : model.sigma_ker;
  kd.n_samples = cfg.kernel.n_samples;
  kd.subsample_k = cfg.kernel.subsample_k;
  kd.subsample_threshold = cfg.kernel.subsample_threshold;
  if (kd.anchors.cols != model.latent_dim())
    throw DimensionError("anchor width does not match the checkpoint's latent dimension");
  return kd;
}

void write_trajectory_rows(std::ofstream& out, int id, const Trajectory& tr) {
  for (int s = 0; s < tr.iterates.rows; ++s) {
    out << id << "," << s << "," << num(tr.distances[static_cast<size_t>(s)]);
    for (int c = 0; c < tr.iterates.cols; ++c) out << "," << num(tr.iterates.at(s, c));
    out << "\n";
  }
}

void run_train(const RunConfig& cfg, Manifest& man) {
  Mat clean = training_data(cfg);

  fs::path log_path = fs::path(cfg.out_dir) / "training_log.csv";
  std::ofstream log = open_out(log_path);
  log << epoch_csv_header() << "\n";
  log.flush();
  TrainResult res = train_model(cfg, clean, [&](const EpochStats& s) {
    log << epoch_csv_line(s) << "\n";
    log.flush();
  });
  man.add("training_log.csv");

  KernelDensity kd = finalize_kernel(res.model, clean, cfg.kernel);
  std::map<std::string, std::string> extra{
      {"best_epoch", std::to_string(res.best_epoch)},
      {"best_loss", num(res.best_loss)},
      {"epochs_run", std::to_string(res.epochs_run)},
      {"early_stopped", res.early_stopped ? "true" : "false"},
      {"anchor_rows", std::to_string(kd.anchors.rows)},
  };
  fs::path ckpt = fs::path(cfg.out_dir) / "checkpoint";
  save_model(ckpt, res.model, extra);
  save_anchors(ckpt / "anchors.mat", kd.anchors);
  man.add("checkpoint");

  std::ofstream sum = open_out(fs::path(cfg.out_dir) / "summary.txt");
  sum << "rows trained on: " << clean.rows << "\n"
      << "epochs run: " << res.epochs_run << "\n"
      << "best epoch: " << res.best_epoch << "\n"
      << "best loss: " << num(res.best_loss) << "\n"
      << "early stopped: " << (res.early_stopped ? "yes" : "no") << "\n"
      << "kernel bandwidth: " << num(kd.sigma_ker) << "\n";
  man.add("summary.txt");
}

void run_reconstruct_circle(const RunConfig& cfg, const ManifoldModel& model,
                            const KernelDensity& kd, Manifest& man) {
  CircleDatasetSpec spec = cfg.dataset.circle;
  spec.count = cfg.count;
  Rng drng = Rng::keyed(cfg.seed, "data/circle-test");
  Mat clean = sample_circle(spec, drng);
  Rng nrng = Rng::keyed(cfg.seed, "reconstruct/noise");
  const int n = clean.rows;
  const int d = clean.cols;

  Mat corrupted(n, d), restored(n, d), dae(n, d);
  for (int i = 0; i < n; ++i) {
    Vec c = corrupt(clean.row_span(i), cfg.arch.sigma_d, nrng);
    std::copy(c.begin(), c.end(), corrupted.row(i));
  }

  ScoreField field{&model, &kd};
  std::ofstream metrics = open_out(fs::path(cfg.out_dir) / "metrics.csv");
  metrics << "id,mse_corrupted,mse_restored,mse_dae,steps,terminated_by\n";
  std::ofstream points = open_out(fs::path(cfg.out_dir) / "points.csv");
  points << "id,clean_x,clean_y,clean_z,corrupted_x,corrupted_y,corrupted_z,"
            "restored_x,restored_y,restored_z,dae_x,dae_y,dae_z\n";
  std::ofstream traj;
  if (cfg.projection.record_trajectory) {
    traj = open_out(fs::path(cfg.out_dir) / "trajectories.csv");
    traj << "id,step,distance,c0,c1,c2\n";
    man.add("trajectories.csv");
  }

  double sum_mc = 0, sum_mr = 0, sum_md = 0, sum_steps = 0;
  for (int i = 0; i < n; ++i) {
    Rng prng = Rng::keyed(cfg.seed, {0x7265636fULL, static_cast<uint64_t>(i)});
    ProjectionResult pr = mppm_reconstruct(corrupted.row_span(i), field, cfg.projection, prng);
    Vec base = model.autoencode(corrupted.row_span(i));
    std::copy(pr.point.begin(), pr.point.end(), restored.row(i));
    std::copy(base.begin(), base.end(), dae.row(i));

    double mc = mse(clean.row_span(i), corrupted.row_span(i));
    double mr = mse(clean.row_span(i), pr.point);
    double md = mse(clean.row_span(i), base);
    sum_mc += mc;
    sum_mr += mr;
    sum_md += md;
    sum_steps += pr.trajectory.steps_taken;
    metrics << i << "," << num(mc) << "," << num(mr) << "," << num(md) << ","
            << pr.trajectory.steps_taken << "," << termination_name(pr.trajectory.terminated_by)
            << "\n";
    points << i;
    for (const Mat* m : {&clean, &corrupted, &restored, &dae})
      for (int c = 0; c < d; ++c) points << "," << num(m->at(i, c));
    points << "\n";
    if (cfg.projection.record_trajectory) write_trajectory_rows(traj, i, pr.trajectory);
  }
  man.add("metrics.csv");
  man.add("points.csv");

  std::ofstream sum = open_out(fs::path(cfg.out_dir) / "summary.txt");
  sum << "points: " << n << "\n"
      << "mean mse corrupted: " << num(sum_mc / n) << "\n"
      << "mean mse restored: " << num(sum_mr / n) << "\n"
      << "mean mse dae: " << num(sum_md / n) << "\n"
      << "max deviation corrupted: " << num(max_circle_deviation(corrupted)) << "\n"
      << "max deviation restored: " << num(max_circle_deviation(restored)) << "\n"
      << "max deviation dae: " << num(max_circle_deviation(dae)) << "\n"
      << "max deviation restored (3d): " << num(max_circle_deviation_3d(restored)) << "\n"
      << "mean steps: " << num(sum_steps / n) << "\n";
  man.add("summary.txt");
}

DegradationSpec per_image_spec(const DegradationSpec& base, uint64_t salt, int i) {
  DegradationSpec out = base;
  out.seed = Rng::keyed(base.seed, {salt, static_cast<uint64_t>(i)}).next_u64();
  return out;
}

void run_reconstruct_images(const RunConfig& cfg, const ManifoldModel& model,
                            const KernelDensity& kd, Manifest& man) {
  ImageDataset ds = read_images(cfg.dataset.test_images, cfg.dataset.test_labels,
                                cfg.dataset.test_subset);
  const int n = std::min(cfg.count, ds.images.rows);
  require(n > 0, "no test images to reconstruct");
  const int h = ds.height, w = ds.width;
  if (ds.images.cols != model.ambient_dim())
    throw DimensionError("image size does not match the checkpoint");

  std::ofstream metrics = open_out(fs::path(cfg.out_dir) / "metrics.csv");
  metrics << "id,label,ssim_degraded,ssim_restored,ssim_dae,"
             "mse_degraded,mse_restored,mse_dae,steps,terminated_by\n";
  std::ofstream traj;
  if (cfg.projection.record_trajectory) {
    traj = open_out(fs::path(cfg.out_dir) / "trajectories.csv");
    traj << "id,step,distance";
    for (int c = 0; c < model.latent_dim(); ++c) traj << ",c" << c;
    traj << "\n";
    man.add("trajectories.csv");
  }

  std::vector<Vec> tiles_clean, tiles_degraded, tiles_restored, tiles_dae;
  double s_deg = 0, s_res = 0, s_dae = 0, sum_steps = 0;
  int better = 0;
  for (int i = 0; i < n; ++i) {
    Vec clean(ds.images.row_span(i).begin(), ds.images.row_span(i).end());
    Vec degraded = cfg.degrade_enabled
                       ? degrade(clean, h, w, per_image_spec(cfg.degrade, 0x7265636fULL, i))
                       : clean;
    ProjectionResult pr = lmppm_reconstruct(degraded, model, kd, cfg.projection);
    Vec base = model.autoencode(degraded);

    double sd = ssim(clean, degraded, h, w);
    double sr = ssim(clean, pr.point, h, w);
    double sb = ssim(clean, base, h, w);
    s_deg += sd;
    s_res += sr;
    s_dae += sb;
    if (sr > sd) ++better;
    sum_steps += pr.trajectory.steps_taken;
    int label = ds.labels.empty() ? -1 : ds.labels[static_cast<size_t>(i)];
    metrics << i << "," << label << "," << num(sd) << "," << num(sr) << "," << num(sb) << ","
            << num(mse(clean, degraded)) << "," << num(mse(clean, pr.point)) << ","
            << num(mse(clean, base)) << "," << pr.trajectory.steps_taken << ","
            << termination_name(pr.trajectory.terminated_by) << "\n";
    if (cfg.projection.record_trajectory) write_trajectory_rows(traj, i, pr.trajectory);

    tiles_clean.push_back(clean);
    tiles_degraded.push_back(degraded);
    tiles_restored.push_back(pr.point);
    tiles_dae.push_back(base);
  }
  man.add("metrics.csv");

  int columns = std::min(n, 10);
  write_montage(fs::path(cfg.out_dir) / "inputs.pgm", tiles_clean, h, w, columns);
  write_montage(fs::path(cfg.out_dir) / "degraded.pgm", tiles_degraded, h, w, columns);
  write_montage(fs::path(cfg.out_dir) / "restored.pgm", tiles_restored, h, w, columns);
  write_montage(fs::path(cfg.out_dir) / "dae.pgm", tiles_dae, h, w, columns);
  for (const char* p : {"inputs.pgm", "degraded.pgm", "restored.pgm", "dae.pgm"}) man.add(p);

  std::ofstream sum = open_out(fs::path(cfg.out_dir) / "summary.txt");
  sum << "images: " << n << "\n"
      << "mean ssim degraded: " << num(s_deg / n) << "\n"
      << "mean ssim restored: " << num(s_res / n) << "\n"
      << "mean ssim dae: " << num(s_dae / n) << "\n"
      << "restored beats degraded: " << better << "/" << n << "\n"
      << "mean steps: " << num(sum_steps / n) << "\n";
  man.add("summary.txt");
}

void run_reconstruct(const RunConfig& cfg, Manifest& man) {
  ManifoldModel model;
  KernelDensity kd = load_checkpoint(cfg, model);
  if (model.space == Space::ambient)
    run_reconstruct_circle(cfg, model, kd, man);
  else
    run_reconstruct_images(cfg, model, kd, man);
}

void run_generate(const RunConfig& cfg, Manifest& man) {
  ManifoldModel model;
  KernelDensity kd = load_checkpoint(cfg, model);
  Rng rng = Rng::keyed(cfg.seed, "generate");
  GenerationResult gen = generate(model, kd, cfg.projection, rng, cfg.count);

  std::ofstream metrics = open_out(fs::path(cfg.out_dir) / "gen_metrics.csv");
  metrics << "id,distance_initial,distance_final,ratio,steps,terminated_by\n";
  int shrunk = 0;
  for (size_t i = 0; i < gen.trajectories.size(); ++i) {
    const Trajectory& tr = gen.trajectories[i];
    double d0 = tr.distances.front();
    double dT = tr.distances.back();
    double ratio = std::abs(d0) > 0 ? dT / d0 : 0.0;
    if (ratio <= 0.1) ++shrunk;
    metrics << i << "," << num(d0) << "," << num(dT) << "," << num(ratio) << ","
            << tr.steps_taken << "," << termination_name(tr.terminated_by) << "\n";
  }
  man.add("gen_metrics.csv");

  int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(model.ambient_dim()))));
  if (side * side == model.ambient_dim() && gen.samples.rows > 0) {
    std::vector<Vec> tiles;
    for (int i = 0; i < gen.samples.rows; ++i)
      tiles.emplace_back(gen.samples.row_span(i).begin(), gen.samples.row_span(i).end());
    write_montage(fs::path(cfg.out_dir) / "samples.pgm", tiles, side, side,
                  std::min(gen.samples.rows, 10));
    man.add("samples.pgm");
  } else {
    std::ofstream pts = open_out(fs::path(cfg.out_dir) / "samples.csv");
    pts << "id";
    for (int c = 0; c < gen.samples.cols; ++c) pts << ",c" << c;
    pts << "\n";
    for (int i = 0; i < gen.samples.rows; ++i) {
      pts << i;
      for (int c = 0; c < gen.samples.cols; ++c) pts << "," << num(gen.samples.at(i, c));
      pts << "\n";
    }
    man.add("samples.csv");
  }

  std::ofstream traj = open_out(fs::path(cfg.out_dir) / "trajectories.csv");
  traj << "id,step,distance";
  for (int c = 0; c < model.latent_dim(); ++c) traj << ",c" << c;
  traj << "\n";
  for (size_t i = 0; i < gen.trajectories.size(); ++i)
    write_trajectory_rows(traj, static_cast<int>(i), gen.trajectories[i]);
  man.add("trajectories.csv");

  std::ofstream sum = open_out(fs::path(cfg.out_dir) / "summary.txt");
  sum << "samples: " << gen.samples.rows << "\n"
      << "final distance within 10% of initial: " << shrunk << "/" << gen.samples.rows << "\n";
  man.add("summary.txt");
}

void run_evaluate_circle(const RunConfig& cfg, const ManifoldModel& model,
                         const KernelDensity& kd, Manifest& man) {
  CircleDatasetSpec spec = cfg.dataset.circle;
  spec.count = cfg.count;
  Rng drng = Rng::keyed(cfg.seed, "data/circle-test");
  Mat clean = sample_circle(spec, drng);
  Rng nrng = Rng::keyed(cfg.seed, "reconstruct/noise");
  const int n = clean.rows;

  Mat restored(n, clean.cols), dae(n, clean.cols);
  double mse_r = 0, mse_d = 0;
  ScoreField field{&model, &kd};
  for (int i = 0; i < n; ++i) {
    Vec c = corrupt(clean.row_span(i), cfg.arch.sigma_d, nrng);
    Rng prng = Rng::keyed(cfg.seed, {0x7265636fULL, static_cast<uint64_t>(i)});
    ProjectionResult pr = mppm_reconstruct(c, field, cfg.projection, prng);
    Vec base = model.autoencode(c);
    std::copy(pr.point.begin(), pr.point.end(), restored.row(i));
    std::copy(base.begin(), base.end(), dae.row(i));
    mse_r += mse(clean.row_span(i), pr.point);
    mse_d += mse(clean.row_span(i), base);
  }

  std::ofstream csv = open_out(fs::path(cfg.out_dir) / "evaluation.csv");
  csv << "method,count,mean_mse,max_deviation\n";
  csv << "dae," << n << "," << num(mse_d / n) << "," << num(max_circle_deviation(dae)) << "\n";
  csv << "mppm," << n << "," << num(mse_r / n) << "," << num(max_circle_deviation(restored))
      << "\n";
  man.add("evaluation.csv");
}

struct EvalCell {
  std::string severity;
  DegradationSpec spec;
};

void run_evaluate_images(const RunConfig& cfg, const ManifoldModel& model,
                         const KernelDensity& kd, Manifest& man) {
  ImageDataset ds = read_images(cfg.dataset.test_images, cfg.dataset.test_labels,
                                cfg.dataset.test_subset);
  const int n = std::min(cfg.count, ds.images.rows);
  require(n > 0, "no test images to evaluate");
  const int h = ds.height, w = ds.width;
  if (ds.images.cols != model.ambient_dim())
    throw DimensionError("image size does not match the checkpoint");

  std::vector<EvalCell> cells;
  if (cfg.degrade_enabled) {
    cells.push_back({"custom", cfg.degrade});
  } else {
    auto add = [&](DegradationKind kind, const char* severity, auto&& tweak) {
      DegradationSpec s;
      s.kind = kind;
      s.seed = cfg.degrade.seed;
      tweak(s);
      cells.push_back({severity, s});
    };
    add(DegradationKind::gaussian_noise, "mild", [](DegradationSpec& s) { s.sigma = 0.2; });
    add(DegradationKind::gaussian_noise, "severe", [](DegradationSpec& s) { s.sigma = 0.3; });
    add(DegradationKind::elastic, "mild", [](DegradationSpec& s) { s.elastic_sigma = 1.5; });
    add(DegradationKind::elastic, "severe", [](DegradationSpec& s) { s.elastic_sigma = 1.1; });
    add(DegradationKind::downsample, "mild", [](DegradationSpec& s) { s.factor = 0.5; });
    add(DegradationKind::downsample, "severe", [](DegradationSpec& s) { s.factor = 0.35; });
    add(DegradationKind::missing_pixels, "mild", [](DegradationSpec& s) { s.coverage = 0.04; });
    add(DegradationKind::missing_pixels, "severe", [](DegradationSpec& s) { s.coverage = 0.1; });
    add(DegradationKind::scribbles, "mild", [](DegradationSpec& s) { s.count = 13; });
    add(DegradationKind::scribbles, "severe", [](DegradationSpec& s) { s.count = 20; });
    add(DegradationKind::oversharpen, "mild", [](DegradationSpec& s) { s.strength = 10.0; });
    add(DegradationKind::oversharpen, "severe", [](DegradationSpec& s) { s.strength = 18.0; });
  }

  std::ofstream csv = open_out(fs::path(cfg.out_dir) / "evaluation.csv");
  csv << "method,degradation,severity,count,mean_ssim,mean_mse\n";
  for (size_t cell_idx = 0; cell_idx < cells.size(); ++cell_idx) {
    const EvalCell& cell = cells[cell_idx];
    double ssim_dae = 0, ssim_lm = 0, mse_dae = 0, mse_lm = 0;
    for (int i = 0; i < n; ++i) {
      Vec clean(ds.images.row_span(i).begin(), ds.images.row_span(i).end());
      Vec degraded = degrade(clean, h, w, per_image_spec(cell.spec, cell_idx, i));
      Vec base = model.autoencode(degraded);
      ProjectionResult pr = lmppm_reconstruct(degraded, model, kd, cfg.projection);
      ssim_dae += ssim(clean, base, h, w);
      ssim_lm += ssim(clean, pr.point, h, w);
      mse_dae += mse(clean, base);
      mse_lm += mse(clean, pr.point);
    }
    std::string kind = degradation_name(cell.spec.kind);
    csv << "dae," << kind << "," << cell.severity << "," << n << "," << num(ssim_dae / n) << ","
        << num(mse_dae / n) << "\n";
    csv << "lmppm," << kind << "," << cell.severity << "," << n << "," << num(ssim_lm / n) << ","
        << num(mse_lm / n) << "\n";
    csv.flush();
  }
  man.add("evaluation.csv");
}

void run_evaluate(const RunConfig& cfg, Manifest& man) {
  ManifoldModel model;
  KernelDensity kd = load_checkpoint(cfg, model);
  if (model.space == Space::ambient)
    run_evaluate_circle(cfg, model, kd, man);
  else
    run_evaluate_images(cfg, model, kd, man);
}

// Central differences over every parameter of every net, one loss term at a
// time, against the analytic gradients. The lambda1 targets are frozen at the
// base point so both sides see the same constants.
void run_gradcheck(const RunConfig& cfg, Manifest& man) {
  constexpr double kH = 1e-5;
  constexpr double kTol = 1e-3;

  std::string report;
  bool ok = true;

  for (Space space : {Space::ambient, Space::latent}) {
    ArchitectureSpec arch;
    arch.encoder = mlp_spec({3, 5, 2});
    arch.decoder = mlp_spec({2, 5, 3});
    arch.distance = mlp_spec({space == Space::ambient ? 3 : 2, 6, 1}, Activation::identity, 0.2);
    arch.space = space;
    arch.sigma_d = 0.25;
    arch.sigma_ker = 0.1;
    ManifoldModel model = build_model(arch, cfg.seed);

    Rng data_rng = Rng::keyed(cfg.seed, "gradcheck/data");
    Mat data(6, 3);
    for (double& v : data.data) v = data_rng.uniform(-1.0, 1.0);
    std::vector<int> idx{0, 1, 2, 3, 4, 5};
    std::vector<int> src{3, 0, 5, 1, 4, 2};
    uint64_t noise_seed = Rng::keyed(cfg.seed, "gradcheck/noise").next_u64();
    uint64_t dropout_seed = Rng::keyed(cfg.seed, "gradcheck/dropout").next_u64();
    TrainBatch batch = make_batch(data, idx, src, arch.sigma_d, noise_seed, 1, 0);
    const bool ambient = space == Space::ambient;
    FrozenTargets frozen =
        ambient ? capture_ambient_targets(model, batch) : capture_latent_targets(model, batch);

    auto loss_value = [&](const LossWeights& w) {
      return (ambient ? ambient_loss(model, batch, w, Mode::train, dropout_seed, nullptr, &frozen)
                      : latent_loss(model, batch, w, Mode::train, dropout_seed, nullptr, &frozen))
          .total;
    };

    int active_terms = ambient ? 5 : 6;
    for (int term = 0; term <= active_terms; ++term) {
      // term 0 is the composite; term k isolates lambda_k.
      LossWeights w;
      if (term > 0) {
        w.lambda.fill(0.0);
        w.lambda[static_cast<size_t>(term - 1)] = 1.0;
      }
      ModelGrads grads = ModelGrads::make(model);
      (void)(ambient
                 ? ambient_loss(model, batch, w, Mode::train, dropout_seed, &grads, &frozen)
                 : latent_loss(model, batch, w, Mode::train, dropout_seed, &grads, &frozen));

      double max_rel = 0.0;
      MlpNetwork* nets[3] = {&model.encoder, &model.decoder, &model.distance_net};
      NetGrads* ngrads[3] = {&grads.encoder, &grads.decoder, &grads.distance};
      for (int k = 0; k < 3; ++k) {
        for (size_t p = 0; p < nets[k]->parameter_count(); ++p) {
          double saved = nets[k]->param(p);
          nets[k]->param(p) = saved + kH;
          double up = loss_value(w);
          nets[k]->param(p) = saved - kH;
          double down = loss_value(w);
          nets[k]->param(p) = saved;
          double fd = (up - down) / (2.0 * kH);
          double an = ngrads[k]->flat(p);
          double rel = std::abs(an - fd) / std::max({1e-6, std::abs(an), std::abs(fd)});
          max_rel = std::max(max_rel, rel);
        }
      }
      bool pass = max_rel < kTol;
      ok = ok && pass;
      char line[160];
      std::snprintf(line, sizeof line, "%s %s max_rel_err %.3e %s\n",
                    space == Space::ambient ? "ambient" : "latent",
                    term == 0 ? "composite" : ("term" + std::to_string(term)).c_str(), max_rel,
                    pass ? "pass" : "FAIL");
      report += line;
    }
  }

  std::ofstream out = open_out(fs::path(cfg.out_dir) / "report.txt");
  out << report;
  out.flush();
  man.add("report.txt");
  std::fputs(report.c_str(), stdout);
  if (!ok) throw NumericsError("gradient check failed; see report.txt");
}

}  // namespace

void run(const RunConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  Manifest man;
  man.path = fs::path(cfg.out_dir) / "manifest.txt";
  man.cfg = &cfg;
  man.write("running");
  try {
    switch (cfg.mode) {
      case RunMode::train_ambient:
      case RunMode::train_latent: run_train(cfg, man); break;
      case RunMode::reconstruct: run_reconstruct(cfg, man); break;
      case RunMode::generate: run_generate(cfg, man); break;
      case RunMode::evaluate: run_evaluate(cfg, man); break;
      case RunMode::grad_check: run_gradcheck(cfg, man); break;
    }
  } catch (const std::exception& e) {
    man.write("failed", e.what());
    throw;
  }
  man.write("complete");
}

}  // namespace mppm
