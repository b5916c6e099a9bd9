#include "core/projection.hpp"

#include <cmath>

namespace mppm {

std::string termination_name(Termination t) {
  switch (t) {
    case Termination::max_steps: return "max_steps";
    case Termination::tolerance: return "tolerance";
    case Termination::score_underflow_fallback_exhausted:
      return "score_underflow_fallback_exhausted";
  }
  return "unknown";
}

void ProjectionConfig::validate() const {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be positive");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ConfigError("beta must be >= 0");
  if (!(alpha + beta < 1.0)) throw ConfigError("alpha + beta must stay below 1");
  if (num_steps < 1) throw ConfigError("num_steps must be >= 1");
  if (!(convergence_tol >= 0.0) || !std::isfinite(convergence_tol))
    throw ConfigError("convergence_tol must be >= 0");
}

Vec projection_step(std::span<const double> x, const DistanceField& dist, const MeanField* mean,
                    const ProjectionConfig& cfg, Rng& rng, StepStatus* status) {
  cfg.validate();
  if (cfg.beta > 0.0 && mean == nullptr)
    throw ConfigError("beta > 0 requires a kernel mean field");

  double dv = dist.value(x);
  Vec g = dist.gradient(x);
  double gn = norm(g);
  bool geo = std::isfinite(dv) && std::isfinite(gn) && gn >= kGradientFloor;

  Vec m;
  bool ker = false;
  if (cfg.beta > 0.0) {
    try {
      m = mean->mean(x, rng);
      require(m.size() == x.size(), "kernel mean dimension mismatch");
      ker = true;
    } catch (const ScoreUnderflow&) {
      ker = false;
    }
  }

  Vec next(x.begin(), x.end());
  bool stalled = false;
  if (geo && ker) {
    double s = cfg.alpha * dv / gn;
    for (size_t c = 0; c < next.size(); ++c)
      next[c] = (1.0 - cfg.beta) * x[c] + cfg.beta * m[c] - s * g[c];
  } else if (geo) {
    double s = cfg.alpha * dv / gn;
    for (size_t c = 0; c < next.size(); ++c) next[c] = x[c] - s * g[c];
  } else if (ker) {
    for (size_t c = 0; c < next.size(); ++c) next[c] = (1.0 - cfg.beta) * x[c] + cfg.beta * m[c];
  } else {
    stalled = true;
  }

  if (status) {
    status->dist = dv;
    status->geometric_applied = geo;
    status->kernel_applied = ker;
    status->stalled = stalled;
  }
  return next;
}

ProjectionResult project(std::span<const double> x0, const DistanceField& dist,
                         const MeanField* mean, const ProjectionConfig& cfg, Rng& rng) {
  cfg.validate();
  ProjectionResult out;
  out.point.assign(x0.begin(), x0.end());
  Trajectory& traj = out.trajectory;

  std::vector<Vec> points;
  Vec dists;
  auto record = [&](const Vec& p, double d) {
    if (!cfg.record_trajectory) return;
    points.push_back(p);
    dists.push_back(d);
  };

  for (int n = 0; n < cfg.num_steps; ++n) {
    StepStatus st;
    Vec next = projection_step(out.point, dist, mean, cfg, rng, &st);
    if (st.stalled) {
      traj.terminated_by = Termination::score_underflow_fallback_exhausted;
      break;
    }
    record(out.point, st.dist);
    double moved = std::sqrt(squared_distance(next, out.point));
    out.point = std::move(next);
    ++traj.steps_taken;
    if (cfg.convergence_tol > 0.0 && moved < cfg.convergence_tol) {
      traj.terminated_by = Termination::tolerance;
      break;
    }
  }
  record(out.point, dist.value(out.point));

  if (cfg.record_trajectory && !points.empty()) {
    traj.iterates = Mat(static_cast<int>(points.size()), static_cast<int>(points.front().size()));
    for (size_t i = 0; i < points.size(); ++i)
      std::copy(points[i].begin(), points[i].end(), traj.iterates.row(static_cast<int>(i)));
    traj.distances = std::move(dists);
  }
  return out;
}

namespace {

void require_ambient(const ScoreField& field, const ProjectionConfig& cfg) {
  require(field.model != nullptr, "projection needs a model");
  require(field.model->space == Space::ambient, "ambient loop needs an ambient-space model");
  if (cfg.beta > 0.0)
    require(field.kernel != nullptr, "beta > 0 requires kernel anchors");
}

}  // namespace

Vec mppm_step(std::span<const double> x, const ScoreField& field, const ProjectionConfig& cfg,
              Rng& rng) {
  require_ambient(field, cfg);
  LearnedDistanceField dist(*field.model);
  DecoderMeanField mean(field);
  return projection_step(x, dist, cfg.beta > 0.0 ? &mean : nullptr, cfg, rng, nullptr);
}

ProjectionResult mppm_reconstruct(std::span<const double> x0, const ScoreField& field,
                                  const ProjectionConfig& cfg, Rng& rng) {
  require_ambient(field, cfg);
  LearnedDistanceField dist(*field.model);
  DecoderMeanField mean(field);
  return project(x0, dist, cfg.beta > 0.0 ? &mean : nullptr, cfg, rng);
}

Vec lmppm_step(std::span<const double> z, const ManifoldModel& model,
               const KernelDensity& anchors, const ProjectionConfig& cfg) {
  require(model.space == Space::latent, "latent loop needs a latent-space model");
  LearnedDistanceField dist(model);
  AnchorMeanField mean(anchors);
  Rng unused(0);
  return projection_step(z, dist, cfg.beta > 0.0 ? &mean : nullptr, cfg, unused, nullptr);
}

ProjectionResult lmppm_reconstruct(std::span<const double> x0, const ManifoldModel& model,
                                   const KernelDensity& anchors, const ProjectionConfig& cfg) {
  require(model.space == Space::latent, "latent loop needs a latent-space model");
  require(static_cast<int>(x0.size()) == model.ambient_dim(), "input dimension mismatch");
  Vec z1 = model.encode(x0);
  LearnedDistanceField dist(model);
  AnchorMeanField mean(anchors);
  Rng unused(0);
  ProjectionResult res = project(z1, dist, cfg.beta > 0.0 ? &mean : nullptr, cfg, unused);
  res.point = model.decode(res.point);
  return res;
}

GenerationResult generate(const ManifoldModel& model, const KernelDensity& anchors,
                          const ProjectionConfig& cfg, Rng& rng, int count) {
  require(count >= 0, "count must be >= 0");
  ProjectionConfig local = cfg;
  local.record_trajectory = true;
  GenerationResult out;
  int d = model.ambient_dim();
  out.samples = Mat(count, d);
  out.trajectories.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    Vec x0(static_cast<size_t>(d));
    for (double& v : x0) v = 0.5 + 0.5 * rng.normal();
    ProjectionResult res = lmppm_reconstruct(x0, model, anchors, local);
    std::copy(res.point.begin(), res.point.end(), out.samples.row(i));
    out.trajectories.push_back(std::move(res.trajectory));
  }
  return out;
}

}  // namespace mppm
