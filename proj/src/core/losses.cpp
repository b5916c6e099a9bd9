#include "core/losses.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>

namespace mppm {

void LossWeights::validate() const {
  for (double l : lambda)
    if (!(l >= 0.0) || !std::isfinite(l)) throw ConfigError("loss weights must be finite and >= 0");
}

Vec corrupt(std::span<const double> x, double sigma_d, Rng& rng) {
  if (sigma_d <= 0.0) throw ConfigError("corrupt: sigma_d must be positive");
  Vec out(x.begin(), x.end());
  for (double& v : out) v += sigma_d * rng.normal();
  return out;
}

std::pair<int, Vec> nearest_clean(std::span<const double> x, const Mat& dataset) {
  require(dataset.rows > 0, "nearest_clean: empty dataset");
  require(static_cast<int>(x.size()) == dataset.cols, "nearest_clean: dim mismatch");
  int best = 0;
  double best_d = squared_distance(x, dataset.row_span(0));
  for (int i = 1; i < dataset.rows; ++i) {
    double d = squared_distance(x, dataset.row_span(i));
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return {best, Vec(dataset.row(best), dataset.row(best) + dataset.cols)};
}

std::vector<int> nearest_clean_bulk(const Mat& queries, const Mat& dataset) {
  require(dataset.rows > 0, "nearest_clean: empty dataset");
  require(queries.cols == dataset.cols, "nearest_clean: dim mismatch");
  int n = dataset.rows, d = dataset.cols;
  Vec dnorm(static_cast<size_t>(n));
  for (int j = 0; j < n; ++j) dnorm[static_cast<size_t>(j)] = squared_norm(dataset.row_span(j));
  std::vector<int> out(static_cast<size_t>(queries.rows));
  const int block = 256;
  Mat prod(std::min(block, queries.rows), n);
  for (int q0 = 0; q0 < queries.rows; q0 += block) {
    int qb = std::min(block, queries.rows - q0);
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, qb, n, d, 1.0, queries.row(q0), d,
                dataset.row(0), d, 0.0, prod.row(0), n);
    for (int i = 0; i < qb; ++i) {
      const double* pr = prod.row(i);
      int best = 0;
      // ||q - x_j||^2 differs from -2 q.x_j + ||x_j||^2 by a constant in j.
      double best_d = dnorm[0] - 2.0 * pr[0];
      for (int j = 1; j < n; ++j) {
        double dist = dnorm[static_cast<size_t>(j)] - 2.0 * pr[j];
        if (dist < best_d) {
          best_d = dist;
          best = j;
        }
      }
      out[static_cast<size_t>(q0 + i)] = best;
    }
  }
  return out;
}

TrainBatch make_batch(const Mat& dataset, std::span<const int> batch_indices,
                      std::span<const int> corruption_sources, double sigma_d, uint64_t noise_seed,
                      uint64_t epoch, uint64_t batch_id) {
  TrainBatch b;
  b.clean = Mat(static_cast<int>(batch_indices.size()), dataset.cols);
  for (size_t i = 0; i < batch_indices.size(); ++i)
    std::copy_n(dataset.row(batch_indices[i]), dataset.cols, b.clean.row(static_cast<int>(i)));
  b.corrupted = Mat(static_cast<int>(corruption_sources.size()), dataset.cols);
  for (size_t i = 0; i < corruption_sources.size(); ++i) {
    Rng rng = Rng::keyed(noise_seed, {epoch, batch_id, static_cast<uint64_t>(i), 0x6e6f697365ULL});
    Vec noisy = corrupt(dataset.row_span(corruption_sources[i]), sigma_d, rng);
    std::copy(noisy.begin(), noisy.end(), b.corrupted.row(static_cast<int>(i)));
  }
  b.pairing = nearest_clean_bulk(b.corrupted, dataset);
  b.paired_clean = Mat(b.corrupted.rows, dataset.cols);
  for (int i = 0; i < b.corrupted.rows; ++i)
    std::copy_n(dataset.row(b.pairing[static_cast<size_t>(i)]), dataset.cols, b.paired_clean.row(i));
  return b;
}

FrozenTargets capture_ambient_targets(const ManifoldModel&, const TrainBatch& batch) {
  FrozenTargets f;
  f.t.resize(static_cast<size_t>(batch.corrupted.rows));
  for (int i = 0; i < batch.corrupted.rows; ++i)
    f.t[static_cast<size_t>(i)] =
        std::sqrt(squared_distance(batch.corrupted.row_span(i), batch.paired_clean.row_span(i)));
  return f;
}

FrozenTargets capture_latent_targets(const ManifoldModel& model, const TrainBatch& batch) {
  FrozenTargets f;
  f.t.resize(static_cast<size_t>(batch.corrupted.rows));
  for (int i = 0; i < batch.corrupted.rows; ++i) {
    Vec z = model.encode(batch.corrupted.row_span(i));
    Vec zs = model.encode(batch.paired_clean.row_span(i));
    f.t[static_cast<size_t>(i)] = std::sqrt(squared_distance(z, zs));
  }
  return f;
}

namespace {

// d/dv of (v - |v|)^2, with the |.|' convention sign(0) = 1 (the term and its
// derivative both vanish at 0 either way).
double positivity_grad(double v, double p4) {
  double sgn = v < 0.0 ? -1.0 : 1.0;
  return 2.0 * p4 * (1.0 - sgn);
}

struct SampleRngs {
  Rng enc, dec, dis;
};

SampleRngs sample_rngs(uint64_t seed, uint64_t tag) {
  return {Rng::keyed(seed, {tag, 1}), Rng::keyed(seed, {tag, 2}), Rng::keyed(seed, {tag, 3})};
}

}  // namespace

LossBreakdown ambient_loss(const ManifoldModel& model, const TrainBatch& batch,
                           const LossWeights& weights, Mode mode, uint64_t dropout_seed,
                           ModelGrads* grads, const FrozenTargets* frozen) {
  weights.validate();
  require(model.space == Space::ambient, "ambient_loss needs an ambient-space model");
  if (frozen)
    require(frozen->t.size() == static_cast<size_t>(batch.corrupted.rows),
            "frozen targets do not match the batch");
  const auto& lam = weights.lambda;
  LossBreakdown out;

  // xstar is the nearest clean sample for corrupted rows and the sample itself
  // for clean rows, so the lambda5 shift consistency term trains only D.
  auto process = [&](std::span<const double> x, std::span<const double> xstar, bool is_corrupted,
                     int row) {
    SampleRngs rngs = sample_rngs(dropout_seed, (static_cast<uint64_t>(row) << 1) | (is_corrupted ? 1 : 0));
    Rng* sr = mode == Mode::train ? &rngs.dis : nullptr;

    auto trD = model.distance_net.forward_traced(x, mode, sr);
    double dv = trD.output[0];
    double p4 = dv - std::fabs(dv);

    Vec g = model.distance_net.backward(trD, Vec{1.0}, nullptr);
    double gn = norm(g);
    bool has_dir = gn >= kGradientFloor;
    Vec nhat, r5;
    if (has_dir) {
      nhat = g;
      for (double& v : nhat) v /= gn;
      r5.resize(x.size());
      for (size_t c = 0; c < x.size(); ++c) r5[c] = x[c] - dv * nhat[c] - xstar[c];
    } else if (lam[4] > 0.0) {
      ++out.degenerate_skips;
    }

    double t = 0.0;
    if (is_corrupted) {
      t = frozen ? frozen->t[static_cast<size_t>(row)] : std::sqrt(squared_distance(x, xstar));
      out.terms[0] += lam[0] * (dv - t) * (dv - t);
    } else {
      out.terms[2] += lam[2] * dv * dv;
    }
    out.terms[3] += lam[3] * p4 * p4;
    if (has_dir) out.terms[4] += lam[4] * squared_norm(r5);

    if (!is_corrupted) {
      Rng* er = mode == Mode::train ? &rngs.enc : nullptr;
      Rng* dr = mode == Mode::train ? &rngs.dec : nullptr;
      auto trF = model.encoder.forward_traced(x, mode, er);
      auto trG = model.decoder.forward_traced(trF.output, mode, dr);
      const Vec& y = trG.output;
      out.terms[1] += lam[1] * squared_distance(x, y);
      if (grads && lam[1] > 0.0) {
        Vec uy(x.size());
        for (size_t c = 0; c < x.size(); ++c) uy[c] = -2.0 * lam[1] * (x[c] - y[c]);
        Vec uz = model.decoder.backward(trG, uy, &grads->decoder);
        model.encoder.backward(trF, uz, &grads->encoder);
      }
    }

    if (!grads) return;

    double d_dv = lam[3] * positivity_grad(dv, p4);
    if (is_corrupted) d_dv += 2.0 * lam[0] * (dv - t);
    else d_dv += 2.0 * lam[2] * dv;

    if (has_dir && lam[4] > 0.0) {
      double r5n = dot(r5, nhat);
      d_dv += -2.0 * lam[4] * r5n;
      if (!weights.detach_shift_direction) {
        // Parameter path of the unit direction: v^T dg/dtheta with
        // v = -2 lam4 D (I - n n^T) r5 / ||g||.
        Vec v(x.size());
        double scale = -2.0 * lam[4] * dv / gn;
        for (size_t c = 0; c < x.size(); ++c) v[c] = scale * (r5[c] - nhat[c] * r5n);
        model.distance_net.directional_gradient_backward(trD, v, &grads->distance);
      }
    }
    if (d_dv != 0.0)
      model.distance_net.backward(trD, Vec{d_dv}, &grads->distance);
  };

  for (int i = 0; i < batch.corrupted.rows; ++i)
    process(batch.corrupted.row_span(i), batch.paired_clean.row_span(i), true, i);
  for (int i = 0; i < batch.clean.rows; ++i)
    process(batch.clean.row_span(i), batch.clean.row_span(i), false, i);

  for (double t : out.terms) out.total += t;
  return out;
}

LossBreakdown latent_loss(const ManifoldModel& model, const TrainBatch& batch,
                          const LossWeights& weights, Mode mode, uint64_t dropout_seed,
                          ModelGrads* grads, const FrozenTargets* frozen) {
  weights.validate();
  require(model.space == Space::latent, "latent_loss needs a latent-space model");
  require(batch.paired_clean.rows == batch.corrupted.rows, "batch pairing not materialized");
  if (frozen)
    require(frozen->t.size() == static_cast<size_t>(batch.corrupted.rows),
            "frozen targets do not match the batch");
  const auto& lam = weights.lambda;
  const bool sq = weights.square_consistency_terms;
  LossBreakdown out;
  size_t d = static_cast<size_t>(model.latent_dim());

  // Clean members: z in S.
  for (int i = 0; i < batch.clean.rows; ++i) {
    auto x = batch.clean.row_span(i);
    SampleRngs rngs = sample_rngs(dropout_seed, static_cast<uint64_t>(i) << 1);
    Rng* er = mode == Mode::train ? &rngs.enc : nullptr;
    Rng* dr = mode == Mode::train ? &rngs.dec : nullptr;
    Rng* sr = mode == Mode::train ? &rngs.dis : nullptr;

    auto trF = model.encoder.forward_traced(x, mode, er);
    auto trG = model.decoder.forward_traced(trF.output, mode, dr);
    auto trD = model.distance_net.forward_traced(trF.output, mode, sr);
    double dv = trD.output[0];
    double p4 = dv - std::fabs(dv);

    out.terms[1] += lam[1] * squared_distance(x, trG.output);
    out.terms[2] += lam[2] * dv * dv;
    out.terms[3] += lam[3] * p4 * p4;

    if (!grads) continue;
    Vec uz(d, 0.0);
    bool have_uz = false;
    if (lam[1] > 0.0) {
      Vec uy(x.size());
      for (size_t c = 0; c < x.size(); ++c) uy[c] = -2.0 * lam[1] * (x[c] - trG.output[c]);
      Vec w = model.decoder.backward(trG, uy, &grads->decoder);
      for (size_t c = 0; c < d; ++c) uz[c] += w[c];
      have_uz = true;
    }
    double d_dv = 2.0 * lam[2] * dv + lam[3] * positivity_grad(dv, p4);
    if (d_dv != 0.0) {
      Vec gin = model.distance_net.backward(trD, Vec{d_dv}, &grads->distance);
      for (size_t c = 0; c < d; ++c) uz[c] += gin[c];
      have_uz = true;
    }
    if (have_uz) model.encoder.backward(trF, uz, &grads->encoder);
  }

  // Corrupted members: z not in S.
  for (int i = 0; i < batch.corrupted.rows; ++i) {
    auto x = batch.corrupted.row_span(i);
    auto xstar = batch.paired_clean.row_span(i);
    SampleRngs rngs = sample_rngs(dropout_seed, (static_cast<uint64_t>(i) << 1) | 1);
    Rng* er = mode == Mode::train ? &rngs.enc : nullptr;
    Rng* dr = mode == Mode::train ? &rngs.dec : nullptr;
    Rng* sr = mode == Mode::train ? &rngs.dis : nullptr;

    auto trFx = model.encoder.forward_traced(x, mode, er);
    const Vec& z = trFx.output;
    // Fresh stream for the second encoder pass so masks stay independent.
    Rng er2 = Rng::keyed(dropout_seed, {static_cast<uint64_t>(i), 0x7a73746172ULL});
    auto trFs = model.encoder.forward_traced(xstar, mode, mode == Mode::train ? &er2 : nullptr);
    const Vec& zstar = trFs.output;
    auto trD = model.distance_net.forward_traced(z, mode, sr);
    double dv = trD.output[0];
    double p4 = dv - std::fabs(dv);

    double t = frozen ? frozen->t[static_cast<size_t>(i)]
                      : std::sqrt(squared_distance(z, zstar));
    out.terms[0] += lam[0] * (dv - t) * (dv - t);
    out.terms[3] += lam[3] * p4 * p4;

    Vec g = model.distance_net.backward(trD, Vec{1.0}, nullptr);
    double gn = norm(g);
    bool has_dir = gn >= kGradientFloor;
    Vec nhat(d), zs(d), r5(d);
    double e5 = 0.0;
    ForwardTrace trG;
    Vec r6;
    double e6 = 0.0;
    if (has_dir) {
      for (size_t c = 0; c < d; ++c) nhat[c] = g[c] / gn;
      for (size_t c = 0; c < d; ++c) zs[c] = z[c] - dv * nhat[c];
      for (size_t c = 0; c < d; ++c) r5[c] = zs[c] - zstar[c];
      e5 = norm(r5);
      out.terms[4] += lam[4] * (sq ? e5 * e5 : e5);
      trG = model.decoder.forward_traced(zs, mode, dr);
      r6.resize(x.size());
      for (size_t c = 0; c < x.size(); ++c) r6[c] = trG.output[c] - xstar[c];
      e6 = norm(r6);
      out.terms[5] += lam[5] * (sq ? e6 * e6 : e6);
    } else if (lam[4] > 0.0 || lam[5] > 0.0) {
      ++out.degenerate_skips;
    }

    if (!grads) continue;

    double d_dv = 2.0 * lam[0] * (dv - t) + lam[3] * positivity_grad(dv, p4);
    Vec uzs(d, 0.0);
    bool have_uzs = false;
    if (has_dir) {
      if (lam[4] > 0.0 && (sq || e5 > 0.0)) {
        double s5 = sq ? 2.0 * lam[4] : lam[4] / e5;
        for (size_t c = 0; c < d; ++c) uzs[c] += s5 * r5[c];
        have_uzs = true;
      }
      if (lam[5] > 0.0 && (sq || e6 > 0.0)) {
        Vec u6(x.size());
        double s6 = sq ? 2.0 * lam[5] : lam[5] / e6;
        for (size_t c = 0; c < x.size(); ++c) u6[c] = s6 * r6[c];
        Vec w6 = model.decoder.backward(trG, u6, &grads->decoder);
        for (size_t c = 0; c < d; ++c) uzs[c] += w6[c];
        have_uzs = true;
      }
    }

    Vec uz(d, 0.0);
    if (have_uzs) {
      // z-shift value path: d zs / d Dv = -nhat.
      d_dv += -dot(uzs, nhat);
      // Identity path of zs = z - Dv nhat w.r.t. z.
      for (size_t c = 0; c < d; ++c) uz[c] += uzs[c];
      if (!weights.detach_shift_direction) {
        Vec v(d);
        double un = dot(uzs, nhat);
        double scale = -dv / gn;
        for (size_t c = 0; c < d; ++c) v[c] = scale * (uzs[c] - nhat[c] * un);
        Vec hv = model.distance_net.directional_gradient_backward(trD, v, &grads->distance);
        for (size_t c = 0; c < d; ++c) uz[c] += hv[c];
      }
      // The lambda5 residual pulls z* toward the shifted code.
      if (lam[4] > 0.0 && (sq || e5 > 0.0)) {
        double s5 = sq ? 2.0 * lam[4] : lam[4] / e5;
        Vec uzstar(d);
        for (size_t c = 0; c < d; ++c) uzstar[c] = -s5 * r5[c];
        model.encoder.backward(trFs, uzstar, &grads->encoder);
      }
    }
    if (d_dv != 0.0) {
      Vec gin = model.distance_net.backward(trD, Vec{d_dv}, &grads->distance);
      for (size_t c = 0; c < d; ++c) uz[c] += gin[c];
    }
    bool any_uz = false;
    for (double c : uz)
      if (c != 0.0) {
        any_uz = true;
        break;
      }
    if (any_uz) model.encoder.backward(trFx, uz, &grads->encoder);
  }

  for (double t : out.terms) out.total += t;
  return out;
}

}  // namespace mppm
