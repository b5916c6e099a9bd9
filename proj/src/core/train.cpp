#include "core/train.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace mppm {

std::string epoch_csv_header() {
  return "epoch,term1,term2,term3,term4,term5,term6,total,degenerate_skips";
}

std::string epoch_csv_line(const EpochStats& s) {
  std::ostringstream o;
  o << s.epoch;
  char buf[64];
  for (double t : s.terms) {
    std::snprintf(buf, sizeof buf, ",%.17g", t);
    o << buf;
  }
  std::snprintf(buf, sizeof buf, ",%.17g", s.total);
  o << buf << "," << s.degenerate_skips;
  return o.str();
}

TrainResult train_model(const RunConfig& cfg, const Mat& clean, const EpochCallback& on_epoch) {
  require(!clean.empty(), "train_model: empty dataset");
  if (cfg.arch.ambient_dim() != clean.cols)
    throw DimensionError("train_model: dataset width does not match the encoder input");

  TrainResult res;
  res.model = build_model(cfg.arch, cfg.seed);
  if (cfg.train.epochs == 0) return res;

  AdamState opt_enc(res.model.encoder.parameter_count(), cfg.opt.autoencoder);
  AdamState opt_dec(res.model.decoder.parameter_count(), cfg.opt.autoencoder);
  AdamState opt_dist(res.model.distance_net.parameter_count(), cfg.opt.distance);

  const uint64_t noise_seed = Rng::keyed(cfg.seed, "train/noise").next_u64();
  const uint64_t dropout_base = Rng::keyed(cfg.seed, "train/dropout").next_u64();
  const uint64_t shuffle_base = Rng::keyed(cfg.seed, "train/shuffle").next_u64();
  const uint64_t source_base = Rng::keyed(cfg.seed, "train/sources").next_u64();

  const int n = clean.rows;
  const int bs = cfg.train.batch_size;
  const bool ambient = cfg.arch.space == Space::ambient;
  ModelGrads grads = ModelGrads::make(res.model);
  ManifoldModel best = res.model;

  std::vector<int> order(static_cast<size_t>(n));
  std::vector<int> sources(static_cast<size_t>(n));

  for (int epoch = 1; epoch <= cfg.train.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::iota(sources.begin(), sources.end(), 0);
    Rng order_rng = Rng::keyed(shuffle_base, {static_cast<uint64_t>(epoch)});
    Rng source_rng = Rng::keyed(source_base, {static_cast<uint64_t>(epoch)});
    order_rng.shuffle(order);
    source_rng.shuffle(sources);

    EpochStats stats;
    stats.epoch = epoch;
    for (int start = 0, batch_id = 0; start < n; start += bs, ++batch_id) {
      int len = std::min(bs, n - start);
      std::span<const int> batch_idx(order.data() + start, static_cast<size_t>(len));
      std::span<const int> src_idx(sources.data() + start, static_cast<size_t>(len));
      TrainBatch batch = make_batch(clean, batch_idx, src_idx, cfg.arch.sigma_d, noise_seed,
                                    static_cast<uint64_t>(epoch),
                                    static_cast<uint64_t>(batch_id));

      uint64_t dropout_seed =
          Rng::keyed(dropout_base,
                     {static_cast<uint64_t>(epoch), static_cast<uint64_t>(batch_id)})
              .next_u64();
      grads.zero();
      LossBreakdown bd = ambient
                             ? ambient_loss(res.model, batch, cfg.weights, Mode::train,
                                            dropout_seed, &grads)
                             : latent_loss(res.model, batch, cfg.weights, Mode::train,
                                           dropout_seed, &grads);
      if (!std::isfinite(bd.total) || !grads.finite()) {
        std::ostringstream o;
        o << "non-finite loss at epoch " << epoch << " batch " << batch_id << ": total "
          << bd.total << ", terms";
        for (double t : bd.terms) o << " " << t;
        throw NumericsError(o.str());
      }
      opt_enc.step(res.model.encoder, grads.encoder);
      opt_dec.step(res.model.decoder, grads.decoder);
      opt_dist.step(res.model.distance_net, grads.distance);

      for (size_t k = 0; k < 6; ++k) stats.terms[k] += bd.terms[k];
      stats.total += bd.total;
      stats.degenerate_skips += bd.degenerate_skips;
    }

    res.history.push_back(stats);
    res.epochs_run = epoch;
    if (stats.total < res.best_loss) {
      res.best_loss = stats.total;
      res.best_epoch = epoch;
      best = res.model;
    }
    if (on_epoch) on_epoch(stats);
    if (epoch - res.best_epoch >= cfg.train.patience) {
      res.early_stopped = true;
      break;
    }
  }

  res.model = best;
  return res;
}

KernelDensity finalize_kernel(ManifoldModel& model, const Mat& clean, const KernelSettings& ks) {
  KernelDensity kd;
  kd.anchors = model.encoder.forward_eval_batch(clean);
  kd.n_samples = ks.n_samples;
  kd.subsample_k = ks.subsample_k;
  kd.subsample_threshold = ks.subsample_threshold;
  double sigma = ks.sigma_ker;
  if (!(sigma > 0.0)) sigma = 0.5 * median_pairwise_distance(kd.anchors);
  if (!(sigma > 0.0) || !std::isfinite(sigma))
    throw NumericsError("kernel bandwidth heuristic collapsed: anchors are degenerate");
  kd.sigma_ker = sigma;
  model.sigma_ker = sigma;
  return kd;
}

}  // namespace mppm
