#pragma once

// End-to-end steps shared by the command-line tool and the acceptance runner:
// pretraining, model setup, training with logging, hit rates and delay sweeps.

#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "avan/dataset.hpp"
#include "avan/evaluation.hpp"
#include "avan/inference.hpp"
#include "avan/relational.hpp"

namespace avan {

// Seed streams derived from RunConfig::seed.
inline constexpr std::uint64_t kSeedAutoencoder = 11;
inline constexpr std::uint64_t kSeedModelInit = 12;
inline constexpr std::uint64_t kSeedBatches = 13;

inline AdamConfig adam_config(const RunConfig& c) { return {c.lr, c.beta1, c.beta2, c.adam_eps}; }

struct PretrainResult {
  Autoencoder<float> ae;
  PretrainLog log;
};

/// Autoencoder on the training portion of every subject's volumes.
inline PretrainResult run_pretrain(const Dataset& ds, const RunConfig& cfg) {
  if (std::size_t(cfg.gen_voxels) != ds.manifest.voxels)
    throw ValidationError("dataset has V=" + std::to_string(ds.manifest.voxels) + " but config gen.voxels=" +
                          std::to_string(cfg.gen_voxels));
  Tensor<float> data = training_volumes(ds, cfg);
  Rng rng(derive_seed(cfg.seed, kSeedAutoencoder));
  AdamConfig a = adam_config(cfg);
  a.lr = cfg.ae_lr;
  PretrainResult r;
  const float l1 = float(ObjectiveOptions::effective_l1(cfg, ds.manifest.voxels));
  r.ae = pretrain_autoencoder<float>(data, std::size_t(cfg.feature_dim), std::size_t(cfg.ae_epochs), l1, a, rng, &r.log);
  return r;
}

/// Fresh model; the fMRI encoder starts from the autoencoder when given.
inline TrainState<float> init_training(const RunConfig& cfg, std::size_t voxels, const Autoencoder<float>* ae) {
  TrainState<float> st;
  Rng init(derive_seed(cfg.seed, kSeedModelInit));
  st.model = Model<float>(ModelSpec::from_config(cfg, voxels), init);
  if (ae) st.model.fmri = init_from_autoencoder(*ae, st.model.spec.dim, voxels);
  st.adam.config = adam_config(cfg);
  st.rng = Rng(derive_seed(cfg.seed, kSeedBatches));
  return st;
}

/// Trains for `steps` steps, writing CSV log rows (with header) to `log`.
inline void run_training(TrainState<float>& st, const std::vector<PairedSample>& train, const RunConfig& cfg,
                         std::int64_t steps, std::ostream* log) {
  const auto opt = ObjectiveOptions::from_config(cfg, st.model.spec.voxels);
  if (log) *log << kTrainLogHeader << "\n";
  train_steps<float>(st, train, steps, std::size_t(cfg.batch), opt, cfg.log_every, [&](const StepMetrics& m) {
    if (log) *log << train_log_row(m) << "\n" << std::flush;
  });
}

/// Group hit rate: gaze against the upsampled mask-network output.
inline HitRate group_hit_rate(Model<float>& m, const std::vector<PairedSample>& samples, double threshold) {
  return hit_rate(gaze_points(samples), group_masks(m, samples), threshold);
}

/// Relational maps [h,w] of paired samples against their own fMRI.
inline std::vector<Tensor<float>> sample_relational_maps(Model<float>& m, const std::vector<PairedSample>& samples,
                                                         std::size_t chunk = 64) {
  std::vector<Tensor<float>> out;
  for (std::size_t b = 0; b < samples.size(); b += chunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = b; i < std::min(samples.size(), b + chunk); ++i) idx.push_back(i);
    auto batch = make_batch<float>(samples, idx);
    Tensor<float> grid = feature_grid(m, batch.images);
    const std::size_t C = grid.dim(1), h = grid.dim(2), w = grid.dim(3);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      Tensor<float> g(Shape{C, h, w});
      std::copy_n(grid.data() + k * C * h * w, C * h * w, g.data());
      out.push_back(relational_map_from_codes(m, window_codes(m, g), h, w, samples[idx[k]].fmri));
    }
  }
  return out;
}

/// Individual hit rate: gaze against the min-max normalized rectified map.
inline HitRate individual_hit_rate(Model<float>& m, const std::vector<PairedSample>& samples, double threshold) {
  auto maps = sample_relational_maps(m, samples);
  std::vector<Tensor<float>> masks;
  masks.reserve(maps.size());
  for (std::size_t i = 0; i < maps.size(); ++i)
    masks.push_back(individual_mask(maps[i], samples[i].image.height, samples[i].image.width, "minmax"));
  return hit_rate(gaze_points(samples), masks, threshold);
}

/// Trains a fresh model per delay with cfg.sweep_steps steps and scores the
/// test split. Progress lines go to `progress` when given.
inline std::vector<SweepRow> delay_sweep(const Dataset& ds, const std::vector<double>& delays, const RunConfig& cfg,
                                         const Autoencoder<float>* ae, std::ostream* progress = nullptr) {
  std::vector<SweepRow> rows;
  for (const double d : delays) {
    auto pairs = load_pairs(ds, cfg, d);
    auto st = init_training(cfg, ds.manifest.voxels, ae);
    run_training(st, pairs.train, cfg, cfg.sweep_steps, nullptr);
    const auto opt = ObjectiveOptions::from_config(cfg, ds.manifest.voxels);
    SweepRow r;
    r.delay_s = d;
    const auto h = group_hit_rate(st.model, pairs.test, cfg.threshold);
    r.hit_rate = h.rate;
    r.chance = h.chance;
    r.test_r_af = split_stats(st.model, pairs.test, opt).r_af;
    r.train_count = pairs.train.size();
    r.test_count = pairs.test.size();
    if (progress) *progress << "delay " << d << " s: hit rate " << r.hit_rate << " (chance " << r.chance << ")\n";
    rows.push_back(r);
  }
  return rows;
}

}  // namespace avan
