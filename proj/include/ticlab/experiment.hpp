#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ticlab/estimators.hpp"
#include "ticlab/trainer.hpp"

namespace ticlab {

// Synthetic Gaussian blobs: one unit-norm mean direction per class, scaled
// by `separation`, unit isotropic noise, labels assigned round-robin before
// splitting. Streams: class means from derive_seed(seed, 0), noise from
// derive_seed(seed, 1), the split shuffle from derive_seed(seed, 2).
struct BlobsConfig {
  int n = 300;
  int input_dim = 10;
  int num_classes = 3;
  double separation = 3.0;
  double train_frac = 0.7;
  double val_frac = 0.15;
  std::uint64_t seed = 0;
};

LabeledDataset make_blobs(const BlobsConfig& config);

// |mean test loss - mean train loss|.
double generalization_gap(const NetworkSpec& spec, const ParamVector& params,
                          const LabeledDataset& ds);

// Correlation helpers. All return NaN when a correlation is undefined
// (constant input, or no untied pairs); sizes must match with at least two
// points. Ties get average ranks; the tau is the tie-corrected tau-b.
double pearson(std::span<const double> x, std::span<const double> y);
double spearman(std::span<const double> x, std::span<const double> y);
double kendall_tau(std::span<const double> x, std::span<const double> y);
std::vector<double> average_ranks(std::span<const double> x);

// Hyperparameter sampling box. Learning rate and weight decay are drawn
// log-uniformly, the rest uniformly.
struct HpSpace {
  double lr_lo = 1e-3;
  double lr_hi = 1.0;
  double wd_lo = 1e-6;
  double wd_hi = 1e-2;
  double momentum_lo = 0.0;
  double momentum_hi = 0.95;
  double decay_factor_lo = 0.1;
  double decay_factor_hi = 1.0;
  double decay_fraction_lo = 0.5;
  double decay_fraction_hi = 0.9;
};

// Draws one training configuration. The draw stream is derive_seed(seed, 2)
// in the fixed order lr, weight decay, momentum, decay factor, decay
// fraction; `seed` itself becomes the trial's training seed.
TrainConfig sample_hyperparams(const HpSpace& space, std::uint64_t seed,
                               std::int64_t horizon_steps, int batch_size);

struct SweepSettings {
  HpSpace space;
  int trials = 16;
  std::int64_t steps = 500;
  int batch_size = 16;
  TicConfig tic;
  std::uint64_t seed = 0;
};

struct TrialResult {
  int trial = 0;
  TrainConfig config;
  bool diverged = false;
  std::int64_t steps_run = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
  double test_loss = 0.0;
  double gap = 0.0;
  std::optional<TicReport> tic;
};

struct SweepResult {
  std::vector<TrialResult> trials;
  int diverged_count = 0;
  // Correlations across completed trials between the per-example criterion
  // penalty and the generalization gap, plus a rank correlation between the
  // full criterion score and the test loss.
  double pearson_penalty_gap = 0.0;
  double spearman_penalty_gap = 0.0;
  double kendall_penalty_gap = 0.0;
  double spearman_score_test = 0.0;
};

// Samples `trials` configurations with trial seed derive_seed(seed, t),
// trains each on the dataset's train split, and scores completed trials
// with the criterion pipeline (criterion seed derive_seed(trial_seed, 3)).
SweepResult run_sweep(const NetworkSpec& spec, const LabeledDataset& ds,
                      const SweepSettings& settings);

// JSON rendering of a sweep (one-way; non-finite correlations are omitted).
std::string sweep_result_to_json(const SweepResult& result);

// Leave-one-out cross validation of the training recipe: for every train
// index, retrains on the split without it and evaluates the held-out loss.
// Refuses splits larger than max_n because the cost is n_train full runs.
double loocv_estimate(const NetworkSpec& spec, const LabeledDataset& ds,
                      const TrainConfig& config, std::int64_t steps,
                      int max_n = 200);

}  // namespace ticlab
