#include "ticlab/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "ticlab/rng.hpp"

namespace ticlab {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

}  // namespace

LabeledDataset make_blobs(const BlobsConfig& config) {
  if (config.num_classes < 2) {
    throw std::invalid_argument("blobs need at least two classes");
  }
  if (config.n < config.num_classes) {
    throw std::invalid_argument("blobs need at least one point per class");
  }
  if (config.input_dim < 1) {
    throw std::invalid_argument("blobs need a positive input dimension");
  }
  if (!(config.separation >= 0.0)) {
    throw std::invalid_argument("blob separation must be non-negative");
  }

  Rng mean_rng(derive_seed(config.seed, 0));
  std::vector<Vector> means;
  means.reserve(static_cast<std::size_t>(config.num_classes));
  for (int c = 0; c < config.num_classes; ++c) {
    Vector dir(config.input_dim);
    double norm = 0.0;
    do {
      for (int j = 0; j < config.input_dim; ++j) dir(j) = mean_rng.normal();
      norm = dir.norm();
    } while (norm < 1e-12);
    means.push_back(config.separation * (dir / norm));
  }

  Rng noise_rng(derive_seed(config.seed, 1));
  LabeledDataset ds;
  ds.features.resize(config.n, config.input_dim);
  ds.labels.resize(static_cast<std::size_t>(config.n));
  for (int i = 0; i < config.n; ++i) {
    const int label = i % config.num_classes;
    ds.labels[static_cast<std::size_t>(i)] = label;
    for (int j = 0; j < config.input_dim; ++j) {
      ds.features(i, j) = means[static_cast<std::size_t>(label)](j) +
                          noise_rng.normal();
    }
  }
  assign_splits(ds, config.train_frac, config.val_frac,
                derive_seed(config.seed, 2));
  return ds;
}

double generalization_gap(const NetworkSpec& spec, const ParamVector& params,
                          const LabeledDataset& ds) {
  return std::abs(mean_loss(spec, params, ds, Split::kTest) -
                  mean_loss(spec, params, ds, Split::kTrain));
}

namespace {

void check_pair(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw std::invalid_argument("correlation inputs differ in length");
  }
  if (x.size() < 2) {
    throw std::invalid_argument("correlation needs at least two points");
  }
}

}  // namespace

double pearson(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y);
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return kNan;
  return sxy / std::sqrt(sxx * syy);
}

std::vector<double> average_ranks(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    // 1-based ranks i+1 .. j+1 share their average.
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y);
  const std::vector<double> rx = average_ranks(x);
  const std::vector<double> ry = average_ranks(y);
  return pearson(rx, ry);
}

double kendall_tau(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y);
  const std::size_t n = x.size();
  std::int64_t concordant = 0, discordant = 0, ties_x = 0, ties_y = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = x[i] - x[j];
      const double dy = y[i] - y[j];
      if (dx == 0.0 && dy == 0.0) {
        ++ties_x;
        ++ties_y;
      } else if (dx == 0.0) {
        ++ties_x;
      } else if (dy == 0.0) {
        ++ties_y;
      } else if ((dx > 0.0) == (dy > 0.0)) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  }
  const double n0 = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
  const double denom = std::sqrt((n0 - static_cast<double>(ties_x)) *
                                 (n0 - static_cast<double>(ties_y)));
  if (denom == 0.0) return kNan;
  return static_cast<double>(concordant - discordant) / denom;
}

TrainConfig sample_hyperparams(const HpSpace& space, std::uint64_t seed,
                               std::int64_t horizon_steps, int batch_size) {
  Rng rng(derive_seed(seed, 2));
  TrainConfig config;
  config.learning_rate = rng.log_uniform(space.lr_lo, space.lr_hi);
  config.weight_decay = rng.log_uniform(space.wd_lo, space.wd_hi);
  config.momentum = rng.uniform(space.momentum_lo, space.momentum_hi);
  config.decay_factor = rng.uniform(space.decay_factor_lo, space.decay_factor_hi);
  config.decay_fraction =
      rng.uniform(space.decay_fraction_lo, space.decay_fraction_hi);
  config.horizon_steps = horizon_steps;
  config.batch_size = batch_size;
  config.seed = seed;
  config.validate();
  return config;
}

SweepResult run_sweep(const NetworkSpec& spec, const LabeledDataset& ds,
                      const SweepSettings& settings) {
  spec.validate();
  ds.validate(spec.num_classes);
  if (settings.trials < 1) {
    throw std::invalid_argument("sweep needs at least one trial");
  }
  if (ds.train_indices.empty() || ds.validation_indices.empty() ||
      ds.test_indices.empty()) {
    throw std::invalid_argument("sweep needs all three dataset splits");
  }

  SweepResult result;
  for (int t = 0; t < settings.trials; ++t) {
    const std::uint64_t trial_seed = derive_seed(settings.seed, t);
    TrialResult row;
    row.trial = t;
    row.config = sample_hyperparams(settings.space, trial_seed, settings.steps,
                                    settings.batch_size);
    TrainState state = make_train_state(spec, ds, row.config);
    train_steps(spec, ds, row.config, state, settings.steps);
    row.diverged = state.diverged;
    row.steps_run = state.step;
    if (!state.diverged) {
      row.train_loss = mean_loss(spec, state.params, ds, Split::kTrain);
      row.validation_loss = mean_loss(spec, state.params, ds, Split::kValidation);
      row.test_loss = mean_loss(spec, state.params, ds, Split::kTest);
      row.gap = generalization_gap(spec, state.params, ds);
      TicConfig tic = settings.tic;
      tic.seed = derive_seed(trial_seed, 3);
      row.tic = compute_tic(spec, state.params, ds, tic);
    } else {
      ++result.diverged_count;
      row.train_loss = row.validation_loss = row.test_loss = row.gap = kNan;
    }
    result.trials.push_back(std::move(row));
  }

  std::vector<double> penalties, gaps, scores, tests;
  for (const TrialResult& row : result.trials) {
    if (row.diverged) continue;
    penalties.push_back(row.tic->penalty(row.tic->score_fidelity) /
                        static_cast<double>(row.tic->n_train));
    gaps.push_back(row.gap);
    scores.push_back(row.tic->tic_score);
    tests.push_back(row.test_loss);
  }
  if (penalties.size() >= 2) {
    result.pearson_penalty_gap = pearson(penalties, gaps);
    result.spearman_penalty_gap = spearman(penalties, gaps);
    result.kendall_penalty_gap = kendall_tau(penalties, gaps);
    result.spearman_score_test = spearman(scores, tests);
  } else {
    result.pearson_penalty_gap = result.spearman_penalty_gap =
        result.kendall_penalty_gap = result.spearman_score_test = kNan;
  }
  return result;
}

std::string sweep_result_to_json(const SweepResult& result) {
  nlohmann::json j;
  j["diverged_count"] = result.diverged_count;
  nlohmann::json corr;
  const auto put_finite = [](nlohmann::json& obj, const char* key, double v) {
    if (std::isfinite(v)) obj[key] = v;
  };
  put_finite(corr, "pearson_penalty_gap", result.pearson_penalty_gap);
  put_finite(corr, "spearman_penalty_gap", result.spearman_penalty_gap);
  put_finite(corr, "kendall_penalty_gap", result.kendall_penalty_gap);
  put_finite(corr, "spearman_score_test", result.spearman_score_test);
  j["correlations"] = corr;

  nlohmann::json rows = nlohmann::json::array();
  for (const TrialResult& row : result.trials) {
    nlohmann::json r;
    r["trial"] = row.trial;
    r["seed"] = row.config.seed;
    r["learning_rate"] = row.config.learning_rate;
    r["weight_decay"] = row.config.weight_decay;
    r["momentum"] = row.config.momentum;
    r["decay_factor"] = row.config.decay_factor;
    r["decay_fraction"] = row.config.decay_fraction;
    r["diverged"] = row.diverged;
    r["steps_run"] = row.steps_run;
    if (!row.diverged) {
      r["train_loss"] = row.train_loss;
      r["validation_loss"] = row.validation_loss;
      r["test_loss"] = row.test_loss;
      r["gap"] = row.gap;
      const TicReport& tic = *row.tic;
      r["tic_score"] = tic.tic_score;
      r["tic_penalty"] = tic.penalty(tic.score_fidelity);
      r["tic_trace_h"] = tic.trace_h;
      r["tic_trace_c"] = tic.trace_c;
      r["tic_damping"] = tic.damping;
      r["tic_bias_lower_bound"] = tic.bias_lower_bound;
      if (tic.bias_exact) r["tic_bias_exact"] = *tic.bias_exact;
      if (tic.bias_block) r["tic_bias_block"] = *tic.bias_block;
      if (tic.bias_diag) r["tic_bias_diag"] = *tic.bias_diag;
    }
    rows.push_back(std::move(r));
  }
  j["trials"] = std::move(rows);
  return j.dump(2) + "\n";
}

double loocv_estimate(const NetworkSpec& spec, const LabeledDataset& ds,
                      const TrainConfig& config, std::int64_t steps,
                      int max_n) {
  config.validate();
  const std::size_t n = ds.train_indices.size();
  if (n < 2) throw std::invalid_argument("leave-one-out needs two train points");
  if (n > static_cast<std::size_t>(max_n)) {
    throw std::invalid_argument(
        "train split too large for leave-one-out; raise max_n deliberately");
  }
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    LabeledDataset fold = ds;
    fold.train_indices.erase(fold.train_indices.begin() +
                             static_cast<std::ptrdiff_t>(k));
    TrainState state = make_train_state(spec, fold, config);
    train_steps(spec, fold, config, state, steps);
    const int held = ds.train_indices[k];
    total += loss(spec, state.params, ds.x(held),
                  ds.labels[static_cast<std::size_t>(held)]);
  }
  return total / static_cast<double>(n);
}

}  // namespace ticlab
