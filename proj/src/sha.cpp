#include "ticlab/sha.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "ticlab/rng.hpp"

namespace ticlab {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

// Full rung ordering: finite metrics ascending, then any non-finite metric
// on a live trial, then diverged trials with earlier divergence last; every
// tie breaks toward the smaller trial id.
std::vector<RungEntry> sort_rung(std::vector<RungEntry> entries) {
  const auto key = [](const RungEntry& e) {
    int cls = e.diverged ? 2 : (std::isfinite(e.metric) ? 0 : 1);
    double value = 0.0;
    if (cls == 0) value = e.metric;
    if (cls == 2) value = -static_cast<double>(e.diverged_step);
    return std::make_tuple(cls, value, e.trial_id);
  };
  std::sort(entries.begin(), entries.end(),
            [&](const RungEntry& a, const RungEntry& b) {
              return key(a) < key(b);
            });
  return entries;
}

nlohmann::json event_json(int rung, int trial_id, std::int64_t resource,
                          double metric, const char* action) {
  nlohmann::json j;
  j["rung"] = rung;
  j["trial_id"] = trial_id;
  j["resource"] = resource;
  if (std::isfinite(metric)) {
    j["metric"] = metric;
  } else {
    j["metric"] = nullptr;
  }
  j["action"] = action;
  return j;
}

}  // namespace

const char* to_string(ShaMetric m) {
  switch (m) {
    case ShaMetric::kValidationLoss:
      return "validation_loss";
    case ShaMetric::kTicScore:
      return "tic_score";
  }
  throw std::logic_error("unreachable");
}

ShaMetric sha_metric_from_string(const std::string& s) {
  if (s == "validation_loss") return ShaMetric::kValidationLoss;
  if (s == "tic_score") return ShaMetric::kTicScore;
  throw std::invalid_argument("unknown pruning metric: " + s);
}

const char* to_string(TrialStatus s) {
  switch (s) {
    case TrialStatus::kPruned:
      return "pruned";
    case TrialStatus::kCompleted:
      return "completed";
    case TrialStatus::kDiverged:
      return "diverged";
  }
  throw std::logic_error("unreachable");
}

std::int64_t ShaConfig::resource_at(int rung) const {
  std::int64_t r = min_resource;
  for (int i = 0; i < rung; ++i) r *= reduction_factor;
  return r;
}

void ShaConfig::validate() const {
  if (num_trials < 2) {
    throw std::invalid_argument("pruning needs at least two trials");
  }
  if (reduction_factor < 2) {
    throw std::invalid_argument("reduction factor must be at least 2");
  }
  if (min_resource < 1) {
    throw std::invalid_argument("min_resource must be positive");
  }
  if (num_rungs < 1) {
    throw std::invalid_argument("need at least one rung");
  }
  if (batch_size < 1) {
    throw std::invalid_argument("batch size must be positive");
  }
  // Keep the cumulative budget in a comfortably safe integer range.
  double top = static_cast<double>(min_resource);
  double needed = 1.0;
  for (int i = 0; i + 1 < num_rungs; ++i) {
    top *= reduction_factor;
    needed *= reduction_factor;
  }
  if (top > 1e12) {
    throw std::invalid_argument("rung budget overflows a sane step count");
  }
  if (static_cast<double>(num_trials) < needed) {
    throw std::invalid_argument(
        "num_trials must be at least reduction_factor^(num_rungs-1)");
  }
}

std::vector<int> rank_rung(std::vector<RungEntry> entries,
                           int reduction_factor) {
  if (reduction_factor < 2) {
    throw std::invalid_argument("reduction factor must be at least 2");
  }
  const std::vector<RungEntry> order = sort_rung(std::move(entries));
  const std::int64_t n = static_cast<std::int64_t>(order.size());
  const std::int64_t keep = (n + reduction_factor - 1) / reduction_factor;
  std::vector<int> advancing;
  advancing.reserve(keep);
  for (std::int64_t i = 0; i < keep; ++i) {
    advancing.push_back(order[i].trial_id);
  }
  return advancing;
}

ShaResult run_sha_with_metric(const NetworkSpec& spec,
                              const LabeledDataset& ds, const HpSpace& space,
                              const ShaConfig& config, std::uint64_t seed,
                              const ShaMetricFn& metric) {
  spec.validate();
  ds.validate(spec.num_classes);
  config.validate();
  if (!metric) {
    throw std::invalid_argument("pruning metric hook is empty");
  }
  if (ds.train_indices.empty() || ds.validation_indices.empty()) {
    throw std::invalid_argument("pruning needs train and validation splits");
  }

  const std::int64_t horizon = config.resource_at(config.num_rungs - 1);
  ShaResult result;
  result.records.resize(config.num_trials);
  result.states.reserve(config.num_trials);
  std::vector<TrainConfig> configs(config.num_trials);
  std::vector<int> survivors;
  for (int t = 0; t < config.num_trials; ++t) {
    configs[t] = sample_hyperparams(space, derive_seed(seed, t), horizon,
                                    config.batch_size);
    result.records[t].trial_id = t;
    result.records[t].hyperparameters = configs[t];
    result.states.push_back(make_train_state(spec, ds, configs[t]));
    survivors.push_back(t);
  }

  std::string log;
  for (int r = 0; r < config.num_rungs; ++r) {
    const std::int64_t resource = config.resource_at(r);
    std::vector<RungEntry> entries;
    entries.reserve(survivors.size());
    for (int id : survivors) {
      TrainState& state = result.states[id];
      const std::int64_t before = state.step;
      train_steps(spec, ds, configs[id], state, resource - state.step);
      result.records[id].steps_consumed += state.step - before;
      result.total_steps += state.step - before;
      const double value = state.diverged ? kNan : metric(id, state);
      result.records[id].rung_metrics.push_back({r, resource, value});
      entries.push_back({id, value, state.diverged, state.diverged_step});
    }
    if (r == 0 && std::all_of(entries.begin(), entries.end(),
                              [](const RungEntry& e) { return e.diverged; })) {
      throw std::runtime_error("every trial diverged at the first rung");
    }

    const std::vector<RungEntry> order = sort_rung(entries);
    const std::int64_t keep =
        (static_cast<std::int64_t>(order.size()) + config.reduction_factor -
         1) /
        config.reduction_factor;
    const bool last = r == config.num_rungs - 1;
    survivors.clear();
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(order.size());
         ++i) {
      const RungEntry& e = order[i];
      const bool advance = i < keep;
      log += event_json(r, e.trial_id, resource, e.metric,
                        advance ? "advance" : "prune")
                 .dump() +
             "\n";
      TrialRecord& rec = result.records[e.trial_id];
      if (e.diverged) {
        rec.status = TrialStatus::kDiverged;
      } else if (!advance) {
        rec.status = TrialStatus::kPruned;
        rec.pruned_rung = r;
      } else if (last) {
        rec.status = TrialStatus::kCompleted;
      }
      if (last && !e.diverged) {
        rec.final_validation_loss =
            mean_loss(spec, result.states[e.trial_id].params, ds,
                      Split::kValidation);
      }
      if (advance && !last) survivors.push_back(e.trial_id);
    }
    std::sort(survivors.begin(), survivors.end());
    if (last) result.winner = order.front().trial_id;
  }
  result.event_log = std::move(log);
  return result;
}

ShaResult run_sha(const NetworkSpec& spec, const LabeledDataset& ds,
                  const HpSpace& space, const ShaConfig& config,
                  std::uint64_t seed) {
  ShaMetricFn metric;
  if (config.metric == ShaMetric::kValidationLoss) {
    metric = [&spec, &ds](int, const TrainState& state) {
      return mean_loss(spec, state.params, ds, Split::kValidation);
    };
  } else {
    metric = [&spec, &ds, &config, seed](int trial_id,
                                         const TrainState& state) {
      TicConfig tic = config.tic;
      tic.seed = derive_seed(derive_seed(seed, trial_id), 3);
      return compute_tic(spec, state.params, ds, tic).tic_score;
    };
  }
  return run_sha_with_metric(spec, ds, space, config, seed, metric);
}

std::string sha_result_to_json(const ShaResult& result) {
  nlohmann::json j;
  j["winner"] = result.winner;
  j["total_steps"] = result.total_steps;
  nlohmann::json trials = nlohmann::json::array();
  for (const TrialRecord& rec : result.records) {
    nlohmann::json t;
    t["trial_id"] = rec.trial_id;
    t["status"] = to_string(rec.status);
    if (rec.status == TrialStatus::kPruned) {
      t["pruned_rung"] = rec.pruned_rung;
    } else {
      t["pruned_rung"] = nullptr;
    }
    t["seed"] = rec.hyperparameters.seed;
    t["learning_rate"] = rec.hyperparameters.learning_rate;
    t["weight_decay"] = rec.hyperparameters.weight_decay;
    t["momentum"] = rec.hyperparameters.momentum;
    t["decay_factor"] = rec.hyperparameters.decay_factor;
    t["decay_fraction"] = rec.hyperparameters.decay_fraction;
    t["steps_consumed"] = rec.steps_consumed;
    if (rec.final_validation_loss) {
      t["final_validation_loss"] = *rec.final_validation_loss;
    } else {
      t["final_validation_loss"] = nullptr;
    }
    nlohmann::json rungs = nlohmann::json::array();
    for (const RungMetric& m : rec.rung_metrics) {
      nlohmann::json e;
      e["rung"] = m.rung;
      e["resource"] = m.resource;
      if (std::isfinite(m.value)) {
        e["metric"] = m.value;
      } else {
        e["metric"] = nullptr;
      }
      rungs.push_back(e);
    }
    t["rung_metrics"] = rungs;
    trials.push_back(t);
  }
  j["trials"] = trials;
  return j.dump(2) + "\n";
}

PruningComparison compare_pruning(const NetworkSpec& spec,
                                  const LabeledDataset& ds,
                                  const HpSpace& space,
                                  const ShaConfig& config, int num_repeats,
                                  std::uint64_t seed) {
  if (num_repeats < 1) {
    throw std::invalid_argument("need at least one repeat");
  }
  config.validate();

  PruningComparison out;
  out.validation_rank_histogram.assign(config.num_trials, 0);
  out.tic_rank_histogram.assign(config.num_trials, 0);
  out.oracle_rank_histogram.assign(config.num_trials, 0);
  const std::int64_t horizon = config.resource_at(config.num_rungs - 1);

  for (int k = 0; k < num_repeats; ++k) {
    const std::uint64_t repeat_seed = derive_seed(seed, k);

    // No-pruning baseline: every trial trains the full budget; its final
    // validation losses define the true ranking of this repeat's configs.
    std::vector<RungEntry> finals(config.num_trials);
    std::vector<double> final_loss(config.num_trials, kNan);
    for (int t = 0; t < config.num_trials; ++t) {
      TrainConfig cfg = sample_hyperparams(space, derive_seed(repeat_seed, t),
                                           horizon, config.batch_size);
      TrainState state = make_train_state(spec, ds, cfg);
      train_steps(spec, ds, cfg, state, horizon);
      if (!state.diverged) {
        final_loss[t] = mean_loss(spec, state.params, ds, Split::kValidation);
      }
      finals[t] = {t, final_loss[t], state.diverged, state.diverged_step};
    }
    const std::vector<RungEntry> true_order = sort_rung(finals);
    std::vector<int> true_rank(config.num_trials, 0);
    for (int i = 0; i < config.num_trials; ++i) {
      true_rank[true_order[i].trial_id] = i + 1;
    }

    ShaConfig arm = config;
    arm.metric = ShaMetric::kValidationLoss;
    const ShaResult by_validation = run_sha(spec, ds, space, arm, repeat_seed);
    arm.metric = ShaMetric::kTicScore;
    const ShaResult by_tic = run_sha(spec, ds, space, arm, repeat_seed);
    const ShaResult by_oracle = run_sha_with_metric(
        spec, ds, space, config, repeat_seed,
        [&final_loss](int trial_id, const TrainState&) {
          return final_loss[trial_id];
        });

    RepeatOutcome row;
    row.seed = repeat_seed;
    row.true_best = true_order.front().trial_id;
    row.true_best_loss = final_loss[row.true_best];
    row.validation_winner = by_validation.winner;
    row.validation_rank = true_rank[by_validation.winner];
    row.tic_winner = by_tic.winner;
    row.tic_rank = true_rank[by_tic.winner];
    row.oracle_winner = by_oracle.winner;
    row.oracle_rank = true_rank[by_oracle.winner];
    out.repeats.push_back(row);
    out.validation_rank_histogram[row.validation_rank - 1] += 1;
    out.tic_rank_histogram[row.tic_rank - 1] += 1;
    out.oracle_rank_histogram[row.oracle_rank - 1] += 1;
  }
  return out;
}

std::string pruning_comparison_to_json(const PruningComparison& comparison) {
  nlohmann::json j;
  j["num_repeats"] = comparison.repeats.size();
  nlohmann::json repeats = nlohmann::json::array();
  for (const RepeatOutcome& row : comparison.repeats) {
    nlohmann::json r;
    r["seed"] = row.seed;
    r["true_best"] = row.true_best;
    if (std::isfinite(row.true_best_loss)) {
      r["true_best_loss"] = row.true_best_loss;
    } else {
      r["true_best_loss"] = nullptr;
    }
    r["validation_winner"] = row.validation_winner;
    r["validation_rank"] = row.validation_rank;
    r["tic_winner"] = row.tic_winner;
    r["tic_rank"] = row.tic_rank;
    r["oracle_winner"] = row.oracle_winner;
    r["oracle_rank"] = row.oracle_rank;
    repeats.push_back(r);
  }
  j["repeats"] = repeats;
  j["validation_rank_histogram"] = comparison.validation_rank_histogram;
  j["tic_rank_histogram"] = comparison.tic_rank_histogram;
  j["oracle_rank_histogram"] = comparison.oracle_rank_histogram;
  return j.dump(2) + "\n";
}

}  // namespace ticlab
