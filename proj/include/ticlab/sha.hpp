#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ticlab/experiment.hpp"

namespace ticlab {

// Intermediate metric that ranks trials at each rung (lower is better).
enum class ShaMetric { kValidationLoss, kTicScore };

const char* to_string(ShaMetric m);
ShaMetric sha_metric_from_string(const std::string& s);

// Successive-halving schedule. Rung r trains every surviving trial up to a
// cumulative budget of min_resource * reduction_factor^r steps (resuming
// from the trial's saved state), ranks the rung by the metric, and advances
// the top ceil(survivors / reduction_factor). Divergence ranks below every
// finite metric, earlier divergence below later; remaining ties break
// toward the smaller trial id.
struct ShaConfig {
  int num_trials = 9;
  int reduction_factor = 3;
  std::int64_t min_resource = 50;
  int num_rungs = 4;
  int batch_size = 16;
  ShaMetric metric = ShaMetric::kTicScore;
  // Criterion settings for the TicScore metric. The default uses the cheap
  // trace-ratio fidelity with matrices assembled on the validation split, so
  // a rung evaluation never builds anything larger than a diagonal.
  TicConfig tic;

  ShaConfig() { tic.matrix_split = Split::kValidation; }

  // Cumulative step budget of a rung.
  std::int64_t resource_at(int rung) const;
  void validate() const;
};

struct RungMetric {
  int rung = 0;
  std::int64_t resource = 0;
  double value = 0.0;  // NaN for a diverged trial
};

enum class TrialStatus { kPruned, kCompleted, kDiverged };

const char* to_string(TrialStatus s);

struct TrialRecord {
  int trial_id = 0;
  TrainConfig hyperparameters;
  std::vector<RungMetric> rung_metrics;  // one entry per rung reached
  TrialStatus status = TrialStatus::kPruned;
  int pruned_rung = -1;  // set only when status == kPruned
  // Validation loss after the full budget; present only for trials that
  // reached the final rung without diverging.
  std::optional<double> final_validation_loss;
  std::int64_t steps_consumed = 0;
};

struct ShaResult {
  std::vector<TrialRecord> records;  // indexed by trial id
  int winner = -1;                   // rank-1 trial of the final rung
  std::int64_t total_steps = 0;      // applied optimizer steps, all trials
  // One JSON object per line: {"action", "metric", "resource", "rung",
  // "trial_id"}, emitted in rank order within each rung.
  std::string event_log;
  // Final optimizer states, indexed by trial id (pruned trials keep the
  // state they were cut with).
  std::vector<TrainState> states;
};

// Metric hook for custom ranking schemes: called for every survivor at every
// rung after it has trained to the rung budget. Divergence handling stays
// with the scheduler, so the hook's value is ignored for diverged trials.
using ShaMetricFn =
    std::function<double(int trial_id, const TrainState& state)>;

// Trial t draws its hyperparameters and training streams from
// derive_seed(seed, t); the TicScore metric additionally derives
// derive_seed(trial_seed, 3) exactly like the sweep harness, so a trial's
// trajectory is identical across schedulers and arms sharing the seed.
// Throws std::runtime_error when every trial diverges at the first rung.
ShaResult run_sha(const NetworkSpec& spec, const LabeledDataset& ds,
                  const HpSpace& space, const ShaConfig& config,
                  std::uint64_t seed);

ShaResult run_sha_with_metric(const NetworkSpec& spec,
                              const LabeledDataset& ds, const HpSpace& space,
                              const ShaConfig& config, std::uint64_t seed,
                              const ShaMetricFn& metric);

// Pure rung-ranking step, exposed for property testing: orders survivors by
// (finite metric ascending, then divergence recency, then trial id) and
// returns the advancing prefix of size ceil(n / reduction_factor), in rank
// order.
struct RungEntry {
  int trial_id = 0;
  double metric = 0.0;
  bool diverged = false;
  std::int64_t diverged_step = 0;
};
std::vector<int> rank_rung(std::vector<RungEntry> entries,
                           int reduction_factor);

std::string sha_result_to_json(const ShaResult& result);

// One matched repeat: the same trial configurations trained under both
// metrics, an oracle control arm that ranks by the known final validation
// loss, and a no-pruning baseline that defines the true ranking.
struct RepeatOutcome {
  std::uint64_t seed = 0;
  int true_best = -1;
  double true_best_loss = 0.0;
  int validation_winner = -1;
  int validation_rank = 0;  // 1-based rank of the winner in the true order
  int tic_winner = -1;
  int tic_rank = 0;
  int oracle_winner = -1;
  int oracle_rank = 0;
};

struct PruningComparison {
  std::vector<RepeatOutcome> repeats;
  // Histogram over true ranks, index r-1, one bucket per trial.
  std::vector<int> validation_rank_histogram;
  std::vector<int> tic_rank_histogram;
  std::vector<int> oracle_rank_histogram;
};

// Repeat k derives every arm from derive_seed(seed, k), so all four arms of
// a repeat see identical trial hyperparameters and training streams.
PruningComparison compare_pruning(const NetworkSpec& spec,
                                  const LabeledDataset& ds,
                                  const HpSpace& space,
                                  const ShaConfig& config, int num_repeats,
                                  std::uint64_t seed);

std::string pruning_comparison_to_json(const PruningComparison& comparison);

}  // namespace ticlab
