#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ticlab/dataset.hpp"
#include "ticlab/network.hpp"

namespace ticlab {

// Minibatch SGD with heavy-ball momentum and decoupled-weight style L2 pull:
//   v <- momentum * v - lr_t * (grad + weight_decay * theta)
//   theta <- theta + v
// lr_t equals learning_rate until step floor(decay_fraction * horizon_steps)
// and learning_rate * decay_factor from then on. The horizon anchors the
// schedule to absolute step indices, so training in several resumed chunks
// walks the exact trajectory of one uninterrupted run.
struct TrainConfig {
  double learning_rate = 0.1;
  double momentum = 0.0;
  double weight_decay = 0.0;
  double decay_factor = 1.0;
  double decay_fraction = 1.0;
  std::int64_t horizon_steps = 1000;
  int batch_size = 32;
  std::uint64_t seed = 0;
  // A batch whose mean loss exceeds this (or is not finite) marks the run
  // diverged; the offending step is not applied.
  double divergence_threshold = 1e4;

  void validate() const;
};

// Complete optimizer state. Everything needed to continue bit-exactly lives
// here: parameters, velocity, the serialized shuffle engine, and the current
// epoch's remaining batch order.
struct TrainState {
  ParamVector params;
  Vector velocity;
  std::string rng_state;
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  std::vector<int> epoch_order;
  std::int64_t epoch_pos = 0;
  bool diverged = false;
  std::int64_t diverged_step = -1;
};

// Fresh state: parameters from derive_seed(config.seed, 0), shuffle engine
// from derive_seed(config.seed, 1), first epoch order already shuffled.
TrainState make_train_state(const NetworkSpec& spec, const LabeledDataset& ds,
                            const TrainConfig& config);

struct SnapshotRow {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  double train_loss = 0.0;
  // NaN when the dataset has no validation split.
  double validation_loss = 0.0;
};

// Runs up to `steps` optimizer steps, stopping early on divergence. An epoch
// is floor(n_train / batch_size) disjoint batches of a fresh shuffle; the
// leftover examples sit out that epoch. Returns one row per epoch completed
// during this call, evaluated at the post-step parameters.
std::vector<SnapshotRow> train_steps(const NetworkSpec& spec,
                                     const LabeledDataset& ds,
                                     const TrainConfig& config,
                                     TrainState& state, std::int64_t steps);

// Snapshot CSV: header plus one row per entry, floats printed with %.17g.
void write_snapshot_csv(const std::string& path, const std::string& trial_id,
                        const std::vector<SnapshotRow>& rows);

void save_checkpoint(const TrainState& state, const std::string& path);
TrainState load_checkpoint(const std::string& path, const NetworkSpec& spec);

}  // namespace ticlab
