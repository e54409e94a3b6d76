#include "ticlab/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "ticlab/autodiff.hpp"
#include "ticlab/binary_io.hpp"
#include "ticlab/rng.hpp"

namespace ticlab {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("learning_rate must be finite and >= 0");
  }
  if (!(momentum >= 0.0) || momentum >= 1.0) {
    throw std::invalid_argument("momentum must lie in [0, 1)");
  }
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
    throw std::invalid_argument("weight_decay must be finite and >= 0");
  }
  if (!(decay_factor > 0.0) || decay_factor > 1.0) {
    throw std::invalid_argument("decay_factor must lie in (0, 1]");
  }
  if (!(decay_fraction >= 0.0) || decay_fraction > 1.0) {
    throw std::invalid_argument("decay_fraction must lie in [0, 1]");
  }
  if (horizon_steps < 1) {
    throw std::invalid_argument("horizon_steps must be positive");
  }
  if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  if (!(divergence_threshold > 0.0)) {
    throw std::invalid_argument("divergence_threshold must be positive");
  }
}

namespace {

// Mean loss and mean gradient of one batch in a single pass.
double batch_loss_and_grad(const NetworkSpec& spec, const ParamVector& params,
                           const LabeledDataset& ds, const int* batch, int b,
                           Vector& grad_out) {
  grad_out.setZero();
  double total = 0.0;
  for (int i = 0; i < b; ++i) {
    const int idx = batch[i];
    const ForwardTrace trace = forward_trace(spec, params, ds.x(idx));
    const int label = ds.labels[static_cast<std::size_t>(idx)];
    total += loss_from_logits(trace.logits, label);
    grad_out += grad_from_logit_seed(spec, params, trace,
                                     loss_logit_gradient(trace.logits, label));
  }
  grad_out /= b;
  return total / b;
}

double validation_or_nan(const NetworkSpec& spec, const ParamVector& params,
                         const LabeledDataset& ds) {
  if (ds.validation_indices.empty()) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  return mean_loss(spec, params, ds, Split::kValidation);
}

}  // namespace

TrainState make_train_state(const NetworkSpec& spec, const LabeledDataset& ds,
                            const TrainConfig& config) {
  config.validate();
  spec.validate();
  if (static_cast<int>(ds.train_indices.size()) < config.batch_size) {
    throw std::invalid_argument("batch size exceeds the training split");
  }
  TrainState state;
  state.params = ParamVector::initialize(spec, derive_seed(config.seed, 0));
  state.velocity = Vector::Zero(state.params.dim());
  Rng rng(derive_seed(config.seed, 1));
  state.epoch_order = ds.train_indices;
  rng.shuffle(state.epoch_order);
  state.rng_state = rng.serialize();
  return state;
}

std::vector<SnapshotRow> train_steps(const NetworkSpec& spec,
                                     const LabeledDataset& ds,
                                     const TrainConfig& config,
                                     TrainState& state, std::int64_t steps) {
  config.validate();
  if (state.params.dim() != spec.param_count() ||
      state.velocity.size() != state.params.dim()) {
    throw std::invalid_argument("train state does not match the network spec");
  }
  if (state.epoch_order.size() != ds.train_indices.size()) {
    throw std::invalid_argument("train state does not match the dataset");
  }
  std::vector<SnapshotRow> rows;
  if (state.diverged || steps <= 0) return rows;

  const int b = config.batch_size;
  const std::int64_t batches_per_epoch =
      static_cast<std::int64_t>(state.epoch_order.size()) / b;
  if (batches_per_epoch < 1) {
    throw std::invalid_argument("batch size exceeds the training split");
  }
  const std::int64_t epoch_span = batches_per_epoch * b;
  const std::int64_t decay_at = static_cast<std::int64_t>(
      config.decay_fraction * static_cast<double>(config.horizon_steps));

  Rng rng(0);
  rng.deserialize(state.rng_state);
  Vector grad(state.params.dim());
  for (std::int64_t s = 0; s < steps; ++s) {
    const double lr = state.step >= decay_at
                          ? config.learning_rate * config.decay_factor
                          : config.learning_rate;
    const double loss = batch_loss_and_grad(
        spec, state.params, ds, state.epoch_order.data() + state.epoch_pos, b,
        grad);
    if (!std::isfinite(loss) || loss > config.divergence_threshold) {
      state.diverged = true;
      state.diverged_step = state.step;
      break;
    }
    state.velocity = config.momentum * state.velocity -
                     lr * (grad + config.weight_decay * state.params.values);
    state.params.values += state.velocity;
    state.epoch_pos += b;
    state.step += 1;
    if (state.epoch_pos >= epoch_span) {
      state.epoch += 1;
      rows.push_back({state.step, state.epoch,
                      mean_loss(spec, state.params, ds, Split::kTrain),
                      validation_or_nan(spec, state.params, ds)});
      rng.shuffle(state.epoch_order);
      state.epoch_pos = 0;
    }
  }
  state.rng_state = rng.serialize();
  return rows;
}

void write_snapshot_csv(const std::string& path, const std::string& trial_id,
                        const std::vector<SnapshotRow>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << "trial_id,step,epoch,train_loss,validation_loss\n";
  char buf[64];
  for (const SnapshotRow& row : rows) {
    os << trial_id << ',' << row.step << ',' << row.epoch << ',';
    std::snprintf(buf, sizeof buf, "%.17g", row.train_loss);
    os << buf << ',';
    std::snprintf(buf, sizeof buf, "%.17g", row.validation_loss);
    os << buf << '\n';
  }
  if (!os) throw std::runtime_error("write failed for " + path);
}

void save_checkpoint(const TrainState& state, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os.write("TICT", 4);
  io::write_u32(os, 1);
  io::write_i64(os, state.step);
  io::write_i64(os, state.epoch);
  io::write_u32(os, state.diverged ? 1 : 0);
  io::write_i64(os, state.diverged_step);
  io::write_u32(os, static_cast<std::uint32_t>(state.params.dim()));
  io::write_f64s(os, state.params.values.data(), state.params.dim());
  io::write_f64s(os, state.velocity.data(), state.velocity.size());
  io::write_u32(os, static_cast<std::uint32_t>(state.epoch_order.size()));
  io::write_i32s(os, state.epoch_order.data(),
                 static_cast<std::int64_t>(state.epoch_order.size()));
  io::write_i64(os, state.epoch_pos);
  io::write_u32(os, static_cast<std::uint32_t>(state.rng_state.size()));
  io::write_bytes(os, state.rng_state.data(),
                  static_cast<std::int64_t>(state.rng_state.size()));
  if (!os) throw std::runtime_error("write failed for " + path);
}

TrainState load_checkpoint(const std::string& path, const NetworkSpec& spec) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  io::require_magic(is, "TICT", path);
  const std::uint32_t version = io::read_u32(is, "checkpoint version");
  if (version != 1) {
    throw std::runtime_error("unsupported checkpoint version in " + path);
  }
  TrainState state;
  state.step = io::read_i64(is, "step");
  state.epoch = io::read_i64(is, "epoch");
  state.diverged = io::read_u32(is, "diverged flag") != 0;
  state.diverged_step = io::read_i64(is, "diverged step");
  const std::int64_t dim = io::read_u32(is, "parameter count");
  if (dim != spec.param_count()) {
    throw std::runtime_error("checkpoint dimension does not match the spec");
  }
  state.params = ParamVector::zeros(spec);
  io::read_f64s(is, state.params.values.data(), dim, "parameters");
  state.velocity.resize(dim);
  io::read_f64s(is, state.velocity.data(), dim, "velocity");
  const std::int64_t order_len = io::read_u32(is, "epoch order length");
  state.epoch_order.resize(static_cast<std::size_t>(order_len));
  io::read_i32s(is, state.epoch_order.data(), order_len, "epoch order");
  state.epoch_pos = io::read_i64(is, "epoch position");
  const std::int64_t rng_len = io::read_u32(is, "rng state length");
  state.rng_state.resize(static_cast<std::size_t>(rng_len));
  io::read_bytes(is, state.rng_state.data(), rng_len, "rng state");
  io::require_eof(is, path);
  return state;
}

}  // namespace ticlab
