#include "ticlab/cli.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ticlab/binary_io.hpp"
#include "ticlab/experiment.hpp"
#include "ticlab/sha.hpp"

namespace ticlab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

[[noreturn]] void config_fail(const std::string& message) {
  throw CliError(2, "config error: " + message);
}

template <typename T>
T as_typed(const json& j, const std::string& path) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    config_fail("field \"" + path + "\" has the wrong type");
  }
}

std::string join_path(const std::string& parent, const char* key) {
  return parent.empty() ? std::string(key) : parent + "." + key;
}

template <typename T>
T require_field(const json& j, const std::string& parent, const char* key) {
  if (!j.contains(key)) {
    config_fail("missing field \"" + join_path(parent, key) + "\"");
  }
  return as_typed<T>(j.at(key), join_path(parent, key));
}

template <typename T>
T field_or(const json& j, const std::string& parent, const char* key,
           T fallback) {
  if (!j.contains(key)) return fallback;
  return as_typed<T>(j.at(key), join_path(parent, key));
}

const json& block(const json& cfg, const char* key) {
  if (!cfg.contains(key)) {
    config_fail("missing field \"" + std::string(key) + "\"");
  }
  if (!cfg.at(key).is_object()) {
    config_fail("field \"" + std::string(key) + "\" must be an object");
  }
  return cfg.at(key);
}

NetworkSpec parse_network(const json& j, json& echo) {
  NetworkSpec spec;
  spec.input_dim = require_field<int>(j, "network", "input_dim");
  spec.num_classes = require_field<int>(j, "network", "num_classes");
  spec.hidden_widths =
      field_or<std::vector<int>>(j, "network", "hidden_widths", {});
  spec.activation = activation_from_string(
      field_or<std::string>(j, "network", "activation", "relu"));
  spec.skip_connections =
      field_or<bool>(j, "network", "skip_connections", false);
  spec.validate();
  echo["input_dim"] = spec.input_dim;
  echo["num_classes"] = spec.num_classes;
  echo["hidden_widths"] = spec.hidden_widths;
  echo["activation"] = to_string(spec.activation);
  echo["skip_connections"] = spec.skip_connections;
  return spec;
}

LabeledDataset parse_dataset(const json& j, json& echo) {
  const std::string source = require_field<std::string>(j, "dataset", "source");
  echo["source"] = source;
  if (source == "blobs") {
    BlobsConfig blobs;
    blobs.n = field_or<int>(j, "dataset", "n", blobs.n);
    blobs.input_dim = field_or<int>(j, "dataset", "input_dim", blobs.input_dim);
    blobs.num_classes =
        field_or<int>(j, "dataset", "num_classes", blobs.num_classes);
    blobs.separation =
        field_or<double>(j, "dataset", "separation", blobs.separation);
    blobs.train_frac =
        field_or<double>(j, "dataset", "train_frac", blobs.train_frac);
    blobs.val_frac = field_or<double>(j, "dataset", "val_frac", blobs.val_frac);
    blobs.seed = field_or<std::uint64_t>(j, "dataset", "seed", blobs.seed);
    echo["n"] = blobs.n;
    echo["input_dim"] = blobs.input_dim;
    echo["num_classes"] = blobs.num_classes;
    echo["separation"] = blobs.separation;
    echo["train_frac"] = blobs.train_frac;
    echo["val_frac"] = blobs.val_frac;
    echo["seed"] = blobs.seed;
    return make_blobs(blobs);
  }
  if (source == "idx") {
    const std::string images = require_field<std::string>(j, "dataset", "images");
    const std::string labels = require_field<std::string>(j, "dataset", "labels");
    if (!fs::exists(images)) config_fail("dataset file not found: " + images);
    if (!fs::exists(labels)) config_fail("dataset file not found: " + labels);
    const int pool = field_or<int>(j, "dataset", "pool_factor", 1);
    const double train_frac = field_or<double>(j, "dataset", "train_frac", 0.7);
    const double val_frac = field_or<double>(j, "dataset", "val_frac", 0.15);
    const std::uint64_t seed =
        field_or<std::uint64_t>(j, "dataset", "seed", 0);
    echo["images"] = images;
    echo["labels"] = labels;
    echo["pool_factor"] = pool;
    echo["train_frac"] = train_frac;
    echo["val_frac"] = val_frac;
    echo["seed"] = seed;
    return load_idx_dataset(images, labels, pool, train_frac, val_frac, seed);
  }
  config_fail("dataset.source must be \"blobs\" or \"idx\"");
}

TrainConfig parse_train(const json& j, json& echo) {
  TrainConfig train;
  train.learning_rate = require_field<double>(j, "train", "learning_rate");
  train.momentum = field_or<double>(j, "train", "momentum", train.momentum);
  train.weight_decay =
      field_or<double>(j, "train", "weight_decay", train.weight_decay);
  train.decay_factor =
      field_or<double>(j, "train", "decay_factor", train.decay_factor);
  train.decay_fraction =
      field_or<double>(j, "train", "decay_fraction", train.decay_fraction);
  train.horizon_steps =
      field_or<std::int64_t>(j, "train", "horizon_steps", train.horizon_steps);
  train.batch_size = field_or<int>(j, "train", "batch_size", train.batch_size);
  train.seed = field_or<std::uint64_t>(j, "train", "seed", train.seed);
  train.divergence_threshold = field_or<double>(
      j, "train", "divergence_threshold", train.divergence_threshold);
  train.validate();
  echo["learning_rate"] = train.learning_rate;
  echo["momentum"] = train.momentum;
  echo["weight_decay"] = train.weight_decay;
  echo["decay_factor"] = train.decay_factor;
  echo["decay_fraction"] = train.decay_fraction;
  echo["horizon_steps"] = train.horizon_steps;
  echo["batch_size"] = train.batch_size;
  echo["seed"] = train.seed;
  echo["divergence_threshold"] = train.divergence_threshold;
  return train;
}

TicConfig parse_tic(const json& j, json& echo, Split default_split) {
  TicConfig tic;
  std::vector<std::string> fid_names;
  for (Fidelity f : tic.fidelities) fid_names.push_back(to_string(f));
  fid_names = field_or<std::vector<std::string>>(j, "tic", "fidelities",
                                                 fid_names);
  tic.fidelities.clear();
  for (const std::string& name : fid_names) {
    tic.fidelities.push_back(fidelity_from_string(name));
  }
  tic.score_fidelity = fidelity_from_string(field_or<std::string>(
      j, "tic", "score_fidelity", to_string(tic.score_fidelity)));
  tic.matrix_split = split_from_string(field_or<std::string>(
      j, "tic", "matrix_split", to_string(default_split)));
  tic.damping = field_or<double>(j, "tic", "damping", tic.damping);
  tic.curvature = curvature_source_from_string(field_or<std::string>(
      j, "tic", "curvature", to_string(tic.curvature)));
  tic.mc_samples = field_or<int>(j, "tic", "mc_samples", tic.mc_samples);
  tic.trace_h_source = trace_source_from_string(field_or<std::string>(
      j, "tic", "trace_h_source", to_string(tic.trace_h_source)));
  tic.hutchinson_samples =
      field_or<int>(j, "tic", "hutchinson_samples", tic.hutchinson_samples);
  tic.dense_cap = field_or<int>(j, "tic", "dense_cap", tic.dense_cap);
  tic.seed = field_or<std::uint64_t>(j, "tic", "seed", tic.seed);
  echo["fidelities"] = fid_names;
  echo["score_fidelity"] = to_string(tic.score_fidelity);
  echo["matrix_split"] = to_string(tic.matrix_split);
  echo["damping"] = tic.damping;
  echo["curvature"] = to_string(tic.curvature);
  echo["mc_samples"] = tic.mc_samples;
  echo["trace_h_source"] = to_string(tic.trace_h_source);
  echo["hutchinson_samples"] = tic.hutchinson_samples;
  echo["dense_cap"] = tic.dense_cap;
  echo["seed"] = tic.seed;
  return tic;
}

HpSpace parse_space(const json& j, json& echo) {
  HpSpace space;
  space.lr_lo = field_or<double>(j, "space", "lr_lo", space.lr_lo);
  space.lr_hi = field_or<double>(j, "space", "lr_hi", space.lr_hi);
  space.wd_lo = field_or<double>(j, "space", "wd_lo", space.wd_lo);
  space.wd_hi = field_or<double>(j, "space", "wd_hi", space.wd_hi);
  space.momentum_lo =
      field_or<double>(j, "space", "momentum_lo", space.momentum_lo);
  space.momentum_hi =
      field_or<double>(j, "space", "momentum_hi", space.momentum_hi);
  space.decay_factor_lo =
      field_or<double>(j, "space", "decay_factor_lo", space.decay_factor_lo);
  space.decay_factor_hi =
      field_or<double>(j, "space", "decay_factor_hi", space.decay_factor_hi);
  space.decay_fraction_lo = field_or<double>(j, "space", "decay_fraction_lo",
                                             space.decay_fraction_lo);
  space.decay_fraction_hi = field_or<double>(j, "space", "decay_fraction_hi",
                                             space.decay_fraction_hi);
  echo["lr_lo"] = space.lr_lo;
  echo["lr_hi"] = space.lr_hi;
  echo["wd_lo"] = space.wd_lo;
  echo["wd_hi"] = space.wd_hi;
  echo["momentum_lo"] = space.momentum_lo;
  echo["momentum_hi"] = space.momentum_hi;
  echo["decay_factor_lo"] = space.decay_factor_lo;
  echo["decay_factor_hi"] = space.decay_factor_hi;
  echo["decay_fraction_lo"] = space.decay_fraction_lo;
  echo["decay_fraction_hi"] = space.decay_fraction_hi;
  return space;
}

fs::path prepare_outdir(const std::string& out) {
  fs::path dir(out);
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    throw CliError(2, "output directory is not empty: " + out);
  }
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CliError(2, "cannot write " + path.string());
  os << text;
}

void write_echo(const fs::path& dir, const json& echo) {
  write_text(dir / "config.json", echo.dump(2) + "\n");
}

json json_or_null(double v) {
  return std::isfinite(v) ? json(v) : json(nullptr);
}

// ---- train ----------------------------------------------------------------

int cmd_train(const json& cfg, const std::string& out) {
  json echo;
  const NetworkSpec spec = parse_network(block(cfg, "network"), echo["network"]);
  LabeledDataset ds = parse_dataset(block(cfg, "dataset"), echo["dataset"]);
  const TrainConfig train = parse_train(block(cfg, "train"), echo["train"]);

  const fs::path dir = prepare_outdir(out);
  write_echo(dir, echo);

  TrainState state = make_train_state(spec, ds, train);
  const std::vector<SnapshotRow> rows =
      train_steps(spec, ds, train, state, train.horizon_steps);
  write_snapshot_csv((dir / "snapshots.csv").string(), "trial", rows);
  save_params_file((dir / "params.bin").string(), state.params.values);
  save_checkpoint(state, (dir / "checkpoint.bin").string());

  json result;
  result["diverged"] = state.diverged;
  result["diverged_step"] = state.diverged_step;
  result["steps"] = state.step;
  result["epochs"] = state.epoch;
  if (state.diverged) {
    result["train_loss"] = nullptr;
    result["validation_loss"] = nullptr;
    result["test_loss"] = nullptr;
  } else {
    result["train_loss"] =
        json_or_null(mean_loss(spec, state.params, ds, Split::kTrain));
    result["validation_loss"] =
        ds.validation_indices.empty()
            ? json(nullptr)
            : json_or_null(mean_loss(spec, state.params, ds, Split::kValidation));
    result["test_loss"] =
        ds.test_indices.empty()
            ? json(nullptr)
            : json_or_null(mean_loss(spec, state.params, ds, Split::kTest));
  }
  write_text(dir / "result.json", result.dump(2) + "\n");
  return state.diverged ? 3 : 0;
}

// ---- tic ------------------------------------------------------------------

int cmd_tic(const json& cfg, const std::string& out) {
  json echo;
  const NetworkSpec spec = parse_network(block(cfg, "network"), echo["network"]);
  LabeledDataset ds = parse_dataset(block(cfg, "dataset"), echo["dataset"]);
  const json tic_block = cfg.contains("tic") ? cfg.at("tic") : json::object();
  const TicConfig tic = parse_tic(tic_block, echo["tic"], Split::kTrain);
  const std::string params_path =
      require_field<std::string>(cfg, "", "params");
  echo["params"] = params_path;
  const std::string dump_repr =
      field_or<std::string>(cfg, "", "dump_matrices", "");
  if (!dump_repr.empty()) echo["dump_matrices"] = dump_repr;

  if (!fs::exists(params_path)) {
    config_fail("parameter file not found: " + params_path);
  }
  const Vector values = load_params_file(params_path);
  if (values.size() != spec.param_count()) {
    std::ostringstream msg;
    msg << "parameter file holds " << values.size()
        << " values but the network needs " << spec.param_count();
    throw CliError(4, msg.str());
  }
  ParamVector params = ParamVector::zeros(spec);
  params.values = values;

  const fs::path dir = prepare_outdir(out);
  write_echo(dir, echo);

  const TicReport report = compute_tic(spec, params, ds, tic);
  write_text(dir / "tic_report.json", tic_report_to_json(report));

  if (!dump_repr.empty()) {
    const Representation repr = representation_from_string(dump_repr);
    const std::vector<int>& basis = ds.split(tic.matrix_split);
    // The dump always uses the exact per-class curvature and the gradient
    // covariance, whatever source fed the report.
    const InfoMatrix h =
        fisher_exact(spec, params, ds, basis, repr, tic.dense_cap);
    const InfoMatrix c =
        grad_covariance(spec, params, ds, basis, repr, tic.dense_cap);
    dump_matrix(h, (dir / ("h_" + dump_repr + ".ticm")).string());
    dump_matrix(c, (dir / ("c_" + dump_repr + ".ticm")).string());
  }
  return 0;
}

// ---- correlate ------------------------------------------------------------

void write_trials_csv(const fs::path& path,
                      const std::vector<TrialResult>& trials) {
  std::string text =
      "trial,seed,learning_rate,weight_decay,momentum,decay_factor,"
      "decay_fraction,diverged,steps_run,train_loss,validation_loss,"
      "test_loss,gap,tic_score\n";
  constexpr double kNan = std::numeric_limits<double>::quiet_NaN();
  for (const TrialResult& row : trials) {
    char head[128];
    std::snprintf(head, sizeof(head), "%d,%" PRIu64 ",", row.trial,
                  static_cast<std::uint64_t>(row.config.seed));
    text += head;
    text += fmt17(row.config.learning_rate) + ",";
    text += fmt17(row.config.weight_decay) + ",";
    text += fmt17(row.config.momentum) + ",";
    text += fmt17(row.config.decay_factor) + ",";
    text += fmt17(row.config.decay_fraction) + ",";
    text += row.diverged ? "1," : "0,";
    text += std::to_string(row.steps_run) + ",";
    const bool ok = !row.diverged;
    text += fmt17(ok ? row.train_loss : kNan) + ",";
    text += fmt17(ok ? row.validation_loss : kNan) + ",";
    text += fmt17(ok ? row.test_loss : kNan) + ",";
    text += fmt17(ok ? row.gap : kNan) + ",";
    text += fmt17(ok && row.tic ? row.tic->tic_score : kNan) + "\n";
  }
  write_text(path, text);
}

json correlation_triple(const std::vector<double>& xs,
                        const std::vector<double>& ys) {
  json j;
  j["pearson"] = json_or_null(pearson(xs, ys));
  j["spearman"] = json_or_null(spearman(xs, ys));
  j["kendall"] = json_or_null(kendall_tau(xs, ys));
  return j;
}

int cmd_correlate(const json& cfg, const std::string& out) {
  json echo;
  const NetworkSpec spec = parse_network(block(cfg, "network"), echo["network"]);
  LabeledDataset ds = parse_dataset(block(cfg, "dataset"), echo["dataset"]);

  SweepSettings settings;
  const json sweep_block =
      cfg.contains("sweep") ? cfg.at("sweep") : json::object();
  settings.trials = field_or<int>(sweep_block, "sweep", "trials", settings.trials);
  settings.steps =
      field_or<std::int64_t>(sweep_block, "sweep", "steps", settings.steps);
  settings.batch_size =
      field_or<int>(sweep_block, "sweep", "batch_size", settings.batch_size);
  settings.seed =
      field_or<std::uint64_t>(sweep_block, "sweep", "seed", settings.seed);
  echo["sweep"]["trials"] = settings.trials;
  echo["sweep"]["steps"] = settings.steps;
  echo["sweep"]["batch_size"] = settings.batch_size;
  echo["sweep"]["seed"] = settings.seed;
  const json space_block =
      cfg.contains("space") ? cfg.at("space") : json::object();
  settings.space = parse_space(space_block, echo["space"]);
  const json tic_block = cfg.contains("tic") ? cfg.at("tic") : json::object();
  settings.tic = parse_tic(tic_block, echo["tic"], Split::kTrain);

  const fs::path dir = prepare_outdir(out);
  write_echo(dir, echo);

  const SweepResult result = run_sweep(spec, ds, settings);
  write_trials_csv(dir / "trials.csv", result.trials);
  write_text(dir / "sweep.json", sweep_result_to_json(result));

  // Correlations per computed fidelity: the per-example penalty against the
  // observed generalization gap, over completed trials.
  json correlations;
  correlations["diverged_count"] = result.diverged_count;
  std::vector<double> scores, tests, gaps;
  for (const TrialResult& row : result.trials) {
    if (row.diverged || !row.tic) continue;
    scores.push_back(row.tic->tic_score);
    tests.push_back(row.test_loss);
    gaps.push_back(row.gap);
  }
  const int completed = static_cast<int>(gaps.size());
  correlations["n_completed"] = completed;
  if (completed < 3) {
    correlations["warning"] =
        "fewer than three completed trials; correlations omitted";
  } else {
    const auto penalty_of = [](const TicReport& r,
                               Fidelity f) -> std::optional<double> {
      switch (f) {
        case Fidelity::kExact:
          return r.bias_exact;
        case Fidelity::kBlock:
          return r.bias_block;
        case Fidelity::kDiag:
          return r.bias_diag;
        case Fidelity::kLowerBound:
          return r.bias_lower_bound;
      }
      return std::nullopt;
    };
    for (Fidelity f : {Fidelity::kExact, Fidelity::kBlock, Fidelity::kDiag,
                       Fidelity::kLowerBound}) {
      std::vector<double> xs, ys;
      for (const TrialResult& row : result.trials) {
        if (row.diverged || !row.tic) continue;
        const std::optional<double> p = penalty_of(*row.tic, f);
        if (!p) continue;
        xs.push_back(*p / static_cast<double>(row.tic->n_train));
        ys.push_back(row.gap);
      }
      if (static_cast<int>(xs.size()) >= 3) {
        correlations["penalty_vs_gap"][to_string(f)] =
            correlation_triple(xs, ys);
      }
    }
    correlations["score_vs_test"] = correlation_triple(scores, tests);
  }
  write_text(dir / "correlations.json", correlations.dump(2) + "\n");
  return 0;
}

// ---- hpo ------------------------------------------------------------------

int cmd_hpo(const json& cfg, const std::string& out) {
  json echo;
  const NetworkSpec spec = parse_network(block(cfg, "network"), echo["network"]);
  LabeledDataset ds = parse_dataset(block(cfg, "dataset"), echo["dataset"]);
  const json space_block =
      cfg.contains("space") ? cfg.at("space") : json::object();
  const HpSpace space = parse_space(space_block, echo["space"]);

  ShaConfig config;
  const json sha_block = cfg.contains("sha") ? cfg.at("sha") : json::object();
  config.num_trials =
      field_or<int>(sha_block, "sha", "num_trials", config.num_trials);
  config.reduction_factor = field_or<int>(sha_block, "sha", "reduction_factor",
                                          config.reduction_factor);
  config.min_resource = field_or<std::int64_t>(sha_block, "sha", "min_resource",
                                               config.min_resource);
  config.num_rungs = field_or<int>(sha_block, "sha", "num_rungs", config.num_rungs);
  config.batch_size =
      field_or<int>(sha_block, "sha", "batch_size", config.batch_size);
  config.metric = sha_metric_from_string(
      field_or<std::string>(sha_block, "sha", "metric", to_string(config.metric)));
  const std::uint64_t seed =
      field_or<std::uint64_t>(sha_block, "sha", "seed", 0);
  const std::string mode =
      field_or<std::string>(sha_block, "sha", "mode", "single");
  const int repeats = field_or<int>(sha_block, "sha", "repeats", 1);
  if (mode != "single" && mode != "compare") {
    config_fail("sha.mode must be \"single\" or \"compare\"");
  }
  echo["sha"]["num_trials"] = config.num_trials;
  echo["sha"]["reduction_factor"] = config.reduction_factor;
  echo["sha"]["min_resource"] = config.min_resource;
  echo["sha"]["num_rungs"] = config.num_rungs;
  echo["sha"]["batch_size"] = config.batch_size;
  echo["sha"]["metric"] = to_string(config.metric);
  echo["sha"]["seed"] = seed;
  echo["sha"]["mode"] = mode;
  echo["sha"]["repeats"] = repeats;
  const json tic_block = cfg.contains("tic") ? cfg.at("tic") : json::object();
  config.tic = parse_tic(tic_block, echo["tic"], Split::kValidation);
  config.validate();

  const fs::path dir = prepare_outdir(out);
  write_echo(dir, echo);

  if (mode == "single") {
    ShaResult result;
    try {
      result = run_sha(spec, ds, space, config, seed);
    } catch (const CapExceededError&) {
      throw;
    } catch (const std::runtime_error& e) {
      throw CliError(3, e.what());
    }
    write_text(dir / "events.jsonl", result.event_log);
    write_text(dir / "summary.json", sha_result_to_json(result));
    save_params_file((dir / "winner_params.bin").string(),
                     result.states[result.winner].params.values);
  } else {
    PruningComparison cmp;
    try {
      cmp = compare_pruning(spec, ds, space, config, repeats, seed);
    } catch (const CapExceededError&) {
      throw;
    } catch (const std::runtime_error& e) {
      throw CliError(3, e.what());
    }
    write_text(dir / "comparison.json", pruning_comparison_to_json(cmp));
  }
  return 0;
}

// ---- ntk-drift ------------------------------------------------------------

int cmd_ntk_drift(const json& cfg, const std::string& out) {
  json echo;
  const NetworkSpec spec = parse_network(block(cfg, "network"), echo["network"]);
  LabeledDataset ds = parse_dataset(block(cfg, "dataset"), echo["dataset"]);
  const TrainConfig train = parse_train(block(cfg, "train"), echo["train"]);

  const json probe_block =
      cfg.contains("probe") ? cfg.at("probe") : json::object();
  const int probe_count = field_or<int>(probe_block, "probe", "count", 8);
  const Split probe_split = split_from_string(
      field_or<std::string>(probe_block, "probe", "split", "train"));
  const std::int64_t snapshot_every =
      field_or<std::int64_t>(probe_block, "probe", "snapshot_every", 10);
  const int gram_cap = field_or<int>(probe_block, "probe", "gram_cap", kGramCap);
  echo["probe"]["count"] = probe_count;
  echo["probe"]["split"] = to_string(probe_split);
  echo["probe"]["snapshot_every"] = snapshot_every;
  echo["probe"]["gram_cap"] = gram_cap;
  if (probe_count < 1) config_fail("probe.count must be positive");
  if (snapshot_every < 1) config_fail("probe.snapshot_every must be positive");
  const std::vector<int>& pool = ds.split(probe_split);
  if (static_cast<int>(pool.size()) < probe_count) {
    config_fail("probe split holds fewer examples than probe.count");
  }
  const std::vector<int> probe(pool.begin(), pool.begin() + probe_count);

  const fs::path dir = prepare_outdir(out);
  write_echo(dir, echo);

  TrainState state = make_train_state(spec, ds, train);
  const NtkGram base = ntk_gram(spec, state.params, ds, probe, gram_cap);

  std::string csv = "step,relative_drift\n";
  const auto emit = [&](std::int64_t step, double drift) {
    char head[32];
    std::snprintf(head, sizeof(head), "%" PRId64 ",", step);
    csv += head;
    csv += fmt17(drift) + "\n";
  };
  emit(0, base.relative_distance(base));

  double final_drift = 0.0;
  while (state.step < train.horizon_steps && !state.diverged) {
    const std::int64_t chunk =
        std::min(snapshot_every, train.horizon_steps - state.step);
    train_steps(spec, ds, train, state, chunk);
    if (state.diverged) break;
    const NtkGram now = ntk_gram(spec, state.params, ds, probe, gram_cap);
    final_drift = base.relative_distance(now);
    emit(state.step, final_drift);
  }
  write_text(dir / "drift.csv", csv);

  json result;
  result["diverged"] = state.diverged;
  result["steps"] = state.step;
  result["final_drift"] = json_or_null(final_drift);
  write_text(dir / "result.json", result.dump(2) + "\n");
  return state.diverged ? 3 : 0;
}

}  // namespace

void save_params_file(const std::string& path, const Vector& values) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.write("TICP", 4);
  io::write_u32(os, static_cast<std::uint32_t>(values.size()));
  io::write_f64s(os, values.data(), values.size());
  if (!os) throw std::runtime_error("failed writing " + path);
}

Vector load_params_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CliError(2, "cannot read parameter file " + path);
  try {
    io::require_magic(is, "TICP", path);
    const std::uint32_t dim = io::read_u32(is, "parameter count");
    Vector values(dim);
    io::read_f64s(is, values.data(), dim, "parameter values");
    io::require_eof(is, path);
    return values;
  } catch (const CliError&) {
    throw;
  } catch (const std::runtime_error& e) {
    throw CliError(2, std::string("bad parameter file: ") + e.what());
  }
}

int cli_main(int argc, char** argv) {
  CLI::App app{"Information-criterion toolbox for small classifiers"};
  app.require_subcommand(1);

  struct Sub {
    CLI::App* cmd = nullptr;
    std::string config;
    std::string out;
  };
  std::map<std::string, Sub> subs;
  const std::pair<const char*, const char*> names[] = {
      {"train", "Train one model and write loss snapshots"},
      {"tic", "Score saved parameters with the information criterion"},
      {"correlate", "Sweep hyperparameters and correlate penalties with gaps"},
      {"hpo", "Successive-halving pruning, optionally comparing metrics"},
      {"ntk-drift", "Track the tangent-kernel drift along training"},
  };
  for (const auto& [name, help] : names) {
    Sub& sub = subs[name];
    sub.cmd = app.add_subcommand(name, help);
    sub.cmd->add_option("--config", sub.config, "JSON run configuration")
        ->required();
    sub.cmd->add_option("--out", sub.out, "Output directory (must be empty)")
        ->required();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    for (auto& [name, sub] : subs) {
      if (!sub.cmd->parsed()) continue;
      std::ifstream is(sub.config);
      if (!is) throw CliError(2, "cannot read config file " + sub.config);
      json cfg;
      try {
        cfg = json::parse(is);
      } catch (const json::exception& e) {
        throw CliError(2, std::string("config is not valid JSON: ") + e.what());
      }
      if (name == "train") return cmd_train(cfg, sub.out);
      if (name == "tic") return cmd_tic(cfg, sub.out);
      if (name == "correlate") return cmd_correlate(cfg, sub.out);
      if (name == "hpo") return cmd_hpo(cfg, sub.out);
      return cmd_ntk_drift(cfg, sub.out);
    }
    return 2;
  } catch (const CliError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code;
  } catch (const CapExceededError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 5;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace ticlab
