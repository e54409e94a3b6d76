#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "oracles.hpp"
#include "ticlab/autodiff.hpp"
#include "ticlab/cli.hpp"
#include "ticlab/estimators.hpp"
#include "ticlab/experiment.hpp"
#include "ticlab/info_matrices.hpp"
#include "ticlab/network.hpp"
#include "ticlab/rng.hpp"
#include "ticlab/sha.hpp"
#include "ticlab/trainer.hpp"

// Release gate for the whole toolbox. Each case checks one numbered claim
// end to end and prints a single PASS/FAIL line with the measured margin, so
// the full verdict is readable straight from the test log. Tolerances,
// seeds, and problem sizes are pinned here on purpose; everything below is
// deterministic, so a pass is a pass forever on this toolchain.

using namespace ticlab;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void verdict(int id, bool pass, const std::string& detail, double secs) {
  std::printf("[criterion %02d] %s  %s (%.1fs)\n", id, pass ? "PASS" : "FAIL",
              detail.c_str(), secs);
  std::fflush(stdout);
}

Matrix dense_of(const InfoMatrix& m) { return std::get<DenseSymMatrix>(m).m; }

std::string fmt(const char* format, ...) {
  char buf[512];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof(buf), format, args);
  va_end(args);
  return buf;
}

// Two-class affine model with labels drawn from the model itself. The draw
// order (parameters, then per example features and label) is part of the
// pinned determinism contract of the criteria that use this.
struct AffineCase {
  NetworkSpec spec;
  ParamVector theta;
  LabeledDataset ds;
};

AffineCase sample_affine_case(int input_dim, int n, double scale,
                              std::uint64_t seed) {
  AffineCase out;
  out.spec.input_dim = input_dim;
  out.spec.num_classes = 2;
  Rng rng(seed);
  out.theta = ParamVector::zeros(out.spec);
  for (int i = 0; i < out.theta.values.size(); ++i) {
    out.theta.values[i] = scale * rng.normal();
  }
  const double* th = out.theta.values.data();
  out.ds.features.resize(n, input_dim);
  out.ds.labels.resize(n);
  out.ds.train_indices.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < input_dim; ++j) out.ds.features(i, j) = rng.normal();
    out.ds.train_indices[i] = i;
    double l0 = th[2 * input_dim];
    double l1 = th[2 * input_dim + 1];
    for (int j = 0; j < input_dim; ++j) {
      l0 += th[j] * out.ds.features(i, j);
      l1 += th[input_dim + j] * out.ds.features(i, j);
    }
    const double p1 = 1.0 / (1.0 + std::exp(l0 - l1));
    out.ds.labels[i] = rng.uniform() < p1 ? 1 : 0;
  }
  return out;
}

bool bitwise_equal(const Vector& a, const Vector& b) {
  return a.size() == b.size() &&
         std::equal(a.data(), a.data() + a.size(), b.data());
}

// Shell helpers for the end-to-end determinism criterion.

fs::path fresh_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("ticlab_accept_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  os << text;
}

int run_tool(const std::string& subcommand, const fs::path& config,
             const fs::path& out_dir, const fs::path& scratch) {
  const std::string cmd = std::string(TICLAB_CLI_PATH) + " " + subcommand +
                          " --config " + config.string() + " --out " +
                          out_dir.string() + " > " +
                          (scratch / "stdout.txt").string() + " 2> " +
                          (scratch / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return (status != -1 && WIFEXITED(status)) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> dir_bytes(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::ifstream is(entry.path(), std::ios::binary);
    std::ostringstream buf;
    buf << is.rdbuf();
    out[entry.path().filename().string()] = buf.str();
  }
  return out;
}

}  // namespace

TEST_CASE("criterion 01: generalized Gauss-Newton equals the exact Fisher") {
  const auto t0 = Clock::now();
  const double tol = 1e-10;
  Rng rng(101);
  double worst = 0.0;
  std::int64_t max_d = 0;
  for (int k = 0; k < 50; ++k) {
    NetworkSpec spec = oracle::random_spec(rng);
    if (k % 8 == 3) {
      // A couple of wider instances so the sample is not all toy sized.
      spec = NetworkSpec{};
      spec.input_dim = 8;
      spec.hidden_widths = {16, 12};
      spec.num_classes = 5;
    }
    const ParamVector params = ParamVector::initialize(spec, rng.next_u64());
    const LabeledDataset ds = oracle::random_dataset(spec, 8, rng.next_u64());
    const Matrix g = dense_of(ggn(spec, params, ds, ds.train_indices,
                                  Representation::kDense));
    const Matrix f = dense_of(fisher_exact(spec, params, ds, ds.train_indices,
                                           Representation::kDense));
    worst = std::max(worst, (g - f).norm() / f.norm());
    max_d = std::max(max_d, static_cast<std::int64_t>(params.values.size()));
  }
  const double secs = seconds_since(t0);
  const bool pass = worst <= tol && secs <= 60.0;
  verdict(1, pass,
          fmt("50 nets, largest d=%lld, max relative Frobenius gap %.2e "
              "(tol %.0e)",
              static_cast<long long>(max_d), worst, tol),
          secs);
  CHECK(worst <= tol);
  CHECK(secs <= 60.0);
}

TEST_CASE("criterion 02: Gauss-Newton matches the finite-difference Hessian") {
  const auto t0 = Clock::now();
  const double tol = 1e-3;
  const struct {
    int input;
    std::vector<int> hidden;
    int distinct;
  } shapes[] = {
      {2, {6}, 4},    {3, {8}, 4},    {2, {4, 6}, 3}, {4, {10}, 5},
      {3, {6, 6}, 4}, {2, {5}, 3},    {5, {12}, 6},   {3, {4, 4}, 3},
      {4, {8}, 4},    {6, {10}, 5},
  };
  double worst = 0.0;
  bool built = true;
  std::string error;
  int k = 0;
  try {
    for (const auto& shape : shapes) {
      const oracle::ResidualFreeCase rf = oracle::make_residual_free_case(
          shape.input, shape.hidden, shape.distinct, 900 + k);
      const Matrix g = dense_of(ggn(rf.spec, rf.params, rf.ds,
                                    rf.ds.train_indices,
                                    Representation::kDense));
      const auto grad_fn = [&](const std::vector<double>& t) {
        ParamVector p = rf.params;
        for (std::size_t i = 0; i < t.size(); ++i) {
          p.values[static_cast<int>(i)] = t[i];
        }
        return oracle::to_std(
            batch_grad(rf.spec, p, rf.ds, rf.ds.train_indices));
      };
      const auto h = oracle::fd_hessian_from_grad(
          grad_fn, oracle::to_std(rf.params.values), 1e-5);
      const std::size_t d = h.size();
      for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          worst = std::max(worst, std::abs(g(static_cast<int>(i),
                                             static_cast<int>(j)) -
                                           h[i][j]));
        }
      }
      ++k;
    }
  } catch (const std::exception& e) {
    built = false;
    error = e.what();
  }
  const double secs = seconds_since(t0);
  const bool pass = built && worst <= tol && secs <= 300.0;
  verdict(2, pass,
          built ? fmt("10 ReLU nets at margin points, max entry gap %.2e "
                      "(tol %.0e)",
                      worst, tol)
                : "construction failed: " + error,
          secs);
  CHECK(built);
  CHECK(worst <= tol);
  CHECK(secs <= 300.0);
}

TEST_CASE("criterion 03: the exact penalty recovers the parameter count") {
  const auto t0 = Clock::now();
  // A two-class affine score on 11 features has 12 identifiable directions;
  // shifting both class rows together never moves the loss, so the 24 raw
  // coordinates carry 12 dimensions of information.
  const double dof = 12.0;
  const int n = 10000;
  double lo = 1e300, hi = -1e300;
  for (int s = 0; s < 20; ++s) {
    AffineCase c = sample_affine_case(11, n, 0.3, derive_seed(777, s));
    TicConfig cfg;
    cfg.fidelities = {Fidelity::kExact};
    cfg.seed = derive_seed(778, s);
    const TicReport r = compute_tic(c.spec, c.theta, c.ds, cfg);
    lo = std::min(lo, *r.bias_exact);
    hi = std::max(hi, *r.bias_exact);
  }
  const double secs = seconds_since(t0);
  const bool pass = lo >= 0.9 * dof && hi <= 1.1 * dof && secs <= 120.0;
  verdict(3, pass,
          fmt("well-specified model, n=%d: bias range [%.3f, %.3f] inside "
              "[%.1f, %.1f] over 20 seeds",
              n, lo, hi, 0.9 * dof, 1.1 * dof),
          secs);
  CHECK(lo >= 0.9 * dof);
  CHECK(hi <= 1.1 * dof);
  CHECK(secs <= 120.0);
}

TEST_CASE("criterion 04: the trace-ratio bound never exceeds the diagonal penalty") {
  const auto t0 = Clock::now();
  Rng rng(404);
  bool ordered = true;
  bool traces_match = true;
  double min_slack = 1e300;
  for (int t = 0; t < 1000; ++t) {
    const int d = 1 + static_cast<int>(rng.uniform_index(64));
    DiagVector h, c;
    h.values.resize(d);
    c.values.resize(d);
    for (int i = 0; i < d; ++i) {
      h.values[i] = rng.log_uniform(1e-3, 1e3);
      c.values[i] = rng.log_uniform(1e-3, 1e3);
    }
    double lam = rng.log_uniform(1e-8, 1e-2);
    if (t % 3 == 0) lam = 0.0;
    const double pd = bias_diag(h, c, lam);
    const double lb = bias_lower_bound(c.trace(), h.trace(), d, lam);
    if (!(pd >= lb)) ordered = false;
    if (d > 1) min_slack = std::min(min_slack, pd - lb);

    // The same diagonal embedded densely must report the same traces bit
    // for bit, which is what makes the cheap bound equal to the dense one.
    DenseSymMatrix hd, cd;
    hd.m = Matrix::Zero(d, d);
    cd.m = Matrix::Zero(d, d);
    hd.m.diagonal() = h.values;
    cd.m.diagonal() = c.values;
    if (hd.trace() != h.trace() || cd.trace() != c.trace()) {
      traces_match = false;
    }
    if (bias_lower_bound(cd.trace(), hd.trace(), d, lam) != lb) {
      traces_match = false;
    }
  }
  const double secs = seconds_since(t0);
  const bool pass = ordered && traces_match && secs <= 1.0;
  verdict(4, pass,
          fmt("1000 random diagonal pairs ordered, min slack %.3e, traces "
              "bitwise across representations",
              min_slack),
          secs);
  CHECK(ordered);
  CHECK(traces_match);
  CHECK(secs <= 1.0);
}

TEST_CASE("criterion 05: the sampled Fisher is unbiased for the exact one") {
  const auto t0 = Clock::now();
  NetworkSpec spec;
  spec.input_dim = 3;
  spec.hidden_widths = {4};
  spec.num_classes = 3;
  const LabeledDataset ds = oracle::random_dataset(spec, 20, 44);
  const ParamVector params = ParamVector::initialize(spec, 45);
  const int d = static_cast<int>(params.values.size());

  const Matrix exact = dense_of(fisher_exact(spec, params, ds,
                                             ds.train_indices,
                                             Representation::kDense));
  Matrix mean = Matrix::Zero(d, d);
  Matrix m2 = Matrix::Zero(d, d);
  const int reps = 200;
  for (int k = 0; k < reps; ++k) {
    const Matrix x = dense_of(fisher_mc(spec, params, ds, ds.train_indices, 1,
                                        derive_seed(555, k),
                                        Representation::kDense));
    const Matrix delta = x - mean;
    mean += delta / static_cast<double>(k + 1);
    m2 += delta.cwiseProduct(x - mean);
  }
  const Matrix se =
      (m2 / static_cast<double>(reps - 1) / static_cast<double>(reps))
          .cwiseSqrt();
  double max_z = 0.0;
  bool se_positive = true;
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      if (se(i, j) == 0.0) {
        se_positive = false;
        continue;
      }
      max_z = std::max(max_z, std::abs(mean(i, j) - exact(i, j)) / se(i, j));
    }
  }

  const Matrix big = dense_of(fisher_mc(spec, params, ds, ds.train_indices,
                                        5000, derive_seed(555, 999),
                                        Representation::kDense));
  const double rel = (big - exact).norm() / exact.norm();

  const double secs = seconds_since(t0);
  const bool pass = se_positive && max_z <= 3.0 && rel < 0.05 && secs <= 120.0;
  verdict(5, pass,
          fmt("single-draw mean over %d seeds: max entry z=%.2f (limit 3); "
              "1e5 draws: relative error %.4f (limit 0.05)",
              reps, max_z, rel),
          secs);
  CHECK(se_positive);
  CHECK(max_z <= 3.0);
  CHECK(rel < 0.05);
  CHECK(secs <= 120.0);
}

TEST_CASE("criterion 06: the randomized trace estimator is exact on identity") {
  const auto t0 = Clock::now();
  const TraceEstimate id =
      hutchinson_trace([](const Vector& v) { return v; }, 50, 64, 564);
  const bool id_exact = id.estimate == 50.0 && id.std_error == 0.0;

  Rng mr(562);
  Matrix a(50, 50);
  for (int i = 0; i < 50; ++i) {
    for (int j = 0; j < 50; ++j) a(i, j) = mr.normal();
  }
  const Matrix sym = 0.5 * (a + a.transpose());
  const TraceEstimate est = hutchinson_trace(
      [&](const Vector& v) { return Vector(sym * v); }, 50, 10000, 563);
  const double z = std::abs(est.estimate - sym.trace()) / est.std_error;

  const double secs = seconds_since(t0);
  const bool pass = id_exact && est.std_error > 0.0 && z <= 3.0 && secs <= 10.0;
  verdict(6, pass,
          fmt("identity gives %.17g with zero spread; explicit 50x50 trace "
              "off by %.2f standard errors (limit 3)",
              id.estimate, z),
          secs);
  CHECK(id_exact);
  CHECK(est.std_error > 0.0);
  CHECK(z <= 3.0);
  CHECK(secs <= 10.0);
}

TEST_CASE("criterion 07: the corrected loss tracks leave-one-out validation") {
  const auto t0 = Clock::now();
  bool all_closer = true;
  bool shrinking = true;
  double prev = 1e300;
  std::string detail;
  for (int n : {25, 50, 100}) {
    AffineCase c = sample_affine_case(3, n, 0.5, derive_seed(4242, n));
    TrainConfig config;
    config.learning_rate = 0.4;
    config.decay_factor = 0.1;
    config.decay_fraction = 0.6;
    config.horizon_steps = 500;
    config.batch_size = 16;
    config.seed = derive_seed(4242, 100 + n);
    TrainState state = make_train_state(c.spec, c.ds, config);
    train_steps(c.spec, c.ds, config, state, 500);
    const double train_loss = mean_loss(c.spec, state.params, c.ds,
                                        Split::kTrain);
    TicConfig cfg;
    cfg.fidelities = {Fidelity::kExact};
    cfg.score_fidelity = Fidelity::kExact;
    cfg.seed = derive_seed(4242, 200 + n);
    const TicReport r = compute_tic(c.spec, state.params, c.ds, cfg);
    const double cv = loocv_estimate(c.spec, c.ds, config, 500);
    const double d_tic = std::abs(cv - r.tic_score);
    const double d_train = std::abs(cv - train_loss);
    if (!(d_tic < d_train)) all_closer = false;
    if (!(d_tic < prev)) shrinking = false;
    prev = d_tic;
    detail += fmt("n=%d gap %.4f vs %.4f; ", n, d_tic, d_train);
  }
  const double secs = seconds_since(t0);
  const bool pass = all_closer && shrinking && secs <= 600.0;
  verdict(7, pass, detail + "corrected gap shrinks with n", secs);
  CHECK(all_closer);
  CHECK(shrinking);
  CHECK(secs <= 600.0);
}

namespace {

// Shared sweep protocol for the two capacity regimes: identical search box,
// trial count, training length, and correlation measurement. Only the
// architecture and the dataset sizing differ between the regimes.
HpSpace regime_space() {
  HpSpace space;
  space.lr_lo = 0.05;
  space.lr_hi = 0.3;
  space.wd_lo = 1e-4;
  space.wd_hi = 0.3;
  space.momentum_hi = 0.5;
  return space;
}

struct RegimeSweep {
  int completed = 0;
  double spearman_penalty_gap = 0.0;
};

RegimeSweep run_regime_sweep(const NetworkSpec& spec, const LabeledDataset& ds,
                             std::uint64_t seed) {
  SweepSettings settings;
  settings.space = regime_space();
  settings.trials = 44;
  settings.steps = 800;
  settings.batch_size = 16;
  settings.tic.fidelities = {Fidelity::kDiag};
  settings.seed = seed;
  const SweepResult result = run_sweep(spec, ds, settings);
  std::vector<double> xs, ys;
  for (const TrialResult& t : result.trials) {
    if (t.diverged || !t.tic) continue;
    xs.push_back(t.tic->penalty(Fidelity::kDiag));
    ys.push_back(t.gap);
  }
  RegimeSweep out;
  out.completed = static_cast<int>(xs.size());
  out.spearman_penalty_gap = spearman(xs, ys);
  return out;
}

}  // namespace

TEST_CASE("criterion 08: penalty and gap rank together when capacity dwarfs data") {
  const auto t0 = Clock::now();
  NetworkSpec wide;
  wide.input_dim = 8;
  wide.hidden_widths = {16, 16, 16};
  wide.num_classes = 2;
  wide.activation = Activation::kIdentity;
  wide.skip_connections = true;

  BlobsConfig blobs;
  blobs.n = 1000;
  blobs.input_dim = 8;
  blobs.num_classes = 2;
  blobs.separation = 1.2;
  blobs.train_frac = 0.05;
  blobs.val_frac = 0.05;
  blobs.seed = 91;
  const LabeledDataset ds = make_blobs(blobs);

  const double d = static_cast<double>(ParamVector::zeros(wide).values.size());
  const double ratio = d / static_cast<double>(ds.train_indices.size());

  int hits = 0;
  int min_completed = 1 << 30;
  std::string detail = fmt("d/n=%.1f, spearman ", ratio);
  for (int s = 0; s < 5; ++s) {
    const RegimeSweep sweep = run_regime_sweep(wide, ds, derive_seed(8008, s));
    min_completed = std::min(min_completed, sweep.completed);
    if (sweep.completed >= 40 && sweep.spearman_penalty_gap >= 0.6) ++hits;
    detail += fmt("%.2f ", sweep.spearman_penalty_gap);
  }
  const double secs = seconds_since(t0);
  const bool pass = ratio >= 5.0 && hits >= 4 && min_completed >= 40 &&
                    secs <= 1200.0;
  verdict(8, pass, detail + fmt("-> %d/5 at or above 0.6", hits), secs);
  CHECK(ratio >= 5.0);
  CHECK(min_completed >= 40);
  CHECK(hits >= 4);
  CHECK(secs <= 1200.0);
}

TEST_CASE("criterion 09: the correlation disappears in the classical regime") {
  const auto t0 = Clock::now();
  NetworkSpec tiny;
  tiny.input_dim = 4;
  tiny.hidden_widths = {3};
  tiny.num_classes = 2;

  BlobsConfig blobs;
  blobs.n = 4200;
  blobs.input_dim = 4;
  blobs.num_classes = 2;
  blobs.separation = 1.2;
  blobs.train_frac = 0.48;
  blobs.val_frac = 0.04;
  blobs.seed = 17;
  const LabeledDataset ds = make_blobs(blobs);

  const double d = static_cast<double>(ParamVector::zeros(tiny).values.size());
  const double ratio = d / static_cast<double>(ds.train_indices.size());

  int hits = 0;
  int min_completed = 1 << 30;
  std::string detail = fmt("d/n=%.4f, spearman ", ratio);
  for (int s = 0; s < 5; ++s) {
    const RegimeSweep sweep = run_regime_sweep(tiny, ds, derive_seed(9009, s));
    min_completed = std::min(min_completed, sweep.completed);
    if (sweep.completed >= 40 && sweep.spearman_penalty_gap <= 0.3) ++hits;
    detail += fmt("%+.2f ", sweep.spearman_penalty_gap);
  }
  const double secs = seconds_since(t0);
  const bool pass = ratio <= 0.05 && hits >= 4 && min_completed >= 40 &&
                    secs <= 1200.0;
  verdict(9, pass, detail + fmt("-> %d/5 at or below 0.3", hits), secs);
  CHECK(ratio <= 0.05);
  CHECK(min_completed >= 40);
  CHECK(hits >= 4);
  CHECK(secs <= 1200.0);
}

namespace {

LabeledDataset pruning_blobs() {
  BlobsConfig blobs;
  blobs.n = 80;
  blobs.input_dim = 3;
  blobs.num_classes = 2;
  blobs.separation = 2.5;
  blobs.seed = 5;
  return make_blobs(blobs);
}

HpSpace tame_space() {
  HpSpace space;
  space.lr_hi = 0.3;
  space.momentum_hi = 0.5;
  return space;
}

}  // namespace

TEST_CASE("criterion 10: halving with a perfect metric finds the best trial") {
  const auto t0 = Clock::now();
  NetworkSpec spec;
  spec.input_dim = 3;
  spec.hidden_widths = {4};
  spec.num_classes = 2;
  const LabeledDataset ds = pruning_blobs();
  const HpSpace space = tame_space();

  ShaConfig config;
  config.num_trials = 8;
  config.reduction_factor = 2;
  config.min_resource = 4;
  config.num_rungs = 3;
  config.batch_size = 8;

  // One hundred independently seeded repeats, each with its own sampled
  // trial set; the arm scored by the true final loss must always win.
  const PruningComparison cmp =
      compare_pruning(spec, ds, space, config, 100, 1234);
  bool oracle_always_first = cmp.repeats.size() == 100;
  for (const RepeatOutcome& r : cmp.repeats) {
    if (r.oracle_winner != r.true_best || r.oracle_rank != 1) {
      oracle_always_first = false;
    }
  }

  // Step accounting against the closed-form ladder budget.
  ShaConfig ladder = config;
  ladder.min_resource = 5;
  ladder.metric = ShaMetric::kValidationLoss;
  const ShaResult result = run_sha(spec, ds, space, ladder, 77);
  std::int64_t expected = 0;
  int alive = ladder.num_trials;
  std::int64_t prev_resource = 0;
  for (int r = 0; r < ladder.num_rungs; ++r) {
    const std::int64_t resource = ladder.resource_at(r);
    expected += static_cast<std::int64_t>(alive) * (resource - prev_resource);
    prev_resource = resource;
    alive = (alive + ladder.reduction_factor - 1) / ladder.reduction_factor;
  }
  const bool budget_ok = result.total_steps == expected;

  // Checkpoint round trips continue the exact trajectory.
  bool resume_exact = true;
  const fs::path ck = fs::temp_directory_path() / "ticlab_accept_resume.bin";
  for (int k = 0; k < 20; ++k) {
    const TrainConfig trial =
        sample_hyperparams(space, derive_seed(2020, k), 60, 8);
    TrainState straight = make_train_state(spec, ds, trial);
    train_steps(spec, ds, trial, straight, 60);
    TrainState first = make_train_state(spec, ds, trial);
    train_steps(spec, ds, trial, first, 23);
    save_checkpoint(first, ck.string());
    TrainState second = load_checkpoint(ck.string(), spec);
    train_steps(spec, ds, trial, second, 37);
    if (!bitwise_equal(straight.params.values, second.params.values) ||
        !bitwise_equal(straight.velocity, second.velocity) ||
        straight.step != second.step ||
        straight.rng_state != second.rng_state ||
        straight.epoch_order != second.epoch_order ||
        straight.epoch_pos != second.epoch_pos ||
        straight.diverged != second.diverged) {
      resume_exact = false;
    }
  }
  fs::remove(ck);

  const double secs = seconds_since(t0);
  const bool pass =
      oracle_always_first && budget_ok && resume_exact && secs <= 600.0;
  verdict(10, pass,
          fmt("oracle metric wins 100/100; ladder spent %lld of %lld planned "
              "steps; 20 checkpoint resumes bit-exact",
              static_cast<long long>(result.total_steps),
              static_cast<long long>(expected)),
          secs);
  CHECK(oracle_always_first);
  CHECK(budget_ok);
  CHECK(resume_exact);
  CHECK(secs <= 600.0);
}

TEST_CASE("criterion 11: the pruning comparison is complete and reproducible") {
  const auto t0 = Clock::now();
  NetworkSpec spec;
  spec.input_dim = 3;
  spec.hidden_widths = {4};
  spec.num_classes = 2;
  const LabeledDataset ds = pruning_blobs();
  const HpSpace space = tame_space();

  ShaConfig config;
  config.num_trials = 6;
  config.reduction_factor = 2;
  config.min_resource = 5;
  config.num_rungs = 3;
  config.batch_size = 8;

  const PruningComparison cmp =
      compare_pruning(spec, ds, space, config, 20, 4321);
  const bool complete = cmp.repeats.size() == 20;
  bool oracle_first = complete;
  for (const RepeatOutcome& r : cmp.repeats) {
    if (r.oracle_rank != 1) oracle_first = false;
  }
  bool histograms_ok = true;
  std::string detail;
  const struct {
    const char* name;
    const std::vector<int>* h;
  } arms[] = {{"validation", &cmp.validation_rank_histogram},
              {"tic", &cmp.tic_rank_histogram},
              {"oracle", &cmp.oracle_rank_histogram}};
  for (const auto& arm : arms) {
    int total = 0;
    std::string buckets;
    for (int v : *arm.h) {
      total += v;
      buckets += fmt("%d,", v);
    }
    if (!buckets.empty()) buckets.pop_back();
    if (total != 20 ||
        static_cast<int>(arm.h->size()) != config.num_trials) {
      histograms_ok = false;
    }
    detail += fmt("%s=[%s] ", arm.name, buckets.c_str());
  }

  const PruningComparison again =
      compare_pruning(spec, ds, space, config, 20, 4321);
  const bool deterministic =
      pruning_comparison_to_json(cmp) == pruning_comparison_to_json(again);

  const double secs = seconds_since(t0);
  const bool pass =
      complete && oracle_first && histograms_ok && deterministic && secs <= 600.0;
  verdict(11, pass, detail + "winner-rank histograms over 20 repeats", secs);
  CHECK(complete);
  CHECK(oracle_first);
  CHECK(histograms_ok);
  CHECK(deterministic);
  CHECK(secs <= 600.0);
}

TEST_CASE("criterion 12: every command is byte-identical on a rerun") {
  const auto t0 = Clock::now();
  const fs::path scratch = fresh_dir("determinism");

  const std::string network =
      R"("network": {"input_dim": 3, "hidden_widths": [4], "num_classes": 2})";
  const std::string blobs40 =
      R"("dataset": {"source": "blobs", "n": 40, "input_dim": 3, "num_classes": 2, "seed": 7})";

  write_file(scratch / "train.json",
             "{" + network + ", " + blobs40 +
                 R"(, "train": {"learning_rate": 0.05, "horizon_steps": 20, "batch_size": 8, "seed": 1}})");

  const fs::path params_bin = scratch / "probe_params.bin";
  save_params_file(
      params_bin.string(),
      ParamVector::initialize(NetworkSpec{3, {4}, 2}, 11).values);
  write_file(scratch / "tic.json",
             "{" + network + ", " + blobs40 + R"(, "params": ")" +
                 params_bin.string() +
                 R"(", "tic": {"fidelities": ["exact", "diag", "lower_bound"], "seed": 5}, "dump_matrices": "diag"})");

  write_file(scratch / "correlate.json",
             "{" + network +
                 R"(, "dataset": {"source": "blobs", "n": 60, "input_dim": 3, "num_classes": 2, "seed": 3}, "sweep": {"trials": 4, "steps": 30, "batch_size": 8, "seed": 3}, "space": {"lr_hi": 0.3, "momentum_hi": 0.5}})");

  write_file(scratch / "hpo.json",
             "{" + network +
                 R"(, "dataset": {"source": "blobs", "n": 80, "input_dim": 3, "num_classes": 2, "seed": 5}, "sha": {"num_trials": 4, "reduction_factor": 2, "min_resource": 5, "num_rungs": 2, "batch_size": 8, "metric": "tic_score", "seed": 2}, "space": {"lr_hi": 0.3, "momentum_hi": 0.5}})");

  write_file(scratch / "ntk-drift.json",
             "{" + network + ", " + blobs40 +
                 R"(, "train": {"learning_rate": 0.1, "horizon_steps": 10, "batch_size": 8, "seed": 1}, "probe": {"count": 5, "snapshot_every": 5}})");

  bool all_zero = true;
  bool all_identical = true;
  std::string detail;
  for (const char* cmd :
       {"train", "tic", "correlate", "hpo", "ntk-drift"}) {
    const fs::path cfg = scratch / (std::string(cmd) + ".json");
    const int code_a =
        run_tool(cmd, cfg, scratch / (std::string(cmd) + "_a"), scratch);
    const int code_b =
        run_tool(cmd, cfg, scratch / (std::string(cmd) + "_b"), scratch);
    if (code_a != 0 || code_b != 0) all_zero = false;
    const auto a = dir_bytes(scratch / (std::string(cmd) + "_a"));
    const auto b = dir_bytes(scratch / (std::string(cmd) + "_b"));
    const bool same = a == b && !a.empty();
    if (!same) all_identical = false;
    detail += fmt("%s:%s ", cmd, same && code_a == 0 ? "ok" : "DIFF");
  }

  const double secs = seconds_since(t0);
  const bool pass = all_zero && all_identical;
  verdict(12, pass, detail + "(both runs compared file by file)", secs);
  CHECK(all_zero);
  CHECK(all_identical);
}
