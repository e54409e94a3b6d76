#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ticlab/info_matrices.hpp"

namespace ticlab {

// Penalty fidelities, from highest cost to cheapest bound.
enum class Fidelity { kExact, kBlock, kDiag, kLowerBound };

enum class CurvatureSource { kFisherExact, kFisherMc, kHessian };

enum class TraceSource { kAssembled, kHutchinson };

const char* to_string(Fidelity f);
Fidelity fidelity_from_string(const std::string& s);
const char* to_string(CurvatureSource s);
CurvatureSource curvature_source_from_string(const std::string& s);
const char* to_string(TraceSource s);
TraceSource trace_source_from_string(const std::string& s);

// tr((H + damping I)^-1 C) by Cholesky solve. Throws std::runtime_error when
// the damped curvature is not positive definite.
double bias_exact(const DenseSymMatrix& h, const DenseSymMatrix& c,
                  double damping);

// Blockwise tr((H_b + damping I)^-1 C_b); requires identical block layouts.
double bias_block(const BlockDiagMatrix& h, const BlockDiagMatrix& c,
                  double damping);

// sum_i c_i / (h_i + damping). Covariance entries in [-1e-12, 0) are treated
// as rounding noise and clamped to zero; anything more negative throws.
double bias_diag(const DiagVector& h, const DiagVector& c, double damping);

// trace_c / (trace_h + dim * damping): a closed-form lower bound on the
// diagonal penalty that needs only the two traces.
double bias_lower_bound(double trace_c, double trace_h, std::int64_t dim,
                        double damping);

struct TraceEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
  int samples = 0;
};

// Randomized trace estimate E[z^T M z] with Rademacher probes through the
// matrix-free operator `apply`. std_error is the standard error of the mean
// over samples (NaN when samples == 1).
TraceEstimate hutchinson_trace(const std::function<Vector(const Vector&)>& apply,
                               std::int64_t dim, int samples,
                               std::uint64_t seed);

struct TicConfig {
  // Fidelities whose penalties go into the report. The lower bound is always
  // computed; score_fidelity is added implicitly when missing.
  std::vector<Fidelity> fidelities;
  Fidelity score_fidelity = Fidelity::kLowerBound;
  // Split that feeds curvature / covariance assembly (and the randomized
  // trace). The empirical loss and the n in penalty/n always come from the
  // train split; holdout-based bias estimation sets this to kValidation.
  Split matrix_split = Split::kTrain;
  // 0 resolves to max(1e-5 * trace_h / dim, 1e-8).
  double damping = 0.0;
  CurvatureSource curvature = CurvatureSource::kFisherExact;
  int mc_samples = 8;
  TraceSource trace_h_source = TraceSource::kAssembled;
  int hutchinson_samples = 64;
  int dense_cap = kDenseMatrixCap;
  std::uint64_t seed = 0;
};

struct TicReport {
  std::int64_t dim = 0;
  int n_train = 0;
  double train_loss = 0.0;
  Split matrix_split = Split::kTrain;
  double damping = 0.0;
  double trace_h = 0.0;
  double trace_c = 0.0;
  std::optional<double> bias_exact;
  std::optional<double> bias_block;
  std::optional<double> bias_diag;
  double bias_lower_bound = 0.0;
  // Present when the curvature trace came from the randomized estimator.
  std::optional<double> trace_h_std_error;
  Fidelity score_fidelity = Fidelity::kLowerBound;
  CurvatureSource curvature_source = CurvatureSource::kFisherExact;
  double tic_score = 0.0;

  double penalty(Fidelity f) const;
};

// Full criterion pipeline: mean train loss, curvature and gradient
// covariance over config.matrix_split in the representations the requested
// fidelities need, penalties, and the resulting score
// train_loss + penalty(score_fidelity) / n_train.
TicReport compute_tic(const NetworkSpec& spec, const ParamVector& params,
                      const LabeledDataset& ds, const TicConfig& config = {});

// Dense loss Hessian of the batch-mean loss, assembled column by column from
// directional-derivative products and symmetrized. Cost scales with
// dim * (cost of one gradient), so it is gated by dense_cap.
Matrix dense_hessian(const NetworkSpec& spec, const ParamVector& params,
                     const LabeledDataset& ds, std::span<const int> indices,
                     int dense_cap = kDenseMatrixCap);

std::string tic_report_to_json(const TicReport& report);
TicReport tic_report_from_json(const std::string& text);

}  // namespace ticlab
