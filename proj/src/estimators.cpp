#include "ticlab/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Cholesky>

#include <json.hpp>

#include "ticlab/autodiff.hpp"
#include "ticlab/rng.hpp"

namespace ticlab {

const char* to_string(Fidelity f) {
  switch (f) {
    case Fidelity::kExact:
      return "exact";
    case Fidelity::kBlock:
      return "block";
    case Fidelity::kDiag:
      return "diag";
    case Fidelity::kLowerBound:
      return "lower_bound";
  }
  return "?";
}

Fidelity fidelity_from_string(const std::string& s) {
  if (s == "exact") return Fidelity::kExact;
  if (s == "block") return Fidelity::kBlock;
  if (s == "diag") return Fidelity::kDiag;
  if (s == "lower_bound") return Fidelity::kLowerBound;
  throw std::invalid_argument("unknown fidelity: " + s);
}

const char* to_string(CurvatureSource s) {
  switch (s) {
    case CurvatureSource::kFisherExact:
      return "fisher_exact";
    case CurvatureSource::kFisherMc:
      return "fisher_mc";
    case CurvatureSource::kHessian:
      return "hessian";
  }
  return "?";
}

CurvatureSource curvature_source_from_string(const std::string& s) {
  if (s == "fisher_exact") return CurvatureSource::kFisherExact;
  if (s == "fisher_mc") return CurvatureSource::kFisherMc;
  if (s == "hessian") return CurvatureSource::kHessian;
  throw std::invalid_argument("unknown curvature source: " + s);
}

const char* to_string(TraceSource s) {
  switch (s) {
    case TraceSource::kAssembled:
      return "assembled";
    case TraceSource::kHutchinson:
      return "hutchinson";
  }
  return "?";
}

TraceSource trace_source_from_string(const std::string& s) {
  if (s == "assembled") return TraceSource::kAssembled;
  if (s == "hutchinson") return TraceSource::kHutchinson;
  throw std::invalid_argument("unknown trace source: " + s);
}

namespace {

void check_damping(double damping) {
  if (!(damping >= 0.0) || !std::isfinite(damping)) {
    throw std::invalid_argument("damping must be finite and non-negative");
  }
}

double solved_trace(const Matrix& h, const Matrix& c, double damping) {
  Matrix damped = h;
  damped.diagonal().array() += damping;
  Eigen::LLT<Matrix> llt(damped);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error(
        "damped curvature is not positive definite; increase damping");
  }
  return llt.solve(c).trace();
}

}  // namespace

double bias_exact(const DenseSymMatrix& h, const DenseSymMatrix& c,
                  double damping) {
  check_damping(damping);
  if (h.dim() != c.dim()) {
    throw std::invalid_argument("curvature and covariance dimensions differ");
  }
  return solved_trace(h.m, c.m, damping);
}

double bias_block(const BlockDiagMatrix& h, const BlockDiagMatrix& c,
                  double damping) {
  check_damping(damping);
  if (h.dim() != c.dim() || h.blocks.size() != c.blocks.size()) {
    throw std::invalid_argument("block structures differ");
  }
  double total = 0.0;
  for (std::size_t b = 0; b < h.blocks.size(); ++b) {
    if (h.offsets[b] != c.offsets[b] ||
        h.blocks[b].rows() != c.blocks[b].rows()) {
      throw std::invalid_argument("block structures differ");
    }
    total += solved_trace(h.blocks[b], c.blocks[b], damping);
  }
  return total;
}

double bias_diag(const DiagVector& h, const DiagVector& c, double damping) {
  check_damping(damping);
  if (h.dim() != c.dim()) {
    throw std::invalid_argument("curvature and covariance dimensions differ");
  }
  double total = 0.0;
  for (std::int64_t i = 0; i < h.dim(); ++i) {
    double ci = c.values(i);
    if (ci < 0.0) {
      if (ci < -1e-12) {
        throw std::invalid_argument(
            "covariance diagonal has a negative entry beyond rounding noise");
      }
      ci = 0.0;
    }
    const double hi = h.values(i) + damping;
    if (!(hi > 0.0)) {
      throw std::runtime_error(
          "damped curvature diagonal must be positive; increase damping");
    }
    total += ci / hi;
  }
  return total;
}

double bias_lower_bound(double trace_c, double trace_h, std::int64_t dim,
                        double damping) {
  check_damping(damping);
  if (dim < 1) throw std::invalid_argument("dimension must be positive");
  if (trace_c < 0.0) {
    if (trace_c < -1e-12) {
      throw std::invalid_argument("covariance trace is negative");
    }
    trace_c = 0.0;
  }
  const double denom = trace_h + static_cast<double>(dim) * damping;
  if (!(denom > 0.0)) {
    throw std::runtime_error(
        "damped curvature trace must be positive; increase damping");
  }
  return trace_c / denom;
}

TraceEstimate hutchinson_trace(const std::function<Vector(const Vector&)>& apply,
                               std::int64_t dim, int samples,
                               std::uint64_t seed) {
  if (dim < 1) throw std::invalid_argument("dimension must be positive");
  if (samples < 1) throw std::invalid_argument("samples must be positive");
  Rng rng(seed);
  std::vector<double> draws(static_cast<std::size_t>(samples));
  Vector z(dim);
  for (int s = 0; s < samples; ++s) {
    for (std::int64_t i = 0; i < dim; ++i) z(i) = rng.rademacher();
    draws[static_cast<std::size_t>(s)] = z.dot(apply(z));
  }
  TraceEstimate out;
  out.samples = samples;
  double sum = 0.0;
  for (double t : draws) sum += t;
  out.estimate = sum / samples;
  if (samples == 1) {
    out.std_error = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  double sq = 0.0;
  for (double t : draws) sq += (t - out.estimate) * (t - out.estimate);
  out.std_error = std::sqrt(sq / (samples - 1) / samples);
  return out;
}

Matrix dense_hessian(const NetworkSpec& spec, const ParamVector& params,
                     const LabeledDataset& ds, std::span<const int> indices,
                     int dense_cap) {
  const std::int64_t d = params.dim();
  if (d > dense_cap) {
    throw CapExceededError("dense Hessian of dimension " + std::to_string(d) +
                           " exceeds cap " + std::to_string(dense_cap));
  }
  Matrix h(d, d);
  Vector unit = Vector::Zero(d);
  for (std::int64_t j = 0; j < d; ++j) {
    unit(j) = 1.0;
    h.col(j) = hvp(spec, params, ds, indices, unit);
    unit(j) = 0.0;
  }
  Matrix sym = 0.5 * (h + h.transpose());
  return sym;
}

double TicReport::penalty(Fidelity f) const {
  switch (f) {
    case Fidelity::kExact:
      if (!bias_exact) throw std::logic_error("exact penalty not computed");
      return *bias_exact;
    case Fidelity::kBlock:
      if (!bias_block) throw std::logic_error("block penalty not computed");
      return *bias_block;
    case Fidelity::kDiag:
      if (!bias_diag) throw std::logic_error("diag penalty not computed");
      return *bias_diag;
    case Fidelity::kLowerBound:
      return bias_lower_bound;
  }
  throw std::logic_error("unreachable");
}

namespace {

struct NeededReprs {
  bool dense = false;
  bool block = false;
  bool diag = false;
};

// Curvature matrix in one representation, honoring the configured source.
InfoMatrix curvature_matrix(const NetworkSpec& spec, const ParamVector& params,
                            const LabeledDataset& ds,
                            std::span<const int> indices,
                            const TicConfig& config, Representation repr) {
  switch (config.curvature) {
    case CurvatureSource::kFisherExact:
      return fisher_exact(spec, params, ds, indices, repr, config.dense_cap);
    case CurvatureSource::kFisherMc:
      return fisher_mc(spec, params, ds, indices, config.mc_samples,
                       derive_seed(config.seed, 1), repr, config.dense_cap);
    case CurvatureSource::kHessian: {
      // Column assembly is inherently dense-cost, so every representation of
      // the Hessian source routes through the dense matrix and its cap.
      const Matrix h =
          dense_hessian(spec, params, ds, indices, config.dense_cap);
      if (repr == Representation::kDense) return DenseSymMatrix{h};
      if (repr == Representation::kDiag) {
        return DiagVector{DenseSymMatrix{h}.diagonal()};
      }
      BlockDiagMatrix b;
      b.dim_ = params.dim();
      for (const LayerSegment& seg : params.layout.segments) {
        b.offsets.push_back(seg.weight_offset);
        b.blocks.push_back(
            h.block(seg.weight_offset, seg.weight_offset, seg.size(),
                    seg.size()));
      }
      return b;
    }
  }
  throw std::logic_error("unreachable");
}

}  // namespace

TicReport compute_tic(const NetworkSpec& spec, const ParamVector& params,
                      const LabeledDataset& ds, const TicConfig& config) {
  if (config.mc_samples < 1) {
    throw std::invalid_argument("mc_samples must be positive");
  }
  if (config.hutchinson_samples < 2) {
    throw std::invalid_argument("hutchinson_samples must be at least 2");
  }
  check_damping(config.damping);

  std::vector<Fidelity> wanted = config.fidelities;
  if (std::find(wanted.begin(), wanted.end(), config.score_fidelity) ==
      wanted.end()) {
    wanted.push_back(config.score_fidelity);
  }
  NeededReprs need;
  for (Fidelity f : wanted) {
    need.dense |= f == Fidelity::kExact;
    need.block |= f == Fidelity::kBlock;
    need.diag |= f == Fidelity::kDiag;
  }

  const std::vector<int>& train = ds.split(Split::kTrain);
  const std::vector<int>& basis = ds.split(config.matrix_split);
  if (basis.empty()) {
    throw std::invalid_argument("matrix split is empty");
  }
  TicReport report;
  report.dim = params.dim();
  report.n_train = static_cast<int>(train.size());
  report.train_loss = mean_loss(spec, params, ds, Split::kTrain);
  report.matrix_split = config.matrix_split;
  report.score_fidelity = config.score_fidelity;
  report.curvature_source = config.curvature;

  std::optional<DenseSymMatrix> h_dense, c_dense;
  std::optional<BlockDiagMatrix> h_block, c_block;
  std::optional<DiagVector> h_diag, c_diag;
  if (need.dense) {
    h_dense = std::get<DenseSymMatrix>(
        curvature_matrix(spec, params, ds, basis, config, Representation::kDense));
    c_dense = std::get<DenseSymMatrix>(grad_covariance(
        spec, params, ds, basis, Representation::kDense, config.dense_cap));
  }
  if (need.block) {
    h_block = std::get<BlockDiagMatrix>(
        curvature_matrix(spec, params, ds, basis, config, Representation::kBlock));
    c_block = std::get<BlockDiagMatrix>(grad_covariance(
        spec, params, ds, basis, Representation::kBlock, config.dense_cap));
  }
  // The diagonal doubles as the assembled-trace provider when no richer
  // representation already carries the same diagonal. The curvature diagonal
  // is skipped when its trace will come from the randomized estimator, so
  // the Hessian source stays matrix-free on that path.
  if (need.diag || (!need.dense && !need.block)) {
    c_diag = std::get<DiagVector>(grad_covariance(
        spec, params, ds, basis, Representation::kDiag, config.dense_cap));
  }
  const bool h_trace_needs_diag =
      config.trace_h_source == TraceSource::kAssembled && !need.dense &&
      !need.block;
  if (need.diag || h_trace_needs_diag) {
    h_diag = std::get<DiagVector>(
        curvature_matrix(spec, params, ds, basis, config, Representation::kDiag));
  }

  const auto assembled_trace = [](const std::optional<DenseSymMatrix>& dense,
                                  const std::optional<BlockDiagMatrix>& block,
                                  const std::optional<DiagVector>& diag) {
    if (dense) return dense->trace();
    if (block) return block->trace();
    return diag->trace();
  };
  report.trace_c = assembled_trace(c_dense, c_block, c_diag);
  if (config.trace_h_source == TraceSource::kHutchinson) {
    TraceEstimate est = hutchinson_trace(
        [&](const Vector& v) { return hvp(spec, params, ds, basis, v); },
        params.dim(), config.hutchinson_samples, derive_seed(config.seed, 2));
    report.trace_h = est.estimate;
    report.trace_h_std_error = est.std_error;
  } else {
    report.trace_h = assembled_trace(h_dense, h_block, h_diag);
  }

  report.damping =
      config.damping > 0.0
          ? config.damping
          : std::max(1e-5 * report.trace_h / static_cast<double>(report.dim),
                     1e-8);

  for (Fidelity f : wanted) {
    switch (f) {
      case Fidelity::kExact:
        report.bias_exact = bias_exact(*h_dense, *c_dense, report.damping);
        break;
      case Fidelity::kBlock:
        report.bias_block = bias_block(*h_block, *c_block, report.damping);
        break;
      case Fidelity::kDiag:
        report.bias_diag = bias_diag(*h_diag, *c_diag, report.damping);
        break;
      case Fidelity::kLowerBound:
        break;
    }
  }
  report.bias_lower_bound = bias_lower_bound(report.trace_c, report.trace_h,
                                             report.dim, report.damping);

  report.tic_score = report.train_loss +
                     report.penalty(config.score_fidelity) /
                         static_cast<double>(report.n_train);
  return report;
}

std::string tic_report_to_json(const TicReport& report) {
  // Flat object with a stable key set; fidelities that were not computed
  // serialize as null.
  const auto or_null = [](const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  nlohmann::json j;
  j["dim"] = report.dim;
  j["n_train"] = report.n_train;
  j["train_loss"] = report.train_loss;
  j["matrix_split"] = to_string(report.matrix_split);
  j["damping"] = report.damping;
  j["trace_h"] = report.trace_h;
  j["trace_c"] = report.trace_c;
  j["bias_exact"] = or_null(report.bias_exact);
  j["bias_block"] = or_null(report.bias_block);
  j["bias_diag"] = or_null(report.bias_diag);
  j["bias_lower_bound"] = report.bias_lower_bound;
  j["trace_h_std_error"] = or_null(report.trace_h_std_error);
  j["score_fidelity"] = to_string(report.score_fidelity);
  j["curvature_source"] = to_string(report.curvature_source);
  j["tic_score"] = report.tic_score;
  return j.dump(2) + "\n";
}

TicReport tic_report_from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  const auto opt = [&](const char* key) -> std::optional<double> {
    const nlohmann::json& v = j.at(key);
    if (v.is_null()) return std::nullopt;
    return v.get<double>();
  };
  TicReport r;
  r.dim = j.at("dim").get<std::int64_t>();
  r.n_train = j.at("n_train").get<int>();
  r.train_loss = j.at("train_loss").get<double>();
  r.matrix_split = split_from_string(j.at("matrix_split").get<std::string>());
  r.damping = j.at("damping").get<double>();
  r.trace_h = j.at("trace_h").get<double>();
  r.trace_c = j.at("trace_c").get<double>();
  r.bias_exact = opt("bias_exact");
  r.bias_block = opt("bias_block");
  r.bias_diag = opt("bias_diag");
  r.bias_lower_bound = j.at("bias_lower_bound").get<double>();
  r.trace_h_std_error = opt("trace_h_std_error");
  r.score_fidelity = fidelity_from_string(j.at("score_fidelity").get<std::string>());
  r.curvature_source =
      curvature_source_from_string(j.at("curvature_source").get<std::string>());
  r.tic_score = j.at("tic_score").get<double>();
  return r;
}

}  // namespace ticlab
