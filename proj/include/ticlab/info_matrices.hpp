#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "ticlab/autodiff.hpp"
#include "ticlab/dataset.hpp"
#include "ticlab/network.hpp"

namespace ticlab {

inline constexpr int kDenseMatrixCap = 5000;
inline constexpr int kGramCap = 2000;

// Requested size exceeds a hard representation cap (dense d x d or NTK Gram).
struct CapExceededError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Representation { kDense, kBlock, kDiag };

const char* to_string(Representation r);
Representation representation_from_string(const std::string& s);

// Symmetric d x d curvature/covariance matrix. Assembly mirrors the upper
// triangle, so symmetry is exact by construction.
struct DenseSymMatrix {
  Matrix m;

  std::int64_t dim() const { return m.rows(); }
  // Sum of diagonal entries in index order.
  double trace() const;
  Vector diagonal() const;
  double min_eigenvalue() const;
};

// Layer-block-diagonal approximation: one block per layer covering that
// layer's weights and bias, addressed by the flat-layout offsets.
struct BlockDiagMatrix {
  std::vector<Matrix> blocks;
  std::vector<std::int64_t> offsets;
  std::int64_t dim_ = 0;

  std::int64_t dim() const { return dim_; }
  double trace() const;
  Vector diagonal() const;
};

// Diagonal approximation.
struct DiagVector {
  Vector values;

  std::int64_t dim() const { return values.size(); }
  double trace() const;
};

using InfoMatrix = std::variant<DenseSymMatrix, BlockDiagMatrix, DiagVector>;

Representation representation_of(const InfoMatrix& m);
std::int64_t dim_of(const InfoMatrix& m);
double trace_of(const InfoMatrix& m);
// Exact diagonal extraction (the same accumulated values, never re-derived).
DiagVector diagonal_of(const InfoMatrix& m);

// Generalized Gauss-Newton of the batch-mean loss:
//   (1/n) sum_i J_i^T (diag(p_i) - p_i p_i^T) J_i.
// For softmax cross-entropy with piecewise-linear activations this is also
// the Fisher and (where the residual term vanishes) the Hessian.
InfoMatrix ggn(const NetworkSpec& spec, const ParamVector& params,
               const LabeledDataset& ds, std::span<const int> indices,
               Representation repr, int dense_cap = kDenseMatrixCap);

// Fisher information via the exact K-term closed sum over the model's own
// label distribution: (1/n) sum_i sum_y p_i[y] g_{i,y} g_{i,y}^T with
// g_{i,y} the loss gradient at label y. Independent computational route
// from ggn(); the two agree to numerical precision.
InfoMatrix fisher_exact(const NetworkSpec& spec, const ParamVector& params,
                        const LabeledDataset& ds, std::span<const int> indices,
                        Representation repr, int dense_cap = kDenseMatrixCap);

// Monte-Carlo Fisher: labels sampled from softmax(f(x_i)), samples_per_input
// draws per example, each contributing g g^T / samples_per_input. Unbiased
// for fisher_exact; bit-identical for a fixed seed.
InfoMatrix fisher_mc(const NetworkSpec& spec, const ParamVector& params,
                     const LabeledDataset& ds, std::span<const int> indices,
                     int samples_per_input, std::uint64_t seed,
                     Representation repr, int dense_cap = kDenseMatrixCap);

// Uncentered gradient second moment under the data labels:
//   (1/n) sum_i g_i g_i^T.
InfoMatrix grad_covariance(const NetworkSpec& spec, const ParamVector& params,
                           const LabeledDataset& ds,
                           std::span<const int> indices, Representation repr,
                           int dense_cap = kDenseMatrixCap);

// Empirical NTK Gram matrix J J^T over stacked (example, class) logit
// gradients; rows are ordered example-major. Capped at gram_cap rows.
struct NtkGram {
  Matrix m;
  int num_examples = 0;
  int num_classes = 0;

  double relative_distance(const NtkGram& other) const;
};

NtkGram ntk_gram(const NetworkSpec& spec, const ParamVector& params,
                 const LabeledDataset& ds, std::span<const int> indices,
                 int gram_cap = kGramCap);

// Binary dump: 16-byte header (magic "TICM", u32 dim, u32 representation
// tag, u32 block count or zero), then little-endian f64 payload; dense
// payloads are row-major, block payloads are prefixed by u32 block dims.
void dump_matrix(const InfoMatrix& m, const std::string& path);
InfoMatrix load_matrix(const std::string& path);

}  // namespace ticlab
