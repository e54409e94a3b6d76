#include "ticlab/info_matrices.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <utility>

#include <Eigen/Eigenvalues>

#include "ticlab/rng.hpp"

namespace ticlab {

static_assert(std::endian::native == std::endian::little,
              "matrix dump format assumes a little-endian host");

const char* to_string(Representation r) {
  switch (r) {
    case Representation::kDense:
      return "dense";
    case Representation::kBlock:
      return "block";
    case Representation::kDiag:
      return "diag";
  }
  return "?";
}

Representation representation_from_string(const std::string& s) {
  if (s == "dense") return Representation::kDense;
  if (s == "block") return Representation::kBlock;
  if (s == "diag") return Representation::kDiag;
  throw std::invalid_argument("unknown matrix representation: " + s);
}

namespace {

void check_inputs(const NetworkSpec& spec, const ParamVector& params,
                  const LabeledDataset& ds, std::span<const int> indices) {
  spec.validate();
  if (params.dim() != spec.param_count()) {
    throw std::invalid_argument("parameter vector does not match network spec");
  }
  if (ds.dim() != spec.input_dim) {
    throw std::invalid_argument("dataset width does not match network input");
  }
  if (indices.empty()) {
    throw std::invalid_argument("information matrix over an empty index set");
  }
  for (int idx : indices) {
    if (idx < 0 || idx >= ds.n()) {
      throw std::out_of_range("dataset index out of range");
    }
  }
}

// Entry (j, j2) of L^T R, accumulated with k ascending. Every representation
// funnels through this one compiled reduction (noinline keeps call sites from
// specializing it differently), so entries shared between representations,
// the diagonal in particular, come out bit-identical by construction.
[[gnu::noinline]] double factor_entry(const Matrix& l, const Matrix& r,
                                      std::int64_t j, std::int64_t j2) {
  double s = 0.0;
  const std::int64_t rows = l.rows();
  for (std::int64_t k = 0; k < rows; ++k) s += l(k, j) * r(k, j2);
  return s;
}

// One example's contribution as a factor pair; the assembled matrix gains
// L^T R (symmetric for every producer below).
struct FactorPair {
  Matrix left;
  Matrix right;
};

class Accumulator {
 public:
  Accumulator(Representation repr, const ParamLayout& layout, int dense_cap)
      : repr_(repr), d_(layout.dim) {
    switch (repr_) {
      case Representation::kDense:
        if (d_ > dense_cap) {
          throw CapExceededError("dense representation of dimension " +
                                 std::to_string(d_) + " exceeds cap " +
                                 std::to_string(dense_cap));
        }
        dense_ = Matrix::Zero(d_, d_);
        break;
      case Representation::kBlock:
        for (const LayerSegment& seg : layout.segments) {
          blocks_.push_back(Matrix::Zero(seg.size(), seg.size()));
          offsets_.push_back(seg.weight_offset);
        }
        break;
      case Representation::kDiag:
        diag_ = Vector::Zero(d_);
        break;
    }
  }

  void add(const FactorPair& fp) {
    switch (repr_) {
      case Representation::kDense:
        for (std::int64_t j = 0; j < d_; ++j) {
          for (std::int64_t j2 = j; j2 < d_; ++j2) {
            dense_(j, j2) += factor_entry(fp.left, fp.right, j, j2);
          }
        }
        break;
      case Representation::kBlock:
        for (std::size_t b = 0; b < blocks_.size(); ++b) {
          Matrix& blk = blocks_[b];
          const std::int64_t off = offsets_[b];
          for (std::int64_t r = 0; r < blk.rows(); ++r) {
            for (std::int64_t r2 = r; r2 < blk.rows(); ++r2) {
              blk(r, r2) += factor_entry(fp.left, fp.right, off + r, off + r2);
            }
          }
        }
        break;
      case Representation::kDiag:
        for (std::int64_t j = 0; j < d_; ++j) {
          diag_(j) += factor_entry(fp.left, fp.right, j, j);
        }
        break;
    }
  }

  // Scales by 1/n and mirrors the stored upper triangle.
  InfoMatrix finish(double inv_n) {
    switch (repr_) {
      case Representation::kDense: {
        for (std::int64_t j = 0; j < d_; ++j) {
          for (std::int64_t j2 = j; j2 < d_; ++j2) {
            dense_(j, j2) *= inv_n;
            dense_(j2, j) = dense_(j, j2);
          }
        }
        return DenseSymMatrix{std::move(dense_)};
      }
      case Representation::kBlock: {
        for (Matrix& blk : blocks_) {
          for (std::int64_t r = 0; r < blk.rows(); ++r) {
            for (std::int64_t r2 = r; r2 < blk.rows(); ++r2) {
              blk(r, r2) *= inv_n;
              blk(r2, r) = blk(r, r2);
            }
          }
        }
        return BlockDiagMatrix{std::move(blocks_), std::move(offsets_), d_};
      }
      case Representation::kDiag: {
        for (std::int64_t j = 0; j < d_; ++j) diag_(j) *= inv_n;
        return DiagVector{std::move(diag_)};
      }
    }
    throw std::logic_error("unreachable");
  }

 private:
  Representation repr_;
  std::int64_t d_;
  Matrix dense_;
  std::vector<Matrix> blocks_;
  std::vector<std::int64_t> offsets_;
  Vector diag_;
};

template <typename FactorFn>
InfoMatrix assemble(const NetworkSpec& spec, const ParamVector& params,
                    const LabeledDataset& ds, std::span<const int> indices,
                    Representation repr, int dense_cap, FactorFn&& factors) {
  check_inputs(spec, params, ds, indices);
  Accumulator acc(repr, params.layout, dense_cap);
  for (int idx : indices) {
    const ForwardTrace trace = forward_trace(spec, params, ds.x(idx));
    acc.add(factors(trace, idx));
  }
  return acc.finish(1.0 / static_cast<double>(indices.size()));
}

Matrix logit_jacobian(const NetworkSpec& spec, const ParamVector& params,
                      const ForwardTrace& trace) {
  const int k = spec.num_classes;
  Matrix jac(k, params.dim());
  Vector unit = Vector::Zero(k);
  for (int c = 0; c < k; ++c) {
    unit(c) = 1.0;
    jac.row(c) = grad_from_logit_seed(spec, params, trace, unit).transpose();
    unit(c) = 0.0;
  }
  return jac;
}

}  // namespace

double DenseSymMatrix::trace() const {
  double t = 0.0;
  for (std::int64_t j = 0; j < m.rows(); ++j) t += m(j, j);
  return t;
}

Vector DenseSymMatrix::diagonal() const {
  Vector out(m.rows());
  for (std::int64_t j = 0; j < m.rows(); ++j) out(j) = m(j, j);
  return out;
}

double DenseSymMatrix::min_eigenvalue() const {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

double BlockDiagMatrix::trace() const {
  double t = 0.0;
  for (const Matrix& blk : blocks) {
    for (std::int64_t r = 0; r < blk.rows(); ++r) t += blk(r, r);
  }
  return t;
}

Vector BlockDiagMatrix::diagonal() const {
  Vector out = Vector::Zero(dim_);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    for (std::int64_t r = 0; r < blocks[b].rows(); ++r) {
      out(offsets[b] + r) = blocks[b](r, r);
    }
  }
  return out;
}

double DiagVector::trace() const {
  double t = 0.0;
  for (std::int64_t j = 0; j < values.size(); ++j) t += values(j);
  return t;
}

Representation representation_of(const InfoMatrix& m) {
  if (std::holds_alternative<DenseSymMatrix>(m)) return Representation::kDense;
  if (std::holds_alternative<BlockDiagMatrix>(m)) return Representation::kBlock;
  return Representation::kDiag;
}

std::int64_t dim_of(const InfoMatrix& m) {
  return std::visit([](const auto& v) { return v.dim(); }, m);
}

double trace_of(const InfoMatrix& m) {
  return std::visit([](const auto& v) { return v.trace(); }, m);
}

DiagVector diagonal_of(const InfoMatrix& m) {
  if (const auto* d = std::get_if<DiagVector>(&m)) return *d;
  if (const auto* b = std::get_if<BlockDiagMatrix>(&m)) {
    return DiagVector{b->diagonal()};
  }
  return DiagVector{std::get<DenseSymMatrix>(m).diagonal()};
}

InfoMatrix ggn(const NetworkSpec& spec, const ParamVector& params,
               const LabeledDataset& ds, std::span<const int> indices,
               Representation repr, int dense_cap) {
  return assemble(
      spec, params, ds, indices, repr, dense_cap,
      [&](const ForwardTrace& trace, int) {
        const Matrix jac = logit_jacobian(spec, params, trace);
        const Vector p = softmax(trace.logits);
        const Vector q = jac.transpose() * p;
        Matrix right(jac.rows(), jac.cols());
        for (std::int64_t c = 0; c < jac.rows(); ++c) {
          right.row(c) = p(c) * (jac.row(c) - q.transpose());
        }
        return FactorPair{jac, std::move(right)};
      });
}

InfoMatrix fisher_exact(const NetworkSpec& spec, const ParamVector& params,
                        const LabeledDataset& ds, std::span<const int> indices,
                        Representation repr, int dense_cap) {
  return assemble(
      spec, params, ds, indices, repr, dense_cap,
      [&](const ForwardTrace& trace, int) {
        const int k = spec.num_classes;
        const Vector p = softmax(trace.logits);
        Matrix left(k, params.dim());
        Matrix right(k, params.dim());
        for (int y = 0; y < k; ++y) {
          Vector seed = p;
          seed(y) -= 1.0;
          const Vector g = grad_from_logit_seed(spec, params, trace, seed);
          left.row(y) = g.transpose();
          right.row(y) = p(y) * g.transpose();
        }
        return FactorPair{std::move(left), std::move(right)};
      });
}

InfoMatrix fisher_mc(const NetworkSpec& spec, const ParamVector& params,
                     const LabeledDataset& ds, std::span<const int> indices,
                     int samples_per_input, std::uint64_t seed,
                     Representation repr, int dense_cap) {
  if (samples_per_input < 1) {
    throw std::invalid_argument("fisher_mc requires samples_per_input >= 1");
  }
  // One shared stream, consumed in index order; results are a pure function
  // of (seed, indices).
  Rng rng(seed);
  const double weight = 1.0 / static_cast<double>(samples_per_input);
  return assemble(
      spec, params, ds, indices, repr, dense_cap,
      [&](const ForwardTrace& trace, int) {
        const int k = spec.num_classes;
        const Vector p = softmax(trace.logits);
        Matrix left(samples_per_input, params.dim());
        Matrix right(samples_per_input, params.dim());
        for (int s = 0; s < samples_per_input; ++s) {
          const int y = rng.categorical(p.data(), k);
          Vector logit_seed = p;
          logit_seed(y) -= 1.0;
          const Vector g =
              grad_from_logit_seed(spec, params, trace, logit_seed);
          left.row(s) = g.transpose();
          right.row(s) = weight * g.transpose();
        }
        return FactorPair{std::move(left), std::move(right)};
      });
}

InfoMatrix grad_covariance(const NetworkSpec& spec, const ParamVector& params,
                           const LabeledDataset& ds,
                           std::span<const int> indices, Representation repr,
                           int dense_cap) {
  return assemble(
      spec, params, ds, indices, repr, dense_cap,
      [&](const ForwardTrace& trace, int idx) {
        Vector seed = softmax(trace.logits);
        seed(ds.labels[static_cast<std::size_t>(idx)]) -= 1.0;
        const Vector g = grad_from_logit_seed(spec, params, trace, seed);
        Matrix left(1, params.dim());
        left.row(0) = g.transpose();
        return FactorPair{left, left};
      });
}

NtkGram ntk_gram(const NetworkSpec& spec, const ParamVector& params,
                 const LabeledDataset& ds, std::span<const int> indices,
                 int gram_cap) {
  check_inputs(spec, params, ds, indices);
  const int k = spec.num_classes;
  const std::int64_t rows = static_cast<std::int64_t>(indices.size()) * k;
  if (rows > gram_cap) {
    throw CapExceededError("NTK Gram of " + std::to_string(rows) +
                           " rows exceeds cap " + std::to_string(gram_cap));
  }
  Matrix stacked(rows, params.dim());
  std::int64_t r = 0;
  for (int idx : indices) {
    const ForwardTrace trace = forward_trace(spec, params, ds.x(idx));
    const Matrix jac = logit_jacobian(spec, params, trace);
    for (int c = 0; c < k; ++c) stacked.row(r++) = jac.row(c);
  }
  NtkGram out;
  out.m = stacked * stacked.transpose();
  out.num_examples = static_cast<int>(indices.size());
  out.num_classes = k;
  return out;
}

double NtkGram::relative_distance(const NtkGram& other) const {
  if (m.rows() != other.m.rows() || m.cols() != other.m.cols()) {
    throw std::invalid_argument("Gram matrices have different shapes");
  }
  const double base = m.norm();
  if (base == 0.0) throw std::invalid_argument("reference Gram is zero");
  return (m - other.m).norm() / base;
}

namespace {

constexpr char kMagic[4] = {'T', 'I', 'C', 'M'};
constexpr std::uint32_t kTagDense = 0;
constexpr std::uint32_t kTagBlock = 1;
constexpr std::uint32_t kTagDiag = 2;

void write_u32(std::ofstream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_f64s(std::ofstream& os, const double* data, std::int64_t count) {
  os.write(reinterpret_cast<const char*>(data),
           static_cast<std::streamsize>(count * sizeof(double)));
}

// Writes a column-major Eigen matrix as row-major f64, one row at a time.
void write_rows(std::ofstream& os, const Matrix& m) {
  Vector row(m.cols());
  for (std::int64_t r = 0; r < m.rows(); ++r) {
    row = m.row(r);
    write_f64s(os, row.data(), row.size());
  }
}

std::uint32_t read_u32(std::ifstream& is, const std::string& what) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw std::runtime_error("matrix file truncated reading " + what);
  return v;
}

void read_f64s(std::ifstream& is, double* data, std::int64_t count,
               const std::string& what) {
  is.read(reinterpret_cast<char*>(data),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!is) throw std::runtime_error("matrix file truncated reading " + what);
}

Matrix read_rows(std::ifstream& is, std::int64_t rows, std::int64_t cols,
                 const std::string& what) {
  Matrix m(rows, cols);
  Vector row(cols);
  for (std::int64_t r = 0; r < rows; ++r) {
    read_f64s(is, row.data(), cols, what);
    m.row(r) = row;
  }
  return m;
}

}  // namespace

void dump_matrix(const InfoMatrix& m, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os.write(kMagic, 4);
  write_u32(os, static_cast<std::uint32_t>(dim_of(m)));
  if (const auto* d = std::get_if<DenseSymMatrix>(&m)) {
    write_u32(os, kTagDense);
    write_u32(os, 0);
    write_rows(os, d->m);
  } else if (const auto* b = std::get_if<BlockDiagMatrix>(&m)) {
    write_u32(os, kTagBlock);
    write_u32(os, static_cast<std::uint32_t>(b->blocks.size()));
    for (std::size_t i = 0; i < b->blocks.size(); ++i) {
      write_u32(os, static_cast<std::uint32_t>(b->blocks[i].rows()));
      write_u32(os, static_cast<std::uint32_t>(b->offsets[i]));
      write_rows(os, b->blocks[i]);
    }
  } else {
    const auto& dv = std::get<DiagVector>(m);
    write_u32(os, kTagDiag);
    write_u32(os, 0);
    write_f64s(os, dv.values.data(), dv.values.size());
  }
  if (!os) throw std::runtime_error("write failed for " + path);
}

InfoMatrix load_matrix(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error(path + " is not a matrix dump (bad magic)");
  }
  const std::int64_t dim = read_u32(is, "dimension");
  const std::uint32_t tag = read_u32(is, "representation tag");
  const std::uint32_t count = read_u32(is, "block count");
  InfoMatrix out;
  if (tag == kTagDense) {
    if (count != 0) throw std::runtime_error("dense dump with block count");
    out = DenseSymMatrix{read_rows(is, dim, dim, "dense payload")};
  } else if (tag == kTagBlock) {
    BlockDiagMatrix b;
    b.dim_ = dim;
    std::int64_t prev_end = 0;
    for (std::uint32_t i = 0; i < count; ++i) {
      const std::int64_t bd = read_u32(is, "block dimension");
      const std::int64_t off = read_u32(is, "block offset");
      if (off < prev_end || off + bd > dim) {
        throw std::runtime_error("block layout out of range in " + path);
      }
      prev_end = off + bd;
      b.offsets.push_back(off);
      b.blocks.push_back(read_rows(is, bd, bd, "block payload"));
    }
    out = std::move(b);
  } else if (tag == kTagDiag) {
    if (count != 0) throw std::runtime_error("diag dump with block count");
    DiagVector dv;
    dv.values.resize(dim);
    read_f64s(is, dv.values.data(), dim, "diagonal payload");
    out = std::move(dv);
  } else {
    throw std::runtime_error("unknown representation tag in " + path);
  }
  is.peek();
  if (!is.eof()) throw std::runtime_error("trailing bytes in " + path);
  return out;
}

}  // namespace ticlab
