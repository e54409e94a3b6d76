#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace ticlab {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMajorMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Activation { kIdentity, kRelu };

const char* to_string(Activation a);
Activation activation_from_string(const std::string& s);

// Fully connected softmax classifier: input -> hidden widths -> class logits.
// All hidden layers share one activation; the output layer is affine (the
// softmax lives in the loss). With skip_connections enabled, hidden layer
// l >= 2 computes act(W_l h + b_l) + h between equal-width hidden layers;
// the first hidden layer and the output layer have no residual addition.
struct NetworkSpec {
  int input_dim = 0;
  std::vector<int> hidden_widths;
  int num_classes = 0;
  Activation activation = Activation::kRelu;
  bool skip_connections = false;

  // Layers are indexed 0..num_layers()-1 in forward order; the last one is
  // the output layer. A spec with no hidden widths is a single affine layer.
  int num_layers() const { return static_cast<int>(hidden_widths.size()) + 1; }
  int fan_in(int layer) const;
  int fan_out(int layer) const;
  std::int64_t param_count() const;

  // Throws std::invalid_argument on malformed dimensions or on skip
  // connections with unequal hidden widths.
  void validate() const;
};

// Addressing for one layer inside the flat parameter vector: the row-major
// (fan_out x fan_in) weight block, then the fan_out bias entries.
struct LayerSegment {
  int layer = 0;
  std::int64_t weight_offset = 0;
  int rows = 0;
  int cols = 0;
  std::int64_t bias_offset = 0;

  std::int64_t size() const {
    return static_cast<std::int64_t>(rows) * cols + rows;
  }
};

struct ParamLayout {
  std::vector<LayerSegment> segments;
  std::int64_t dim = 0;

  static ParamLayout for_spec(const NetworkSpec& spec);
};

using WeightView = Eigen::Map<const RowMajorMatrix>;
using MutableWeightView = Eigen::Map<RowMajorMatrix>;
using BiasView = Eigen::Map<const Vector>;
using MutableBiasView = Eigen::Map<Vector>;

// Flat parameter vector plus the segment table that addresses it.
struct ParamVector {
  Vector values;
  ParamLayout layout;

  static ParamVector zeros(const NetworkSpec& spec);

  // Seeded Gaussian weights: He scaling sqrt(2/fan_in) for ReLU, Xavier
  // scaling sqrt(1/fan_in) for Identity. Biases start at zero. The draw
  // order (layer by layer, row-major within a weight block) is part of the
  // reproducibility contract.
  static ParamVector initialize(const NetworkSpec& spec, std::uint64_t seed);

  std::int64_t dim() const { return layout.dim; }

  WeightView weight(int layer) const;
  MutableWeightView weight(int layer);
  BiasView bias(int layer) const;
  MutableBiasView bias(int layer);
};

// Activations and pre-activations of one forward pass, kept for backward
// passes. acts[0] is the input; acts[l+1] is the post-residual output of
// hidden layer l; pre_acts[l] is z_l = W_l h + b_l for hidden layer l.
struct ForwardTrace {
  std::vector<Vector> acts;
  std::vector<Vector> pre_acts;
  Vector logits;
};

Vector forward(const NetworkSpec& spec, const ParamVector& params,
               const Eigen::Ref<const Vector>& x);

ForwardTrace forward_trace(const NetworkSpec& spec, const ParamVector& params,
                           const Eigen::Ref<const Vector>& x);

// Numerically safe softmax helpers (max-subtraction).
Vector softmax(const Eigen::Ref<const Vector>& logits);
double log_sum_exp(const Eigen::Ref<const Vector>& logits);

// Cross-entropy -log softmax(logits)[label].
double loss_from_logits(const Eigen::Ref<const Vector>& logits, int label);

double loss(const NetworkSpec& spec, const ParamVector& params,
            const Eigen::Ref<const Vector>& x, int label);

}  // namespace ticlab
