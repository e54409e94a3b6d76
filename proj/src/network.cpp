#include "ticlab/network.hpp"

#include <cmath>
#include <stdexcept>

#include "ticlab/rng.hpp"

namespace ticlab {

const char* to_string(Activation a) {
  return a == Activation::kIdentity ? "identity" : "relu";
}

Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::kIdentity;
  if (s == "relu") return Activation::kRelu;
  throw std::invalid_argument("unknown activation: " + s);
}

int NetworkSpec::fan_in(int layer) const {
  return layer == 0 ? input_dim : hidden_widths[layer - 1];
}

int NetworkSpec::fan_out(int layer) const {
  return layer == num_layers() - 1 ? num_classes : hidden_widths[layer];
}

std::int64_t NetworkSpec::param_count() const {
  std::int64_t d = 0;
  for (int l = 0; l < num_layers(); ++l) {
    d += static_cast<std::int64_t>(fan_in(l)) * fan_out(l) + fan_out(l);
  }
  return d;
}

void NetworkSpec::validate() const {
  if (input_dim < 1) throw std::invalid_argument("input_dim must be >= 1");
  if (num_classes < 2) throw std::invalid_argument("num_classes must be >= 2");
  for (int w : hidden_widths) {
    if (w < 1) throw std::invalid_argument("hidden widths must be >= 1");
  }
  if (skip_connections) {
    for (std::size_t i = 1; i < hidden_widths.size(); ++i) {
      if (hidden_widths[i] != hidden_widths[0]) {
        throw std::invalid_argument(
            "skip_connections requires equal hidden widths");
      }
    }
  }
}

ParamLayout ParamLayout::for_spec(const NetworkSpec& spec) {
  ParamLayout layout;
  std::int64_t offset = 0;
  for (int l = 0; l < spec.num_layers(); ++l) {
    LayerSegment seg;
    seg.layer = l;
    seg.rows = spec.fan_out(l);
    seg.cols = spec.fan_in(l);
    seg.weight_offset = offset;
    seg.bias_offset = offset + static_cast<std::int64_t>(seg.rows) * seg.cols;
    offset = seg.bias_offset + seg.rows;
    layout.segments.push_back(seg);
  }
  layout.dim = offset;
  return layout;
}

ParamVector ParamVector::zeros(const NetworkSpec& spec) {
  spec.validate();
  ParamVector p;
  p.layout = ParamLayout::for_spec(spec);
  p.values = Vector::Zero(p.layout.dim);
  return p;
}

ParamVector ParamVector::initialize(const NetworkSpec& spec,
                                    std::uint64_t seed) {
  ParamVector p = zeros(spec);
  Rng rng(seed);
  for (const LayerSegment& seg : p.layout.segments) {
    const double scale =
        spec.activation == Activation::kRelu && seg.layer < spec.num_layers() - 1
            ? std::sqrt(2.0 / seg.cols)
            : std::sqrt(1.0 / seg.cols);
    double* w = p.values.data() + seg.weight_offset;
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(seg.rows) * seg.cols;
         ++i) {
      w[i] = scale * rng.normal();
    }
  }
  return p;
}

WeightView ParamVector::weight(int layer) const {
  const LayerSegment& seg = layout.segments[layer];
  return WeightView(values.data() + seg.weight_offset, seg.rows, seg.cols);
}

MutableWeightView ParamVector::weight(int layer) {
  const LayerSegment& seg = layout.segments[layer];
  return MutableWeightView(values.data() + seg.weight_offset, seg.rows,
                           seg.cols);
}

BiasView ParamVector::bias(int layer) const {
  const LayerSegment& seg = layout.segments[layer];
  return BiasView(values.data() + seg.bias_offset, seg.rows);
}

MutableBiasView ParamVector::bias(int layer) {
  const LayerSegment& seg = layout.segments[layer];
  return MutableBiasView(values.data() + seg.bias_offset, seg.rows);
}

namespace {

inline Vector apply_activation(Activation a, const Vector& z) {
  if (a == Activation::kIdentity) return z;
  return z.cwiseMax(0.0);
}

inline bool skip_applies(const NetworkSpec& spec, int hidden_layer) {
  // Residual addition only between consecutive equal-width hidden layers;
  // hidden_layer is 0-based, so layer 0 (fed by the input) never gets one.
  return spec.skip_connections && hidden_layer >= 1;
}

}  // namespace

ForwardTrace forward_trace(const NetworkSpec& spec, const ParamVector& params,
                           const Eigen::Ref<const Vector>& x) {
  if (x.size() != spec.input_dim) {
    throw std::invalid_argument("input dimension mismatch");
  }
  ForwardTrace trace;
  const int num_hidden = static_cast<int>(spec.hidden_widths.size());
  trace.acts.reserve(num_hidden + 1);
  trace.pre_acts.reserve(num_hidden);
  trace.acts.push_back(x);
  for (int l = 0; l < num_hidden; ++l) {
    Vector z = params.weight(l) * trace.acts.back() + params.bias(l);
    Vector h = apply_activation(spec.activation, z);
    if (skip_applies(spec, l)) h += trace.acts.back();
    trace.pre_acts.push_back(std::move(z));
    trace.acts.push_back(std::move(h));
  }
  const int out = spec.num_layers() - 1;
  trace.logits = params.weight(out) * trace.acts.back() + params.bias(out);
  return trace;
}

Vector forward(const NetworkSpec& spec, const ParamVector& params,
               const Eigen::Ref<const Vector>& x) {
  return forward_trace(spec, params, x).logits;
}

double log_sum_exp(const Eigen::Ref<const Vector>& logits) {
  const double m = logits.maxCoeff();
  return m + std::log((logits.array() - m).exp().sum());
}

Vector softmax(const Eigen::Ref<const Vector>& logits) {
  const double m = logits.maxCoeff();
  Vector e = (logits.array() - m).exp();
  return e / e.sum();
}

double loss_from_logits(const Eigen::Ref<const Vector>& logits, int label) {
  if (label < 0 || label >= logits.size()) {
    throw std::invalid_argument("label out of range");
  }
  return log_sum_exp(logits) - logits[label];
}

double loss(const NetworkSpec& spec, const ParamVector& params,
            const Eigen::Ref<const Vector>& x, int label) {
  if (label < 0 || label >= spec.num_classes) {
    throw std::invalid_argument("label out of range");
  }
  return loss_from_logits(forward(spec, params, x), label);
}

}  // namespace ticlab
