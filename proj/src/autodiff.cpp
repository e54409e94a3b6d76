#include "ticlab/autodiff.hpp"

#include <stdexcept>

namespace ticlab {

namespace {

inline WeightView weight_view(const ParamLayout& layout, const double* flat,
                              int layer) {
  const LayerSegment& seg = layout.segments[layer];
  return WeightView(flat + seg.weight_offset, seg.rows, seg.cols);
}

inline BiasView bias_view(const ParamLayout& layout, const double* flat,
                          int layer) {
  const LayerSegment& seg = layout.segments[layer];
  return BiasView(flat + seg.bias_offset, seg.rows);
}

inline Vector act_derivative(Activation a, const Vector& z) {
  if (a == Activation::kIdentity) return Vector::Ones(z.size());
  // ReLU subgradient, defined as 0 at the kink.
  return (z.array() > 0.0).cast<double>();
}

inline bool skip_applies(const NetworkSpec& spec, int hidden_layer) {
  return spec.skip_connections && hidden_layer >= 1;
}

// Writes the backward pass from logit seed `s` into `out` (adds nothing,
// overwrites the full vector).
void backward_into(const NetworkSpec& spec, const ParamVector& params,
                   const ForwardTrace& trace,
                   const Eigen::Ref<const Vector>& seed, double* out) {
  const ParamLayout& layout = params.layout;
  const int num_hidden = static_cast<int>(spec.hidden_widths.size());
  const int out_layer = spec.num_layers() - 1;
  const LayerSegment& out_seg = layout.segments[out_layer];

  // Output layer: grad W_out = s h^T, grad b_out = s.
  {
    const Vector& h = trace.acts[num_hidden];
    MutableWeightView gw(out + out_seg.weight_offset, out_seg.rows, out_seg.cols);
    gw = seed * h.transpose();
    MutableBiasView gb(out + out_seg.bias_offset, out_seg.rows);
    gb = seed;
  }

  Vector delta = params.weight(out_layer).transpose() * seed;
  for (int l = num_hidden - 1; l >= 0; --l) {
    const LayerSegment& seg = layout.segments[l];
    const Vector dact = act_derivative(spec.activation, trace.pre_acts[l]);
    const Vector dz = delta.cwiseProduct(dact);
    MutableWeightView gw(out + seg.weight_offset, seg.rows, seg.cols);
    gw = dz * trace.acts[l].transpose();
    MutableBiasView gb(out + seg.bias_offset, seg.rows);
    gb = dz;
    if (l > 0) {
      Vector next = params.weight(l).transpose() * dz;
      if (skip_applies(spec, l)) next += delta;
      delta = std::move(next);
    }
  }
}

void check_indices(const LabeledDataset& ds, std::span<const int> indices) {
  if (indices.empty()) throw std::invalid_argument("empty index set");
  for (int i : indices) {
    if (i < 0 || i >= ds.n()) throw std::invalid_argument("index out of range");
  }
}

}  // namespace

Vector loss_logit_gradient(const Eigen::Ref<const Vector>& logits, int label) {
  if (label < 0 || label >= logits.size()) {
    throw std::invalid_argument("label out of range");
  }
  Vector s = softmax(logits);
  s[label] -= 1.0;
  return s;
}

GradVector grad_from_logit_seed(const NetworkSpec& spec,
                                const ParamVector& params,
                                const ForwardTrace& trace,
                                const Eigen::Ref<const Vector>& seed) {
  GradVector g(params.dim());
  backward_into(spec, params, trace, seed, g.data());
  return g;
}

GradVector grad(const NetworkSpec& spec, const ParamVector& params,
                const Eigen::Ref<const Vector>& x, int label) {
  ForwardTrace trace = forward_trace(spec, params, x);
  return grad_from_logit_seed(spec, params, trace,
                              loss_logit_gradient(trace.logits, label));
}

std::vector<GradVector> per_sample_grads(const NetworkSpec& spec,
                                         const ParamVector& params,
                                         const LabeledDataset& ds,
                                         std::span<const int> indices) {
  check_indices(ds, indices);
  std::vector<GradVector> grads;
  grads.reserve(indices.size());
  for (int i : indices) {
    grads.push_back(grad(spec, params, ds.x(i), ds.labels[i]));
  }
  return grads;
}

GradVector batch_grad(const NetworkSpec& spec, const ParamVector& params,
                      const LabeledDataset& ds, std::span<const int> indices) {
  check_indices(ds, indices);
  GradVector sum = GradVector::Zero(params.dim());
  for (int i : indices) {
    sum += grad(spec, params, ds.x(i), ds.labels[i]);
  }
  return sum / static_cast<double>(indices.size());
}

Matrix output_jacobian(const NetworkSpec& spec, const ParamVector& params,
                       const Eigen::Ref<const Vector>& x) {
  ForwardTrace trace = forward_trace(spec, params, x);
  Matrix jac(spec.num_classes, params.dim());
  Vector seed = Vector::Zero(spec.num_classes);
  for (int k = 0; k < spec.num_classes; ++k) {
    seed[k] = 1.0;
    GradVector row = grad_from_logit_seed(spec, params, trace, seed);
    jac.row(k) = row.transpose();
    seed[k] = 0.0;
  }
  return jac;
}

GradVector hvp(const NetworkSpec& spec, const ParamVector& params,
               const LabeledDataset& ds, std::span<const int> indices,
               const Eigen::Ref<const Vector>& v) {
  check_indices(ds, indices);
  if (v.size() != params.dim()) {
    throw std::invalid_argument("direction dimension mismatch");
  }
  const ParamLayout& layout = params.layout;
  const int num_hidden = static_cast<int>(spec.hidden_widths.size());
  const int out_layer = spec.num_layers() - 1;
  const double* vp = v.data();

  GradVector accum = GradVector::Zero(params.dim());
  Vector r_grad(params.dim());

  for (int idx : indices) {
    const ForwardTrace trace = forward_trace(spec, params, ds.x(idx));

    // Forward tangent sweep: r_acts[l] = directional derivative of acts[l].
    std::vector<Vector> r_acts(num_hidden + 1);
    r_acts[0] = Vector::Zero(spec.input_dim);
    for (int l = 0; l < num_hidden; ++l) {
      Vector rz = weight_view(layout, vp, l) * trace.acts[l] +
                  params.weight(l) * r_acts[l] + bias_view(layout, vp, l);
      Vector ra =
          act_derivative(spec.activation, trace.pre_acts[l]).cwiseProduct(rz);
      if (skip_applies(spec, l)) ra += r_acts[l];
      r_acts[l + 1] = std::move(ra);
    }
    Vector r_logits = weight_view(layout, vp, out_layer) * trace.acts[num_hidden] +
                      params.weight(out_layer) * r_acts[num_hidden] +
                      bias_view(layout, vp, out_layer);

    // Loss layer tangents: s = p - e_y, R{s} = (diag(p) - p p^T) R{logits}.
    const Vector p = softmax(trace.logits);
    Vector s = p;
    s[ds.labels[idx]] -= 1.0;
    Vector r_s = p.cwiseProduct(r_logits - Vector::Constant(p.size(), p.dot(r_logits)));

    // Backward tangent sweep.
    const LayerSegment& out_seg = layout.segments[out_layer];
    {
      MutableWeightView gw(r_grad.data() + out_seg.weight_offset, out_seg.rows,
                           out_seg.cols);
      gw = r_s * trace.acts[num_hidden].transpose() +
           s * r_acts[num_hidden].transpose();
      MutableBiasView gb(r_grad.data() + out_seg.bias_offset, out_seg.rows);
      gb = r_s;
    }
    Vector delta = params.weight(out_layer).transpose() * s;
    Vector r_delta = weight_view(layout, vp, out_layer).transpose() * s +
                     params.weight(out_layer).transpose() * r_s;
    for (int l = num_hidden - 1; l >= 0; --l) {
      const LayerSegment& seg = layout.segments[l];
      const Vector dact = act_derivative(spec.activation, trace.pre_acts[l]);
      const Vector dz = delta.cwiseProduct(dact);
      // act'' vanishes for Identity/ReLU, so R{dz} has no curvature term.
      const Vector r_dz = r_delta.cwiseProduct(dact);
      MutableWeightView gw(r_grad.data() + seg.weight_offset, seg.rows, seg.cols);
      gw = r_dz * trace.acts[l].transpose() + dz * r_acts[l].transpose();
      MutableBiasView gb(r_grad.data() + seg.bias_offset, seg.rows);
      gb = r_dz;
      if (l > 0) {
        Vector next_delta = params.weight(l).transpose() * dz;
        Vector next_r = weight_view(layout, vp, l).transpose() * dz +
                        params.weight(l).transpose() * r_dz;
        if (skip_applies(spec, l)) {
          next_delta += delta;
          next_r += r_delta;
        }
        delta = std::move(next_delta);
        r_delta = std::move(next_r);
      }
    }
    accum += r_grad;
  }
  return accum / static_cast<double>(indices.size());
}

}  // namespace ticlab
