#pragma once

#include <span>
#include <vector>

#include "ticlab/dataset.hpp"
#include "ticlab/network.hpp"

namespace ticlab {

// Gradients and directions are flat vectors in the parameter layout.
using GradVector = Vector;

// d loss / d logits for softmax cross-entropy: softmax(logits) - e_label.
Vector loss_logit_gradient(const Eigen::Ref<const Vector>& logits, int label);

// Reverse pass from an arbitrary logit seed s: returns d(s . logits)/d theta.
// This is the shared backward primitive; the loss gradient and the output
// Jacobian are thin wrappers around it.
GradVector grad_from_logit_seed(const NetworkSpec& spec,
                                const ParamVector& params,
                                const ForwardTrace& trace,
                                const Eigen::Ref<const Vector>& seed);

// Gradient of the single-example loss.
GradVector grad(const NetworkSpec& spec, const ParamVector& params,
                const Eigen::Ref<const Vector>& x, int label);

// Per-example loss gradients in index order.
std::vector<GradVector> per_sample_grads(const NetworkSpec& spec,
                                         const ParamVector& params,
                                         const LabeledDataset& ds,
                                         std::span<const int> indices);

// Gradient of the batch-mean loss (sum of per-example gradients in index
// order, divided by the count).
GradVector batch_grad(const NetworkSpec& spec, const ParamVector& params,
                      const LabeledDataset& ds, std::span<const int> indices);

// K x d Jacobian of the logits with respect to the parameters; row k is the
// gradient of logit k.
Matrix output_jacobian(const NetworkSpec& spec, const ParamVector& params,
                       const Eigen::Ref<const Vector>& x);

// Hessian-vector product of the batch-mean loss, computed by forward-over-
// reverse directional differentiation of the gradient. Costs a small
// constant multiple of one gradient pass. For piecewise-linear activations
// the activation curvature term is identically zero, so the product is exact
// away from ReLU kinks.
GradVector hvp(const NetworkSpec& spec, const ParamVector& params,
               const LabeledDataset& ds, std::span<const int> indices,
               const Eigen::Ref<const Vector>& v);

}  // namespace ticlab
