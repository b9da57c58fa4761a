// Copyright 2026 the aesnet authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "aesnet/tensor.hpp"

namespace aesnet {

/// A named trainable tensor. Gradients accumulate into value's grad buffer;
/// frozen parameters receive no gradient and no optimizer updates.
struct Parameter {
  std::string name;
  Tensor value;
  bool frozen = false;

  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
    value.ensure_grad();
  }
};

using ParamPtr = std::shared_ptr<Parameter>;

enum class OpKind : std::uint8_t {
  kLeaf,
  kParam,
  kConv2d,
  kMaxPool2,
  kDense,
  kRelu,
  kSigmoid,
  kClamp01,
  kAsymFeatures,
  kMseLoss,
  kWeightedBce,
  kAdd,
  kScale,
};

using NodeId = std::uint32_t;
inline constexpr NodeId kNoNode = std::numeric_limits<NodeId>::max();

struct GraphNode {
  OpKind kind = OpKind::kLeaf;
  std::array<NodeId, 3> in = {kNoNode, kNoNode, kNoNode};
  int arity = 0;
  Tensor value;   // output; for kParam the parameter's tensor is authoritative
  ParamPtr param;
  int stride = 1;
  int pad = 0;
  double label = 0.0;   // weighted BCE target
  double weight = 1.0;  // weighted BCE class weight
  double factor = 1.0;  // kScale multiplier
  bool requires_grad = false;
  std::vector<std::uint32_t> argmax;  // max-pool routing, first index on ties
  std::vector<double> scratch;        // conv im2col columns
};

/// Reverse-mode autodiff tape. Nodes are appended in topological order and
/// evaluated eagerly; refresh() re-runs the forward pass in place so the
/// same graph can be replayed across samples, and backward() visits nodes
/// in reverse order exactly once.
class Graph {
public:
  static constexpr double kBceClamp = 1e-7;  // probability clamp before log

  NodeId leaf(Tensor value);
  NodeId param(ParamPtr p);

  /// Cross-correlation of a CHW input with an OCKhKw kernel plus bias.
  NodeId conv2d(NodeId input, NodeId kernel, NodeId bias, int stride = 1, int padding = 0);
  /// 2x2/stride-2 max pooling; spatial extents must be even.
  NodeId maxpool2(NodeId input);
  /// Affine map: weight (M x N) times the flattened input (size N) plus bias (M).
  NodeId dense(NodeId input, NodeId weight, NodeId bias);
  NodeId relu(NodeId input);
  NodeId sigmoid(NodeId input);
  /// Clamp to [0,1] with straight-through gradient inside the interval.
  NodeId clamp01(NodeId input);
  /// Fixed asymmetry feature layer: 8 keypoint coordinates -> 4 features.
  NodeId asymmetry_features(NodeId keypoints);
  NodeId mse_loss(NodeId pred, NodeId target);
  /// weight * binary cross-entropy of a scalar probability; label in {0,1}.
  NodeId weighted_bce_loss(NodeId prob, double label, double weight);
  NodeId add(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);

  std::size_t node_count() const { return nodes_.size(); }
  const GraphNode& node(NodeId id) const { return nodes_.at(id); }

  /// Value of a node's output (parameter nodes read the parameter tensor).
  const Tensor& value(NodeId id) const;
  double scalar(NodeId id) const;
  /// Node-local gradient from the last backward() call.
  std::span<const double> grad(NodeId id) const;

  void set_leaf(NodeId id, std::span<const double> data);
  void set_bce(NodeId id, double label, double weight);

  /// Recomputes every non-leaf node in topological order.
  void refresh();

  /// Seeds d(output)=seed and accumulates gradients; unfrozen parameter
  /// gradients accumulate into Parameter::value's grad buffer.
  void backward(NodeId output, double seed = 1.0);

  /// Smallest distance of any activation to a non-differentiable point
  /// (relu/clamp thresholds, pooling ties, asymmetry kinks). Finite
  /// difference checks are only meaningful when this is well above h.
  double min_kink_distance() const;

private:
  NodeId push(GraphNode n);
  const Tensor& in_value(const GraphNode& n, int slot) const;
  double* in_grad(GraphNode& n, int slot);  // nullptr when gradient not needed
  void compute(GraphNode& n);
  void backprop(GraphNode& n);

  std::vector<GraphNode> nodes_;
};

/// Total element count over trainable parameters.
std::size_t param_count(std::span<const ParamPtr> params);

/// Compares the autodiff gradient of `p` against central differences of the
/// scalar `output`, element by element; returns the maximum relative error.
double finite_difference_check(Graph& g, NodeId output, Parameter& p, double h);

/// Row-major C = alpha * op(A) * op(B) + beta * C.
void matmul(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
            double alpha, const double* a, std::size_t lda, const double* b, std::size_t ldb,
            double beta, double* c, std::size_t ldc);

}  // namespace aesnet
