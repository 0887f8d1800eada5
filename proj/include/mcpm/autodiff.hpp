#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "mcpm/tensor.hpp"

namespace mcpm::ad {

using NodeId = int32_t;

enum class Op : uint8_t {
  kLeaf,      // differentiable input (parameters)
  kConstant,  // non-differentiable input (images, labels, detached values)
  kAdd,
  kMul,
  kRelu,
  kSigmoid,
  kLog,
  kClamp,
  kConcatChannels,
  kUpsample2,  // nearest-neighbor x2 on [c,h,w]
  kMaxPool2,   // 2x2 stride-2 max on [c,h,w], h and w even
  kSum,        // all elements -> [1]
  kMean,       // all elements -> [1]
  kConv2d,     // cross-correlation with bias
};

struct Node {
  Op op = Op::kConstant;
  bool requires_grad = false;  // reaches a kLeaf
  bool has_tangent = false;    // nonzero tangent in the current jvp pass
  int pad = 0;                 // kConv2d
  double lo = 0.0, hi = 0.0;   // kClamp
  std::vector<NodeId> parents;
  std::vector<int32_t> aux;  // kMaxPool2: argmax flat input index per output element
  Tensor value;
  Tensor adjoint;  // empty until a backward pass touches this node
  Tensor tangent;  // empty until a jvp pass touches this node
};

/// A linear tape of eagerly evaluated nodes in topological order. Single
/// owner; one tape is never shared across threads. Reverse passes may run
/// repeatedly with different seeds, and a forward-mode pass can follow a
/// reverse pass on the same tape.
class Tape {
 public:
  NodeId leaf(Tensor value);
  NodeId constant(Tensor value);

  NodeId add(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId relu(NodeId a);
  NodeId sigmoid(NodeId a);
  NodeId log(NodeId a);
  NodeId clamp(NodeId a, double lo, double hi);
  NodeId concat_channels(std::span<const NodeId> parts);
  NodeId upsample2(NodeId a);
  NodeId maxpool2(NodeId a);
  NodeId sum(NodeId a);
  NodeId mean(NodeId a);
  NodeId conv2d(NodeId input, NodeId kernel, NodeId bias, int padding);

  size_t size() const { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_[check(id)]; }
  const Tensor& value(NodeId id) const { return nodes_[check(id)].value; }
  const std::vector<NodeId>& leaf_ids() const { return leaf_ids_; }

  /// Reverse pass from a scalar output; the output's adjoint is seeded
  /// with 1. Adjoint of each leaf then equals d(output)/d(leaf).
  void backward(NodeId output);

  /// Generalized reverse pass seeded with explicit cotangents at arbitrary
  /// nodes. Seeds accumulate if a node appears twice.
  void backward_seeded(std::span<const std::pair<NodeId, Tensor>> seeds);

  /// Adjoint of a node after a backward pass; zeros if the pass never
  /// reached it.
  Tensor adjoint(NodeId id) const;

  /// Forward-mode pass: tangent of every node equals the directional
  /// derivative of its value along the given leaf directions. Leaves
  /// without an entry get a zero tangent.
  void jvp(std::span<const std::pair<NodeId, Tensor>> directions);

  /// Tangent of a node after a jvp pass; zeros if structurally zero.
  Tensor tangent(NodeId id) const;

 private:
  NodeId check(NodeId id) const;
  NodeId push(Node n);
  Tensor& adjoint_slot(NodeId id);

  std::vector<Node> nodes_;
  std::vector<NodeId> leaf_ids_;
};

}  // namespace mcpm::ad
