#pragma once

#include <span>
#include <string>
#include <vector>

#include "mcpm/autodiff.hpp"
#include "mcpm/rng.hpp"
#include "mcpm/tensor.hpp"

namespace mcpm {

/// Image geometry: c foreground classes over an h by w grid.
struct ShapeSpec {
  int h = 0;
  int w = 0;
  int c = 1;
};

struct SegConfig {
  int in_channels = 1;
  int out_channels = 1;   // c
  int depth = 2;          // pooling levels
  int base_channels = 8;  // doubled at each level
};

struct MaskConfig {
  int hidden_channels = 8;      // width of each conv branch
  bool normalize_input = false; // scale the loss map by 1/mean before the net
};

/// Ordered named parameter tensors. The order is the binding order used by
/// the graph builders, so it is part of the contract.
struct ParamSet {
  std::vector<NamedTensor> tensors;

  size_t count() const;
  Tensor* find(const std::string& name);
  const Tensor* find(const std::string& name) const;
  bool all_finite() const;
};

using SegParams = ParamSet;
using MaskParams = ParamSet;

struct TensorSpec {
  std::string name;
  std::vector<int> shape;
};

/// Canonical layer layouts; initialization, graph building and checkpoint
/// validation all derive from these.
std::vector<TensorSpec> seg_param_layout(const SegConfig& cfg);
std::vector<TensorSpec> mask_param_layout(const MaskConfig& cfg);

size_t seg_param_count(const SegConfig& cfg);
size_t mask_param_count(const MaskConfig& cfg);

/// Kernels drawn uniformly from ±1/sqrt(fan_in), biases zero.
SegParams init_seg_params(const SegConfig& cfg, Rng& rng);
MaskParams init_mask_params(const MaskConfig& cfg, Rng& rng);

/// Bind every parameter tensor onto the tape, as differentiable leaves or
/// as constants (for frozen evaluation). Ids follow ParamSet order.
std::vector<ad::NodeId> bind_params(ad::Tape& tape, const ParamSet& params);
std::vector<ad::NodeId> bind_params_const(ad::Tape& tape, const ParamSet& params);

/// U-shaped encoder-decoder ending in a 1x1 conv and a sigmoid. `params`
/// must come from bind_params over a ParamSet with seg_param_layout order.
/// Input is [in_channels,h,w] with h, w divisible by 2^depth and >= 8.
/// Output is [out_channels,h,w], every value in (0,1).
ad::NodeId seg_graph(ad::Tape& tape, const SegConfig& cfg, std::span<const ad::NodeId> params,
                     ad::NodeId input);

/// Weight net over a non-negative loss map [1,h,w]: parallel 3x3 and 5x5
/// conv+relu branches, concatenated with the raw map, fused by a 1x1 conv,
/// squashed by a sigmoid. Output [1,h,w] strictly inside (0,1).
ad::NodeId mask_graph(ad::Tape& tape, const MaskConfig& cfg, std::span<const ad::NodeId> params,
                      ad::NodeId loss_map);

/// Per-pixel cross entropy, [c,h,w] prediction against a binary label of
/// the same shape, output [1,h,w]. With c = 1 this is the full binary
/// cross entropy; with c > 1 the sum over channels of -y_k ln p_k.
/// Probabilities are clamped to [1e-7, 1 - 1e-7].
ad::NodeId pixel_loss_graph(ad::Tape& tape, ad::NodeId pred, ad::NodeId label);

/// Value-level wrappers; each builds a throwaway tape. Loss and weight maps
/// are rank-2 [h,w] here; the channel axis is an implementation detail of
/// the graph form.
Tensor seg_forward(const SegConfig& cfg, const SegParams& w, const Tensor& image);
Tensor mask_forward(const MaskConfig& cfg, const MaskParams& theta, const Tensor& loss_map);
Tensor pixel_loss(const Tensor& pred, const Tensor& label);

}  // namespace mcpm
