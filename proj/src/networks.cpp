#include "mcpm/networks.hpp"

#include <cmath>

namespace mcpm {

namespace {

void check_seg_config(const SegConfig& cfg) {
  if (cfg.in_channels < 1 || cfg.out_channels < 1 || cfg.depth < 1 || cfg.base_channels < 1) {
    throw config_error("segmentation net: channels and depth must be positive");
  }
}

void check_mask_config(const MaskConfig& cfg) {
  if (cfg.hidden_channels < 1) throw config_error("mask net: hidden_channels must be positive");
}

void push_conv(std::vector<TensorSpec>& out, const std::string& prefix, int ci, int co, int k) {
  out.push_back({prefix + ".kernel", {co, ci, k, k}});
  out.push_back({prefix + ".bias", {co}});
}

}  // namespace

size_t ParamSet::count() const {
  size_t n = 0;
  for (const NamedTensor& t : tensors) n += t.value.numel();
  return n;
}

Tensor* ParamSet::find(const std::string& name) {
  for (NamedTensor& t : tensors) {
    if (t.name == name) return &t.value;
  }
  return nullptr;
}

const Tensor* ParamSet::find(const std::string& name) const {
  for (const NamedTensor& t : tensors) {
    if (t.name == name) return &t.value;
  }
  return nullptr;
}

bool ParamSet::all_finite() const {
  for (const NamedTensor& t : tensors) {
    if (!t.value.all_finite()) return false;
  }
  return true;
}

std::vector<TensorSpec> seg_param_layout(const SegConfig& cfg) {
  check_seg_config(cfg);
  std::vector<TensorSpec> out;
  auto width = [&](int level) { return cfg.base_channels << level; };
  int ci = cfg.in_channels;
  for (int l = 0; l < cfg.depth; ++l) {
    push_conv(out, "enc" + std::to_string(l) + ".c1", ci, width(l), 3);
    push_conv(out, "enc" + std::to_string(l) + ".c2", width(l), width(l), 3);
    ci = width(l);
  }
  push_conv(out, "mid.c1", ci, width(cfg.depth), 3);
  push_conv(out, "mid.c2", width(cfg.depth), width(cfg.depth), 3);
  ci = width(cfg.depth);
  for (int l = cfg.depth - 1; l >= 0; --l) {
    push_conv(out, "dec" + std::to_string(l) + ".reduce", ci, width(l), 3);
    push_conv(out, "dec" + std::to_string(l) + ".c1", 2 * width(l), width(l), 3);
    push_conv(out, "dec" + std::to_string(l) + ".c2", width(l), width(l), 3);
    ci = width(l);
  }
  push_conv(out, "head", ci, cfg.out_channels, 1);
  return out;
}

std::vector<TensorSpec> mask_param_layout(const MaskConfig& cfg) {
  check_mask_config(cfg);
  const int k = cfg.hidden_channels;
  std::vector<TensorSpec> out;
  out.push_back({"branch3.kernel", {k, 1, 3, 3}});
  out.push_back({"branch3.bias", {k}});
  out.push_back({"branch5.kernel", {k, 1, 5, 5}});
  out.push_back({"branch5.bias", {k}});
  out.push_back({"fuse.kernel", {1, 2 * k + 1, 1, 1}});
  out.push_back({"fuse.bias", {1}});
  return out;
}

namespace {

size_t layout_count(const std::vector<TensorSpec>& layout) {
  size_t n = 0;
  for (const TensorSpec& s : layout) n += shape_numel(s.shape);
  return n;
}

ParamSet init_from_layout(const std::vector<TensorSpec>& layout, Rng& rng) {
  ParamSet p;
  for (const TensorSpec& s : layout) {
    Tensor t(s.shape);
    if (s.shape.size() == 4) {
      const double fan_in = static_cast<double>(s.shape[1]) * s.shape[2] * s.shape[3];
      const double bound = 1.0 / std::sqrt(fan_in);
      for (double& v : t.data) v = rng.uniform(-bound, bound);
    }
    // biases stay zero: the mask net then starts at weight 0.5 everywhere
    p.tensors.push_back({s.name, std::move(t)});
  }
  return p;
}

}  // namespace

size_t seg_param_count(const SegConfig& cfg) { return layout_count(seg_param_layout(cfg)); }
size_t mask_param_count(const MaskConfig& cfg) { return layout_count(mask_param_layout(cfg)); }

SegParams init_seg_params(const SegConfig& cfg, Rng& rng) {
  return init_from_layout(seg_param_layout(cfg), rng);
}

MaskParams init_mask_params(const MaskConfig& cfg, Rng& rng) {
  return init_from_layout(mask_param_layout(cfg), rng);
}

std::vector<ad::NodeId> bind_params(ad::Tape& tape, const ParamSet& params) {
  std::vector<ad::NodeId> ids;
  ids.reserve(params.tensors.size());
  for (const NamedTensor& t : params.tensors) ids.push_back(tape.leaf(t.value));
  return ids;
}

std::vector<ad::NodeId> bind_params_const(ad::Tape& tape, const ParamSet& params) {
  std::vector<ad::NodeId> ids;
  ids.reserve(params.tensors.size());
  for (const NamedTensor& t : params.tensors) ids.push_back(tape.constant(t.value));
  return ids;
}

ad::NodeId seg_graph(ad::Tape& tape, const SegConfig& cfg, std::span<const ad::NodeId> params,
                     ad::NodeId input) {
  check_seg_config(cfg);
  const Tensor& x0 = tape.value(input);
  if (x0.rank() != 3 || x0.shape[0] != cfg.in_channels) {
    throw runtime_error("segmentation net: input " + x0.shape_str() + ", want [" +
                        std::to_string(cfg.in_channels) + ",h,w]");
  }
  const int divisor = 1 << cfg.depth;
  if (x0.shape[1] < 8 || x0.shape[2] < 8 || x0.shape[1] % divisor != 0 ||
      x0.shape[2] % divisor != 0) {
    throw runtime_error("segmentation net: spatial extents must be >= 8 and divisible by " +
                        std::to_string(divisor) + ", got " + x0.shape_str());
  }
  const size_t expected = seg_param_layout(cfg).size();
  if (params.size() != expected) {
    throw runtime_error("segmentation net: bound " + std::to_string(params.size()) +
                        " parameter tensors, layout has " + std::to_string(expected));
  }

  size_t pi = 0;
  auto conv_relu = [&](ad::NodeId x, int pad) {
    ad::NodeId k = params[pi++];
    ad::NodeId b = params[pi++];
    return tape.relu(tape.conv2d(x, k, b, pad));
  };

  std::vector<ad::NodeId> skips;
  ad::NodeId x = input;
  for (int l = 0; l < cfg.depth; ++l) {
    x = conv_relu(x, 1);
    x = conv_relu(x, 1);
    skips.push_back(x);
    x = tape.maxpool2(x);
  }
  x = conv_relu(x, 1);
  x = conv_relu(x, 1);
  for (int l = cfg.depth - 1; l >= 0; --l) {
    x = tape.upsample2(x);
    x = conv_relu(x, 1);  // halve the channels before the skip join
    std::vector<ad::NodeId> joined{x, skips[l]};
    x = tape.concat_channels(joined);
    x = conv_relu(x, 1);
    x = conv_relu(x, 1);
  }
  ad::NodeId k = params[pi++];
  ad::NodeId b = params[pi++];
  return tape.sigmoid(tape.conv2d(x, k, b, 0));
}

ad::NodeId mask_graph(ad::Tape& tape, const MaskConfig& cfg, std::span<const ad::NodeId> params,
                      ad::NodeId loss_map) {
  check_mask_config(cfg);
  const Tensor& l = tape.value(loss_map);
  if (l.rank() != 3 || l.shape[0] != 1) {
    throw runtime_error("mask net: loss map " + l.shape_str() + ", want [1,h,w]");
  }
  for (double v : l.data) {
    if (v < 0.0) throw runtime_error("mask net: negative loss value " + std::to_string(v));
  }
  if (params.size() != 6) {
    throw runtime_error("mask net: bound " + std::to_string(params.size()) +
                        " parameter tensors, want 6");
  }
  ad::NodeId in = loss_map;
  if (cfg.normalize_input) {
    // detached scale: the normalizer is a constant, not part of the graph
    double mean = 0.0;
    for (double v : l.data) mean += v;
    mean /= static_cast<double>(l.numel());
    in = tape.mul(loss_map, tape.constant(Tensor::full(l.shape, 1.0 / (mean + 1e-12))));
  }
  ad::NodeId a = tape.relu(tape.conv2d(in, params[0], params[1], 1));
  ad::NodeId b = tape.relu(tape.conv2d(in, params[2], params[3], 2));
  std::vector<ad::NodeId> parts{a, b, in};
  ad::NodeId fused = tape.conv2d(tape.concat_channels(parts), params[4], params[5], 0);
  return tape.sigmoid(fused);
}

ad::NodeId pixel_loss_graph(ad::Tape& tape, ad::NodeId pred, ad::NodeId label) {
  const Tensor& p = tape.value(pred);
  const Tensor& y = tape.value(label);
  if (p.rank() != 3) throw runtime_error("pixel loss: prediction " + p.shape_str() + ", want [c,h,w]");
  check_same_shape(p, y, "pixel loss");
  for (double v : y.data) {
    if (v != 0.0 && v != 1.0) {
      throw runtime_error("pixel loss: label value " + std::to_string(v) + " is not 0 or 1");
    }
  }
  const int c = p.shape[0];
  const Tensor ones = Tensor::full(p.shape, 1.0);
  const Tensor neg_ones = Tensor::full(p.shape, -1.0);
  ad::NodeId pc = tape.clamp(pred, 1e-7, 1.0 - 1e-7);
  ad::NodeId y_lnp = tape.mul(label, tape.log(pc));
  ad::NodeId per_channel;
  if (c == 1) {
    ad::NodeId one = tape.constant(ones);
    ad::NodeId neg = tape.constant(neg_ones);
    ad::NodeId one_minus_p = tape.add(one, tape.mul(pc, neg));
    ad::NodeId one_minus_y = tape.add(one, tape.mul(label, neg));
    ad::NodeId full = tape.add(y_lnp, tape.mul(one_minus_y, tape.log(one_minus_p)));
    per_channel = tape.mul(full, neg);
  } else {
    per_channel = tape.mul(y_lnp, tape.constant(neg_ones));
  }
  if (c == 1) return per_channel;
  // sum the channel axis with a 1x1 all-ones conv
  ad::NodeId ones_kernel = tape.constant(Tensor::full({1, c, 1, 1}, 1.0));
  ad::NodeId zero_bias = tape.constant(Tensor({1}));
  return tape.conv2d(per_channel, ones_kernel, zero_bias, 0);
}

namespace {

Tensor as_rank3(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw runtime_error(std::string(what) + ": want [h,w], got " + t.shape_str());
  return Tensor({1, t.shape[0], t.shape[1]}, t.data);
}

Tensor as_rank2(const Tensor& t) { return Tensor({t.shape[1], t.shape[2]}, t.data); }

}  // namespace

Tensor seg_forward(const SegConfig& cfg, const SegParams& w, const Tensor& image) {
  ad::Tape tape;
  std::vector<ad::NodeId> params = bind_params_const(tape, w);
  return tape.value(seg_graph(tape, cfg, params, tape.constant(image)));
}

Tensor mask_forward(const MaskConfig& cfg, const MaskParams& theta, const Tensor& loss_map) {
  ad::Tape tape;
  std::vector<ad::NodeId> params = bind_params_const(tape, theta);
  ad::NodeId in = tape.constant(as_rank3(loss_map, "mask net"));
  return as_rank2(tape.value(mask_graph(tape, cfg, params, in)));
}

Tensor pixel_loss(const Tensor& pred, const Tensor& label) {
  ad::Tape tape;
  return as_rank2(tape.value(pixel_loss_graph(tape, tape.constant(pred), tape.constant(label))));
}

}  // namespace mcpm
