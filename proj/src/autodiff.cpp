#include "mcpm/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mcpm::ad {

namespace {

std::string shape_msg(const char* op, const Tensor& t) {
  return std::string(op) + ": unexpected shape " + t.shape_str();
}

void require_rank3(const char* op, const Tensor& t) {
  if (t.rank() != 3) throw runtime_error(shape_msg(op, t) + ", want [c,h,w]");
}

// out[oc,oy,ox] += sum_{ic,ky,kx} in[ic, oy+ky-pad, ox+kx-pad] * k[oc,ic,ky,kx]
// The inner loop runs along contiguous rows of both input and output.
void conv2d_accumulate(const Tensor& in, const Tensor& k, int pad, Tensor& out) {
  const int ci = in.shape[0], h = in.shape[1], w = in.shape[2];
  const int co = k.shape[0], kh = k.shape[2], kw = k.shape[3];
  const int ho = out.shape[1], wo = out.shape[2];
  const double* in_d = in.data.data();
  const double* k_d = k.data.data();
  double* out_d = out.data.data();
  for (int oc = 0; oc < co; ++oc) {
    double* out_c = out_d + static_cast<size_t>(oc) * ho * wo;
    for (int ic = 0; ic < ci; ++ic) {
      const double* in_c = in_d + static_cast<size_t>(ic) * h * w;
      const double* k_c = k_d + (static_cast<size_t>(oc) * ci + ic) * kh * kw;
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          const double wgt = k_c[ky * kw + kx];
          const int ox0 = std::max(0, pad - kx);
          const int ox1 = std::min(wo, w + pad - kx);
          if (ox0 >= ox1) continue;
          const int n = ox1 - ox0;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy + ky - pad;
            if (iy < 0 || iy >= h) continue;
            const double* in_row = in_c + static_cast<size_t>(iy) * w + (ox0 + kx - pad);
            double* out_row = out_c + static_cast<size_t>(oy) * wo + ox0;
            for (int i = 0; i < n; ++i) out_row[i] += wgt * in_row[i];
          }
        }
      }
    }
  }
}

// din[ic, oy+ky-pad, ox+kx-pad] += dout[oc,oy,ox] * k[oc,ic,ky,kx]
void conv2d_input_grad(const Tensor& dout, const Tensor& k, int pad, Tensor& din) {
  const int ci = din.shape[0], h = din.shape[1], w = din.shape[2];
  const int co = k.shape[0], kh = k.shape[2], kw = k.shape[3];
  const int ho = dout.shape[1], wo = dout.shape[2];
  const double* dout_d = dout.data.data();
  const double* k_d = k.data.data();
  double* din_d = din.data.data();
  for (int oc = 0; oc < co; ++oc) {
    const double* dout_c = dout_d + static_cast<size_t>(oc) * ho * wo;
    for (int ic = 0; ic < ci; ++ic) {
      double* din_c = din_d + static_cast<size_t>(ic) * h * w;
      const double* k_c = k_d + (static_cast<size_t>(oc) * ci + ic) * kh * kw;
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          const double wgt = k_c[ky * kw + kx];
          const int ox0 = std::max(0, pad - kx);
          const int ox1 = std::min(wo, w + pad - kx);
          if (ox0 >= ox1) continue;
          const int n = ox1 - ox0;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy + ky - pad;
            if (iy < 0 || iy >= h) continue;
            double* din_row = din_c + static_cast<size_t>(iy) * w + (ox0 + kx - pad);
            const double* dout_row = dout_c + static_cast<size_t>(oy) * wo + ox0;
            for (int i = 0; i < n; ++i) din_row[i] += wgt * dout_row[i];
          }
        }
      }
    }
  }
}

// dk[oc,ic,ky,kx] += sum_{oy,ox} in[ic, oy+ky-pad, ox+kx-pad] * dout[oc,oy,ox]
void conv2d_kernel_grad(const Tensor& in, const Tensor& dout, int pad, Tensor& dk) {
  const int ci = in.shape[0], h = in.shape[1], w = in.shape[2];
  const int co = dk.shape[0], kh = dk.shape[2], kw = dk.shape[3];
  const int ho = dout.shape[1], wo = dout.shape[2];
  const double* in_d = in.data.data();
  const double* dout_d = dout.data.data();
  double* dk_d = dk.data.data();
  for (int oc = 0; oc < co; ++oc) {
    const double* dout_c = dout_d + static_cast<size_t>(oc) * ho * wo;
    for (int ic = 0; ic < ci; ++ic) {
      const double* in_c = in_d + static_cast<size_t>(ic) * h * w;
      double* dk_c = dk_d + (static_cast<size_t>(oc) * ci + ic) * kh * kw;
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          const int ox0 = std::max(0, pad - kx);
          const int ox1 = std::min(wo, w + pad - kx);
          if (ox0 >= ox1) continue;
          const int n = ox1 - ox0;
          double acc = 0.0;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy + ky - pad;
            if (iy < 0 || iy >= h) continue;
            const double* in_row = in_c + static_cast<size_t>(iy) * w + (ox0 + kx - pad);
            const double* dout_row = dout_c + static_cast<size_t>(oy) * wo + ox0;
            double dot = 0.0;
            for (int i = 0; i < n; ++i) dot += in_row[i] * dout_row[i];
            acc += dot;
          }
          dk_c[ky * kw + kx] += acc;
        }
      }
    }
  }
}

void add_bias(const Tensor& bias, Tensor& out) {
  const int co = out.shape[0];
  const size_t plane = static_cast<size_t>(out.shape[1]) * out.shape[2];
  for (int oc = 0; oc < co; ++oc) {
    double* p = out.data.data() + oc * plane;
    const double b = bias.data[oc];
    for (size_t i = 0; i < plane; ++i) p[i] += b;
  }
}

void accumulate(Tensor& into, const Tensor& t) {
  for (size_t i = 0; i < into.data.size(); ++i) into.data[i] += t.data[i];
}

}  // namespace

NodeId Tape::check(NodeId id) const {
  if (id < 0 || static_cast<size_t>(id) >= nodes_.size()) {
    throw runtime_error("tape: node id " + std::to_string(id) + " out of range");
  }
  return id;
}

NodeId Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::leaf(Tensor value) {
  Node n;
  n.op = Op::kLeaf;
  n.requires_grad = true;
  n.value = std::move(value);
  NodeId id = push(std::move(n));
  leaf_ids_.push_back(id);
  return id;
}

NodeId Tape::constant(Tensor value) {
  Node n;
  n.op = Op::kConstant;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
  const Tensor& va = value(check(a));
  const Tensor& vb = value(check(b));
  check_same_shape(va, vb, "add");
  Node n;
  n.op = Op::kAdd;
  n.parents = {a, b};
  n.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
  n.value = va;
  accumulate(n.value, vb);
  return push(std::move(n));
}

NodeId Tape::mul(NodeId a, NodeId b) {
  const Tensor& va = value(check(a));
  const Tensor& vb = value(check(b));
  check_same_shape(va, vb, "mul");
  Node n;
  n.op = Op::kMul;
  n.parents = {a, b};
  n.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
  n.value = Tensor(va.shape);
  for (size_t i = 0; i < va.data.size(); ++i) n.value.data[i] = va.data[i] * vb.data[i];
  return push(std::move(n));
}

NodeId Tape::relu(NodeId a) {
  const Tensor& va = value(check(a));
  Node n;
  n.op = Op::kRelu;
  n.parents = {a};
  n.requires_grad = nodes_[a].requires_grad;
  n.value = Tensor(va.shape);
  for (size_t i = 0; i < va.data.size(); ++i) n.value.data[i] = va.data[i] > 0.0 ? va.data[i] : 0.0;
  return push(std::move(n));
}

NodeId Tape::sigmoid(NodeId a) {
  const Tensor& va = value(check(a));
  Node n;
  n.op = Op::kSigmoid;
  n.parents = {a};
  n.requires_grad = nodes_[a].requires_grad;
  n.value = Tensor(va.shape);
  for (size_t i = 0; i < va.data.size(); ++i) n.value.data[i] = 1.0 / (1.0 + std::exp(-va.data[i]));
  return push(std::move(n));
}

NodeId Tape::log(NodeId a) {
  const Tensor& va = value(check(a));
  Node n;
  n.op = Op::kLog;
  n.parents = {a};
  n.requires_grad = nodes_[a].requires_grad;
  n.value = Tensor(va.shape);
  for (size_t i = 0; i < va.data.size(); ++i) {
    if (va.data[i] <= 0.0) {
      throw runtime_error("log: non-positive input " + std::to_string(va.data[i]) +
                          "; clamp the operand first");
    }
    n.value.data[i] = std::log(va.data[i]);
  }
  return push(std::move(n));
}

NodeId Tape::clamp(NodeId a, double lo, double hi) {
  if (!(lo <= hi)) throw runtime_error("clamp: lo > hi");
  const Tensor& va = value(check(a));
  Node n;
  n.op = Op::kClamp;
  n.parents = {a};
  n.requires_grad = nodes_[a].requires_grad;
  n.lo = lo;
  n.hi = hi;
  n.value = Tensor(va.shape);
  for (size_t i = 0; i < va.data.size(); ++i)
    n.value.data[i] = std::min(std::max(va.data[i], lo), hi);
  return push(std::move(n));
}

NodeId Tape::concat_channels(std::span<const NodeId> parts) {
  if (parts.empty()) throw runtime_error("concat_channels: no inputs");
  int channels = 0;
  const Tensor& first = value(check(parts[0]));
  require_rank3("concat_channels", first);
  for (NodeId p : parts) {
    const Tensor& v = value(check(p));
    require_rank3("concat_channels", v);
    if (v.shape[1] != first.shape[1] || v.shape[2] != first.shape[2]) {
      throw runtime_error("concat_channels: spatial mismatch " + v.shape_str() + " vs " +
                          first.shape_str());
    }
    channels += v.shape[0];
  }
  Node n;
  n.op = Op::kConcatChannels;
  n.parents.assign(parts.begin(), parts.end());
  n.value = Tensor({channels, first.shape[1], first.shape[2]});
  size_t off = 0;
  for (NodeId p : parts) {
    const Tensor& v = nodes_[p].value;
    std::copy(v.data.begin(), v.data.end(), n.value.data.begin() + off);
    off += v.data.size();
    n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
  }
  return push(std::move(n));
}

NodeId Tape::upsample2(NodeId a) {
  const Tensor& va = value(check(a));
  require_rank3("upsample2", va);
  const int c = va.shape[0], h = va.shape[1], w = va.shape[2];
  Node n;
  n.op = Op::kUpsample2;
  n.parents = {a};
  n.requires_grad = nodes_[a].requires_grad;
  n.value = Tensor({c, 2 * h, 2 * w});
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double v = va.at(ch, y, x);
        n.value.at(ch, 2 * y, 2 * x) = v;
        n.value.at(ch, 2 * y, 2 * x + 1) = v;
        n.value.at(ch, 2 * y + 1, 2 * x) = v;
        n.value.at(ch, 2 * y + 1, 2 * x + 1) = v;
      }
    }
  }
  return push(std::move(n));
}

NodeId Tape::maxpool2(NodeId a) {
  const Tensor& va = value(check(a));
  require_rank3("maxpool2", va);
  const int c = va.shape[0], h = va.shape[1], w = va.shape[2];
  if (h % 2 != 0 || w % 2 != 0) {
    throw runtime_error("maxpool2: spatial extents must be even, got " + va.shape_str());
  }
  Node n;
  n.op = Op::kMaxPool2;
  n.parents = {a};
  n.requires_grad = nodes_[a].requires_grad;
  n.value = Tensor({c, h / 2, w / 2});
  n.aux.resize(n.value.numel());
  size_t o = 0;
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; y += 2) {
      for (int x = 0; x < w; x += 2) {
        // Ties resolve to the first element in row-major scan order.
        int32_t best = static_cast<int32_t>((static_cast<size_t>(ch) * h + y) * w + x);
        double bv = va.data[best];
        const int32_t cand[3] = {
            static_cast<int32_t>((static_cast<size_t>(ch) * h + y) * w + x + 1),
            static_cast<int32_t>((static_cast<size_t>(ch) * h + y + 1) * w + x),
            static_cast<int32_t>((static_cast<size_t>(ch) * h + y + 1) * w + x + 1)};
        for (int32_t idx : cand) {
          if (va.data[idx] > bv) {
            bv = va.data[idx];
            best = idx;
          }
        }
        n.value.data[o] = bv;
        n.aux[o] = best;
        ++o;
      }
    }
  }
  return push(std::move(n));
}

NodeId Tape::sum(NodeId a) {
  const Tensor& va = value(check(a));
  Node n;
  n.op = Op::kSum;
  n.parents = {a};
  n.requires_grad = nodes_[a].requires_grad;
  double acc = 0.0;
  for (double v : va.data) acc += v;
  n.value = Tensor::scalar(acc);
  return push(std::move(n));
}

NodeId Tape::mean(NodeId a) {
  const Tensor& va = value(check(a));
  Node n;
  n.op = Op::kMean;
  n.parents = {a};
  n.requires_grad = nodes_[a].requires_grad;
  double acc = 0.0;
  for (double v : va.data) acc += v;
  n.value = Tensor::scalar(acc / static_cast<double>(va.numel()));
  return push(std::move(n));
}

NodeId Tape::conv2d(NodeId input, NodeId kernel, NodeId bias, int padding) {
  const Tensor& vin = value(check(input));
  const Tensor& vk = value(check(kernel));
  const Tensor& vb = value(check(bias));
  require_rank3("conv2d input", vin);
  if (vk.rank() != 4) throw runtime_error(shape_msg("conv2d kernel", vk) + ", want [co,ci,kh,kw]");
  if (vb.rank() != 1) throw runtime_error(shape_msg("conv2d bias", vb) + ", want [co]");
  const int ci = vin.shape[0], h = vin.shape[1], w = vin.shape[2];
  const int co = vk.shape[0], kh = vk.shape[2], kw = vk.shape[3];
  if (vk.shape[1] != ci) {
    throw runtime_error("conv2d: kernel expects " + std::to_string(vk.shape[1]) +
                        " input channels, input has " + std::to_string(ci));
  }
  if (vb.shape[0] != co) {
    throw runtime_error("conv2d: bias has " + std::to_string(vb.shape[0]) + " channels, kernel " +
                        std::to_string(co));
  }
  if (kh % 2 == 0 || kw % 2 == 0) {
    throw runtime_error("conv2d: kernel extents must be odd, got " + vk.shape_str());
  }
  if (padding < 0) throw runtime_error("conv2d: negative padding");
  const int ho = h + 2 * padding - kh + 1;
  const int wo = w + 2 * padding - kw + 1;
  if (ho < 1 || wo < 1) {
    throw runtime_error("conv2d: output would be empty for input " + vin.shape_str() +
                        ", kernel " + vk.shape_str() + ", padding " + std::to_string(padding));
  }
  Node n;
  n.op = Op::kConv2d;
  n.parents = {input, kernel, bias};
  n.requires_grad =
      nodes_[input].requires_grad || nodes_[kernel].requires_grad || nodes_[bias].requires_grad;
  n.pad = padding;
  n.value = Tensor({co, ho, wo});
  add_bias(vb, n.value);
  conv2d_accumulate(vin, vk, padding, n.value);
  return push(std::move(n));
}

Tensor& Tape::adjoint_slot(NodeId id) {
  Node& n = nodes_[id];
  if (n.adjoint.data.empty()) n.adjoint = Tensor(n.value.shape);
  return n.adjoint;
}

void Tape::backward(NodeId output) {
  const Tensor& v = value(check(output));
  if (v.numel() != 1) {
    throw runtime_error("backward: output must be scalar, got " + v.shape_str());
  }
  std::pair<NodeId, Tensor> seed{output, Tensor::scalar(1.0)};
  backward_seeded({&seed, 1});
}

void Tape::backward_seeded(std::span<const std::pair<NodeId, Tensor>> seeds) {
  if (seeds.empty()) throw runtime_error("backward: no seeds");
  for (Node& n : nodes_) n.adjoint = Tensor{};
  for (const auto& [id, t] : seeds) {
    check(id);
    check_same_shape(nodes_[id].value, t, "backward seed");
    accumulate(adjoint_slot(id), t);
  }
  for (NodeId id = static_cast<NodeId>(nodes_.size()) - 1; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.adjoint.data.empty() || !n.requires_grad) continue;
    const Tensor& d = n.adjoint;
    switch (n.op) {
      case Op::kLeaf:
      case Op::kConstant:
        break;
      case Op::kAdd: {
        for (NodeId p : n.parents) {
          if (nodes_[p].requires_grad) accumulate(adjoint_slot(p), d);
        }
        break;
      }
      case Op::kMul: {
        const NodeId a = n.parents[0], b = n.parents[1];
        if (nodes_[a].requires_grad) {
          Tensor& da = adjoint_slot(a);
          const Tensor& vb = nodes_[b].value;
          for (size_t i = 0; i < da.data.size(); ++i) da.data[i] += d.data[i] * vb.data[i];
        }
        if (nodes_[b].requires_grad) {
          Tensor& db = adjoint_slot(b);
          const Tensor& va = nodes_[a].value;
          for (size_t i = 0; i < db.data.size(); ++i) db.data[i] += d.data[i] * va.data[i];
        }
        break;
      }
      case Op::kRelu: {
        const NodeId a = n.parents[0];
        if (!nodes_[a].requires_grad) break;
        Tensor& da = adjoint_slot(a);
        const Tensor& va = nodes_[a].value;
        for (size_t i = 0; i < da.data.size(); ++i) {
          if (va.data[i] > 0.0) da.data[i] += d.data[i];
        }
        break;
      }
      case Op::kSigmoid: {
        const NodeId a = n.parents[0];
        if (!nodes_[a].requires_grad) break;
        Tensor& da = adjoint_slot(a);
        for (size_t i = 0; i < da.data.size(); ++i) {
          const double s = n.value.data[i];
          da.data[i] += d.data[i] * s * (1.0 - s);
        }
        break;
      }
      case Op::kLog: {
        const NodeId a = n.parents[0];
        if (!nodes_[a].requires_grad) break;
        Tensor& da = adjoint_slot(a);
        const Tensor& va = nodes_[a].value;
        for (size_t i = 0; i < da.data.size(); ++i) da.data[i] += d.data[i] / va.data[i];
        break;
      }
      case Op::kClamp: {
        const NodeId a = n.parents[0];
        if (!nodes_[a].requires_grad) break;
        Tensor& da = adjoint_slot(a);
        const Tensor& va = nodes_[a].value;
        for (size_t i = 0; i < da.data.size(); ++i) {
          if (va.data[i] > n.lo && va.data[i] < n.hi) da.data[i] += d.data[i];
        }
        break;
      }
      case Op::kConcatChannels: {
        size_t off = 0;
        for (NodeId p : n.parents) {
          const size_t sz = nodes_[p].value.data.size();
          if (nodes_[p].requires_grad) {
            Tensor& dp = adjoint_slot(p);
            for (size_t i = 0; i < sz; ++i) dp.data[i] += d.data[off + i];
          }
          off += sz;
        }
        break;
      }
      case Op::kUpsample2: {
        const NodeId a = n.parents[0];
        if (!nodes_[a].requires_grad) break;
        Tensor& da = adjoint_slot(a);
        const int c = da.shape[0], h = da.shape[1], w = da.shape[2];
        for (int ch = 0; ch < c; ++ch) {
          for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
              da.at(ch, y, x) += n.adjoint.at(ch, 2 * y, 2 * x) +
                                 n.adjoint.at(ch, 2 * y, 2 * x + 1) +
                                 n.adjoint.at(ch, 2 * y + 1, 2 * x) +
                                 n.adjoint.at(ch, 2 * y + 1, 2 * x + 1);
            }
          }
        }
        break;
      }
      case Op::kMaxPool2: {
        const NodeId a = n.parents[0];
        if (!nodes_[a].requires_grad) break;
        Tensor& da = adjoint_slot(a);
        for (size_t i = 0; i < n.aux.size(); ++i) da.data[n.aux[i]] += d.data[i];
        break;
      }
      case Op::kSum: {
        const NodeId a = n.parents[0];
        if (!nodes_[a].requires_grad) break;
        Tensor& da = adjoint_slot(a);
        const double g = d.data[0];
        for (double& v : da.data) v += g;
        break;
      }
      case Op::kMean: {
        const NodeId a = n.parents[0];
        if (!nodes_[a].requires_grad) break;
        Tensor& da = adjoint_slot(a);
        const double g = d.data[0] / static_cast<double>(da.numel());
        for (double& v : da.data) v += g;
        break;
      }
      case Op::kConv2d: {
        const NodeId in = n.parents[0], k = n.parents[1], b = n.parents[2];
        if (nodes_[in].requires_grad) {
          conv2d_input_grad(d, nodes_[k].value, n.pad, adjoint_slot(in));
        }
        if (nodes_[k].requires_grad) {
          conv2d_kernel_grad(nodes_[in].value, d, n.pad, adjoint_slot(k));
        }
        if (nodes_[b].requires_grad) {
          Tensor& db = adjoint_slot(b);
          const size_t plane = static_cast<size_t>(d.shape[1]) * d.shape[2];
          for (int oc = 0; oc < d.shape[0]; ++oc) {
            double acc = 0.0;
            const double* p = d.data.data() + oc * plane;
            for (size_t i = 0; i < plane; ++i) acc += p[i];
            db.data[oc] += acc;
          }
        }
        break;
      }
    }
  }
}

Tensor Tape::adjoint(NodeId id) const {
  const Node& n = nodes_[check(id)];
  if (n.adjoint.data.empty()) return Tensor(n.value.shape);
  return n.adjoint;
}

void Tape::jvp(std::span<const std::pair<NodeId, Tensor>> directions) {
  for (Node& n : nodes_) {
    n.tangent = Tensor{};
    n.has_tangent = false;
  }
  for (const auto& [id, t] : directions) {
    Node& n = nodes_[check(id)];
    if (n.op != Op::kLeaf) {
      throw runtime_error("jvp: direction given for non-leaf node " + std::to_string(id));
    }
    check_same_shape(n.value, t, "jvp direction");
    n.tangent = t;
    n.has_tangent = true;
  }
  for (NodeId id = 0; id < static_cast<NodeId>(nodes_.size()); ++id) {
    Node& n = nodes_[id];
    if (n.op == Op::kLeaf || n.op == Op::kConstant) continue;
    bool any = false;
    for (NodeId p : n.parents) any = any || nodes_[p].has_tangent;
    if (!any) continue;
    Tensor t(n.value.shape);
    switch (n.op) {
      case Op::kLeaf:
      case Op::kConstant:
        break;
      case Op::kAdd: {
        for (NodeId p : n.parents) {
          if (nodes_[p].has_tangent) accumulate(t, nodes_[p].tangent);
        }
        break;
      }
      case Op::kMul: {
        const Node& a = nodes_[n.parents[0]];
        const Node& b = nodes_[n.parents[1]];
        if (a.has_tangent) {
          for (size_t i = 0; i < t.data.size(); ++i) t.data[i] += a.tangent.data[i] * b.value.data[i];
        }
        if (b.has_tangent) {
          for (size_t i = 0; i < t.data.size(); ++i) t.data[i] += a.value.data[i] * b.tangent.data[i];
        }
        break;
      }
      case Op::kRelu: {
        const Node& a = nodes_[n.parents[0]];
        for (size_t i = 0; i < t.data.size(); ++i) {
          if (a.value.data[i] > 0.0) t.data[i] = a.tangent.data[i];
        }
        break;
      }
      case Op::kSigmoid: {
        const Node& a = nodes_[n.parents[0]];
        for (size_t i = 0; i < t.data.size(); ++i) {
          const double s = n.value.data[i];
          t.data[i] = a.tangent.data[i] * s * (1.0 - s);
        }
        break;
      }
      case Op::kLog: {
        const Node& a = nodes_[n.parents[0]];
        for (size_t i = 0; i < t.data.size(); ++i) t.data[i] = a.tangent.data[i] / a.value.data[i];
        break;
      }
      case Op::kClamp: {
        const Node& a = nodes_[n.parents[0]];
        for (size_t i = 0; i < t.data.size(); ++i) {
          if (a.value.data[i] > n.lo && a.value.data[i] < n.hi) t.data[i] = a.tangent.data[i];
        }
        break;
      }
      case Op::kConcatChannels: {
        size_t off = 0;
        for (NodeId p : n.parents) {
          const Node& a = nodes_[p];
          const size_t sz = a.value.data.size();
          if (a.has_tangent) {
            std::copy(a.tangent.data.begin(), a.tangent.data.end(), t.data.begin() + off);
          }
          off += sz;
        }
        break;
      }
      case Op::kUpsample2: {
        const Node& a = nodes_[n.parents[0]];
        const int c = a.value.shape[0], h = a.value.shape[1], w = a.value.shape[2];
        for (int ch = 0; ch < c; ++ch) {
          for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
              const double v = a.tangent.at(ch, y, x);
              t.at(ch, 2 * y, 2 * x) = v;
              t.at(ch, 2 * y, 2 * x + 1) = v;
              t.at(ch, 2 * y + 1, 2 * x) = v;
              t.at(ch, 2 * y + 1, 2 * x + 1) = v;
            }
          }
        }
        break;
      }
      case Op::kMaxPool2: {
        // Directional derivative of max follows the selected element.
        const Node& a = nodes_[n.parents[0]];
        for (size_t i = 0; i < n.aux.size(); ++i) t.data[i] = a.tangent.data[n.aux[i]];
        break;
      }
      case Op::kSum: {
        const Node& a = nodes_[n.parents[0]];
        double acc = 0.0;
        for (double v : a.tangent.data) acc += v;
        t.data[0] = acc;
        break;
      }
      case Op::kMean: {
        const Node& a = nodes_[n.parents[0]];
        double acc = 0.0;
        for (double v : a.tangent.data) acc += v;
        t.data[0] = acc / static_cast<double>(a.value.numel());
        break;
      }
      case Op::kConv2d: {
        const Node& in = nodes_[n.parents[0]];
        const Node& k = nodes_[n.parents[1]];
        const Node& b = nodes_[n.parents[2]];
        if (in.has_tangent) conv2d_accumulate(in.tangent, k.value, n.pad, t);
        if (k.has_tangent) conv2d_accumulate(in.value, k.tangent, n.pad, t);
        if (b.has_tangent) add_bias(b.tangent, t);
        break;
      }
    }
    n.tangent = std::move(t);
    n.has_tangent = true;
  }
}

Tensor Tape::tangent(NodeId id) const {
  const Node& n = nodes_[check(id)];
  if (!n.has_tangent) return Tensor(n.value.shape);
  return n.tangent;
}

}  // namespace mcpm::ad
