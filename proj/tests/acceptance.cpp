// End-to-end acceptance gate. Prints one [PASS]/[FAIL] line per criterion
// and exits with the number of failures. Criteria 5-8 share one desk-scale
// sweep (r in {0, 0.4, 0.8}, seeds 1-3, both methods); criterion 10 runs the
// identical sweep again and compares the reports byte for byte. The long
// criteria take a few hours on one core; set MCPM_ACCEPT_SKIP_LONG=1 to skip
// them during development (skipped criteria still count as failures).
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mcpm/autodiff.hpp"
#include "mcpm/experiment.hpp"
#include "mcpm/metrics.hpp"
#include "mcpm/trainer.hpp"

using namespace mcpm;
using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream ss;
  ss.precision(prec);
  ss << v;
  return ss.str();
}

void report(int id, const std::string& name, bool ok, const std::string& detail) {
  std::cout << (ok ? "[PASS] " : "[FAIL] ") << id << ". " << name;
  if (!detail.empty()) std::cout << " (" << detail << ")";
  std::cout << "\n" << std::flush;
  if (!ok) ++g_failures;
}

void skip(int id, const std::string& name) {
  std::cout << "[SKIP] " << id << ". " << name << " (MCPM_ACCEPT_SKIP_LONG set)\n" << std::flush;
  ++g_failures;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is.good()) throw runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// Criterion 1: reverse gradients vs central finite differences on random
// small conv graphs, and forward/reverse duality on the same graphs.

struct GraphCapture {
  ad::NodeId out{};
  std::vector<ad::NodeId> relu_in;   // margin-checked against the kink
  std::vector<ad::NodeId> pool_in;   // margin-checked for argmax stability
  std::vector<ad::NodeId> sig_in;    // kept away from clamp saturation
};

using GraphBuilder =
    std::function<GraphCapture(ad::Tape&, const std::vector<ad::NodeId>&)>;

// Three conv-net shapes; dims drawn per graph, parameter count <= 2k.
struct GraphShape {
  int variant = 0;
  int ci = 1, c1 = 2, c2 = 2;
  std::vector<std::vector<int>> leaf_shapes;  // leaf 0 is the input image
  GraphBuilder build;
};

GraphShape make_shape(Rng& rng, int variant) {
  GraphShape g;
  g.variant = variant;
  const int h = 8, w = 8;
  if (variant == 0) {
    // conv-relu-conv-sigmoid stack with an extra quadratic mixing term
    g.ci = 1 + static_cast<int>(rng.integer(2));
    g.c1 = 2 + static_cast<int>(rng.integer(4));
    g.c2 = 1 + static_cast<int>(rng.integer(3));
    g.leaf_shapes = {{g.ci, h, w},
                     {g.c1, g.ci, 3, 3}, {g.c1},
                     {g.c2, g.c1, 3, 3}, {g.c2}};
    g.build = [](ad::Tape& t, const std::vector<ad::NodeId>& xs) {
      GraphCapture cap;
      ad::NodeId z1 = t.conv2d(xs[0], xs[1], xs[2], 1);
      cap.relu_in.push_back(z1);
      ad::NodeId z2 = t.conv2d(t.relu(z1), xs[3], xs[4], 1);
      cap.sig_in.push_back(z2);
      ad::NodeId quad = t.mul(t.mean(t.mul(xs[1], xs[1])), t.constant(Tensor::scalar(0.1)));
      cap.out = t.add(t.mean(t.sigmoid(z2)), quad);
      return cap;
    };
  } else if (variant == 1) {
    // downsampling path ending in a log-likelihood style reduction
    g.c1 = 2 + static_cast<int>(rng.integer(4));
    g.c2 = 2 + static_cast<int>(rng.integer(4));
    g.leaf_shapes = {{1, h, w},
                     {g.c1, 1, 3, 3}, {g.c1},
                     {g.c2, g.c1, 3, 3}, {g.c2},
                     {1, g.c2, 1, 1}, {1}};
    g.build = [](ad::Tape& t, const std::vector<ad::NodeId>& xs) {
      GraphCapture cap;
      ad::NodeId z1 = t.conv2d(xs[0], xs[1], xs[2], 1);
      cap.relu_in.push_back(z1);
      ad::NodeId r1 = t.relu(z1);
      cap.pool_in.push_back(r1);
      ad::NodeId p = t.maxpool2(r1);
      ad::NodeId z2 = t.conv2d(p, xs[3], xs[4], 1);
      cap.relu_in.push_back(z2);
      ad::NodeId z3 = t.conv2d(t.relu(z2), xs[5], xs[6], 0);
      cap.sig_in.push_back(z3);
      ad::NodeId s = t.sigmoid(z3);
      ad::NodeId lg = t.log(t.clamp(s, 1e-7, 1.0 - 1e-7));
      cap.out = t.mul(t.mean(lg), t.constant(Tensor::scalar(-1.0)));
      return cap;
    };
  } else {
    // small u-shape: pool, expand, upsample, skip concat, 1x1 head
    g.c1 = 2 + static_cast<int>(rng.integer(4));
    g.leaf_shapes = {{1, h, w},
                     {g.c1, 1, 3, 3}, {g.c1},
                     {2 * g.c1, g.c1, 3, 3}, {2 * g.c1},
                     {1, 3 * g.c1, 1, 1}, {1}};
    g.build = [](ad::Tape& t, const std::vector<ad::NodeId>& xs) {
      GraphCapture cap;
      ad::NodeId z1 = t.conv2d(xs[0], xs[1], xs[2], 1);
      cap.relu_in.push_back(z1);
      ad::NodeId r1 = t.relu(z1);
      cap.pool_in.push_back(r1);
      ad::NodeId z2 = t.conv2d(t.maxpool2(r1), xs[3], xs[4], 1);
      cap.relu_in.push_back(z2);
      std::vector<ad::NodeId> parts{r1, t.upsample2(t.relu(z2))};
      ad::NodeId z3 = t.conv2d(t.concat_channels(parts), xs[5], xs[6], 0);
      cap.sig_in.push_back(z3);
      ad::NodeId quad = t.mul(t.mean(t.mul(xs[3], xs[3])), t.constant(Tensor::scalar(0.05)));
      cap.out = t.add(t.mean(t.sigmoid(z3)), quad);
      return cap;
    };
  }
  return g;
}

std::vector<Tensor> draw_leaves(Rng& rng, const GraphShape& g) {
  std::vector<Tensor> xs;
  for (size_t i = 0; i < g.leaf_shapes.size(); ++i) {
    Tensor t(g.leaf_shapes[i]);
    for (double& v : t.data)
      v = i == 0 ? rng.uniform(0.05, 0.95) : rng.uniform(-0.5, 0.5);
    xs.push_back(std::move(t));
  }
  return xs;
}

// Finite differences need smooth surroundings: every relu input off the
// kink, every pool window with a clear winner, sigmoids out of clamp range.
bool margins_ok(const GraphShape& g, const std::vector<Tensor>& xs) {
  ad::Tape t;
  std::vector<ad::NodeId> ids;
  for (const Tensor& x : xs) ids.push_back(t.leaf(x));
  GraphCapture cap = g.build(t, ids);
  for (ad::NodeId id : cap.relu_in)
    for (double v : t.value(id).data)
      if (std::abs(v) < 1e-3) return false;
  for (ad::NodeId id : cap.sig_in)
    for (double v : t.value(id).data)
      if (std::abs(v) > 12.0) return false;
  for (ad::NodeId id : cap.pool_in) {
    const Tensor& v = t.value(id);
    const int c = v.shape[0], hh = v.shape[1], ww = v.shape[2];
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < hh; y += 2)
        for (int x = 0; x < ww; x += 2) {
          double a[4] = {v.at(ch, y, x), v.at(ch, y, x + 1), v.at(ch, y + 1, x),
                         v.at(ch, y + 1, x + 1)};
          std::sort(a, a + 4);
          // an all-zero window (relu of negatives) is a stable tie; only a
          // close race between positive values flips the argmax under fd
          if (a[3] > 0.0 && a[3] - a[2] < 1e-3) return false;
        }
  }
  return true;
}

double graph_value(const GraphShape& g, const std::vector<Tensor>& xs) {
  ad::Tape t;
  std::vector<ad::NodeId> ids;
  for (const Tensor& x : xs) ids.push_back(t.leaf(x));
  return t.value(g.build(t, ids).out)[0];
}

void criterion_autodiff() {
  const auto t0 = Clock::now();
  double worst_fd = 0.0, worst_dual = 0.0;
  int resamples = 0;
  bool ok = true;
  std::string why;

  for (int gi = 0; gi < 25 && ok; ++gi) {
    Rng shape_rng(derive_seed(7000, "accept-graph") + static_cast<uint64_t>(gi));
    GraphShape g = make_shape(shape_rng, gi % 3);

    size_t n_params = 0;
    for (size_t i = 1; i < g.leaf_shapes.size(); ++i) {
      size_t n = 1;
      for (int d : g.leaf_shapes[i]) n *= static_cast<size_t>(d);
      n_params += n;
    }
    if (n_params > 2000) {
      ok = false;
      why = "graph " + std::to_string(gi) + " has " + std::to_string(n_params) + " params";
      break;
    }

    std::vector<Tensor> xs;
    bool found = false;
    for (int attempt = 0; attempt < 200 && !found; ++attempt) {
      Rng rng(derive_seed(7100 + static_cast<uint64_t>(gi), "accept-draw") +
              static_cast<uint64_t>(attempt));
      xs = draw_leaves(rng, g);
      found = margins_ok(g, xs);
      if (!found) ++resamples;
    }
    if (!found) {
      ok = false;
      why = "no margin-clean sample for graph " + std::to_string(gi);
      break;
    }

    // reverse pass
    ad::Tape tape;
    std::vector<ad::NodeId> ids;
    for (const Tensor& x : xs) ids.push_back(tape.leaf(x));
    GraphCapture cap = g.build(tape, ids);
    tape.backward(cap.out);

    // every coordinate against central differences
    const double eps = 1e-5;
    for (size_t li = 0; li < xs.size() && ok; ++li) {
      const Tensor grad = tape.adjoint(ids[li]);
      for (size_t j = 0; j < xs[li].numel(); ++j) {
        const double keep = xs[li].data[j];
        xs[li].data[j] = keep + eps;
        const double fp = graph_value(g, xs);
        xs[li].data[j] = keep - eps;
        const double fm = graph_value(g, xs);
        xs[li].data[j] = keep;
        const double fd = (fp - fm) / (2.0 * eps);
        const double ad_g = grad.data[j];
        const double rel =
            std::abs(ad_g - fd) / std::max({std::abs(ad_g), std::abs(fd), 1e-3});
        worst_fd = std::max(worst_fd, rel);
        if (rel > 1e-6) {
          ok = false;
          why = "graph " + std::to_string(gi) + " leaf " + std::to_string(li) + " coord " +
                std::to_string(j) + " rel " + fmt(rel, 3);
          break;
        }
      }
    }

    // duality: the jvp along a random direction equals <grad, direction>
    Rng dir_rng(derive_seed(7200 + static_cast<uint64_t>(gi), "accept-dir"));
    std::vector<std::pair<ad::NodeId, Tensor>> dirs;
    double dot = 0.0;
    for (size_t li = 0; li < xs.size(); ++li) {
      Tensor v(xs[li].shape);
      const Tensor grad = tape.adjoint(ids[li]);
      for (size_t j = 0; j < v.numel(); ++j) {
        v.data[j] = dir_rng.uniform(-1.0, 1.0);
        dot += grad.data[j] * v.data[j];
      }
      dirs.emplace_back(ids[li], std::move(v));
    }
    tape.jvp(dirs);
    const double tangent = tape.tangent(cap.out)[0];
    const double dual =
        std::abs(tangent - dot) / std::max({std::abs(tangent), std::abs(dot), 1.0});
    worst_dual = std::max(worst_dual, dual);
    if (dual > 1e-10) {
      ok = false;
      why = "duality gap " + fmt(dual, 3) + " on graph " + std::to_string(gi);
    }
  }

  const double secs = seconds_since(t0);
  if (ok && secs >= 30.0) {
    ok = false;
    why = "took " + fmt(secs, 3) + "s, bound is 30s";
  }
  report(1, "reverse gradients match finite differences on 25 random conv graphs", ok,
         ok ? "max fd rel err " + fmt(worst_fd, 3) + " <= 1e-6, max duality gap " +
                  fmt(worst_dual, 3) + " <= 1e-10, " + std::to_string(resamples) +
                  " margin resamples, " + fmt(secs, 3) + "s < 30s"
            : why);
}

// ---------------------------------------------------------------------------
// Shared tiny-instance helpers for criteria 2-4.

struct TinySetup {
  TrainConfig cfg;
  DatasetBundle bundle;
};

TinySetup make_tiny(uint64_t seed, double r, int train_count, int meta_count, int test_count) {
  SyntheticSpec spec;
  spec.train_count = train_count;
  spec.meta_count = meta_count;
  spec.test_count = test_count;
  spec.h = 8;
  spec.w = 8;
  spec.blobs_lo = 1;
  spec.blobs_hi = 1;
  spec.radius_lo = 1.5;
  spec.radius_hi = 2.5;
  spec.seed = seed;
  TinySetup t;
  t.bundle = generate(spec);
  if (r > 0.0) {
    CorruptionSpec cs;
    cs.r = r;
    cs.kind = CorruptionKind::kDilation;
    cs.radius_lo = 1;
    cs.radius_hi = 2;
    cs.seed = derive_seed(seed, "tiny-corrupt");
    t.bundle.train = corrupt(t.bundle.train, cs);
  }
  t.cfg.seg = SegConfig{1, 1, 1, 2};
  t.cfg.mask = MaskConfig{2, false};
  t.cfg.seed = seed;
  return t;
}

ParamSet zero_params(const std::vector<TensorSpec>& layout) {
  ParamSet p;
  for (const TensorSpec& s : layout) p.tensors.push_back({s.name, Tensor(s.shape)});
  return p;
}

// every entry random, biases included, so no relu input sits on its kink
ParamSet random_params(const std::vector<TensorSpec>& layout, uint64_t seed) {
  Rng rng(seed);
  ParamSet p = zero_params(layout);
  for (NamedTensor& nt : p.tensors)
    for (double& v : nt.value.data) v = rng.uniform(-0.4, 0.4);
  return p;
}

size_t param_count(const ParamSet& p) {
  size_t n = 0;
  for (const NamedTensor& nt : p.tensors) n += nt.value.numel();
  return n;
}

double mean_batch_loss(const SegConfig& cfg, const SegParams& w, std::span<const Sample> batch) {
  double acc = 0.0;
  size_t n = 0;
  for (const Sample& s : batch) {
    Tensor l = pixel_loss(seg_forward(cfg, w, s.image), s.label);
    for (double v : l.data) acc += v;
    n += l.data.size();
  }
  return acc / static_cast<double>(n);
}

SegParams plain_sgd_step(const SegConfig& cfg, const SegParams& w, std::span<const Sample> batch,
                         double alpha) {
  ad::Tape tape;
  std::vector<ad::NodeId> leaves = bind_params(tape, w);
  std::vector<ad::NodeId> maps;
  for (const Sample& s : batch)
    maps.push_back(pixel_loss_graph(tape, seg_graph(tape, cfg, leaves, tape.constant(s.image)),
                                    tape.constant(s.label)));
  tape.backward(tape.mean(tape.concat_channels(maps)));
  SegParams out = w;
  for (size_t k = 0; k < leaves.size(); ++k) {
    Tensor g = tape.adjoint(leaves[k]);
    for (size_t j = 0; j < g.data.size(); ++j) out.tensors[k].value.data[j] -= alpha * g.data[j];
  }
  return out;
}

double max_abs_diff(const ParamSet& a, const ParamSet& b) {
  double worst = 0.0;
  for (size_t i = 0; i < a.tensors.size(); ++i)
    for (size_t j = 0; j < a.tensors[i].value.data.size(); ++j)
      worst = std::max(worst,
                       std::abs(a.tensors[i].value.data[j] - b.tensors[i].value.data[j]));
  return worst;
}

// ---------------------------------------------------------------------------
// Criterion 2: the meta gradient against coordinate finite differences of
// theta -> meta-loss(virtual_update(w, theta)).

void criterion_hypergradient() {
  const auto t0 = Clock::now();
  TinySetup t = make_tiny(506, 0.5, 2, 3, 2);
  std::span<const Sample> batch(t.bundle.train.samples);
  std::span<const Sample> meta(t.bundle.meta.samples);
  SegParams w = random_params(seg_param_layout(t.cfg.seg), 17);
  MaskParams theta = random_params(mask_param_layout(t.cfg.mask), 18);
  const double alpha = 0.5;  // large enough for the mask influence to clear fd noise

  const size_t seg_n = param_count(w);
  const size_t mask_n = param_count(theta);

  MaskParams analytic = meta_gradient(t.cfg, w, theta, batch, meta, alpha);

  auto pipeline = [&](const MaskParams& th) {
    SegParams wp = virtual_update(t.cfg, w, th, batch, alpha);
    return mean_batch_loss(t.cfg.seg, wp, meta);
  };

  const double eps = 1e-5;
  double worst = 0.0;
  for (size_t k = 0; k < theta.tensors.size(); ++k) {
    for (size_t j = 0; j < theta.tensors[k].value.data.size(); ++j) {
      MaskParams probe = theta;
      probe.tensors[k].value.data[j] += eps;
      const double hi = pipeline(probe);
      probe.tensors[k].value.data[j] -= 2.0 * eps;
      const double lo = pipeline(probe);
      const double fd = (hi - lo) / (2.0 * eps);
      const double an = analytic.tensors[k].value.data[j];
      worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8}));
    }
  }
  const double secs = seconds_since(t0);
  const bool ok = worst <= 1e-4 && seg_n <= 1000 && secs < 120.0;
  report(2, "meta gradient matches finite differences through the virtual update", ok,
         "max rel err " + fmt(worst, 3) + " <= 1e-4 over " + std::to_string(mask_n) +
             " mask coords, seg params " + std::to_string(seg_n) + " <= 1000, " +
             fmt(secs, 3) + "s < 120s");
}

// ---------------------------------------------------------------------------
// Criterion 3: forced-weight degenerations and the half-rate equivalence.

MaskParams saturated_mask(const MaskConfig& cfg, double bias) {
  MaskParams t = zero_params(mask_param_layout(cfg));
  t.find("fuse.bias")->data[0] = bias;  // +-800 saturates the sigmoid exactly
  return t;
}

void criterion_degenerate() {
  TinySetup t = make_tiny(111, 0.5, 20, 3, 2);
  std::span<const Sample> all(t.bundle.train.samples);
  Rng rng(derive_seed(111, "seg-init"));
  SegParams w = init_seg_params(t.cfg.seg, rng);
  const double alpha = 0.1;

  bool ok = true;
  std::string why;

  // full weights: one virtual step is one plain sgd step
  std::span<const Sample> batch = all.subspan(0, 4);
  MaskParams ones = saturated_mask(t.cfg.mask, 800.0);
  const double d_sgd = max_abs_diff(virtual_update(t.cfg, w, ones, batch, alpha),
                                    plain_sgd_step(t.cfg.seg, w, batch, alpha));
  if (d_sgd > 1e-15) {
    ok = false;
    why = "full-weight step differs from sgd by " + fmt(d_sgd, 3);
  }

  // zero weights: parameters do not move at all
  MaskParams zeros = saturated_mask(t.cfg.mask, -800.0);
  const double d_frozen = max_abs_diff(virtual_update(t.cfg, w, zeros, batch, alpha), w);
  if (ok && d_frozen != 0.0) {
    ok = false;
    why = "zero-weight step moved parameters by " + fmt(d_frozen, 3);
  }

  // beta=0 with the neutral mask tracks plain sgd at half rate, step by step
  double worst_step = 0.0;
  if (ok) {
    MaskParams neutral = zero_params(mask_param_layout(t.cfg.mask));  // R = 0.5 everywhere
    TrainState st;
    st.w = w;
    st.theta = neutral;
    st.alpha = alpha;
    st.beta = 0.0;
    SegParams ref = w;
    for (int step = 0; step < 10; ++step) {
      std::span<const Sample> b = all.subspan(static_cast<size_t>(step) * 2, 2);
      meta_step(t.cfg, st, b, std::span<const Sample>(t.bundle.meta.samples));
      st.w = actual_update(t.cfg, st.w, st.theta, b, st.alpha);
      ref = plain_sgd_step(t.cfg.seg, ref, b, alpha / 2.0);
      worst_step = std::max(worst_step, max_abs_diff(st.w, ref));
    }
    if (worst_step > 1e-12) {
      ok = false;
      why = "half-rate equivalence off by " + fmt(worst_step, 3) + " after 10 steps";
    }
  }

  report(3, "forced weights degenerate to plain SGD, frozen parameters, and half rate", ok,
         ok ? "sgd diff " + fmt(d_sgd, 3) + " <= 1e-15, frozen diff 0, half-rate diff " +
                  fmt(worst_step, 3) + " <= 1e-12 over 10 steps"
            : why);
}

// ---------------------------------------------------------------------------
// Criterion 4: a meta step moves a single pixel's weight along the sign of
// its inner product, over 50 random configurations.

void criterion_sign() {
  int configs = 0, correct = 0, saw_positive = 0, saw_negative = 0;
  for (uint64_t seed = 520; configs < 50 && seed < 620; ++seed) {
    TinySetup t = make_tiny(seed, 0.5, 2, 2, 2);
    std::span<const Sample> batch(t.bundle.train.samples);
    std::span<const Sample> meta(t.bundle.meta.samples);
    Rng rw(derive_seed(seed + 1, "seg-init"));
    Rng rm(derive_seed(seed + 2, "mask-init"));
    SegParams w = init_seg_params(t.cfg.seg, rw);
    MaskParams theta = init_mask_params(t.cfg.mask, rm);
    const double alpha = 0.5, beta = 1e-5;

    MetaGradientState state;
    meta_gradient(t.cfg, w, theta, batch, meta, alpha, &state);

    for (size_t i = 0; i < batch.size() && configs < 50; ++i) {
      const Tensor& s = state.inner_products[i];
      size_t q = 0;
      for (size_t j = 0; j < s.data.size(); ++j)
        if (std::abs(s.data[j]) > std::abs(s.data[q])) q = j;
      if (s.data[q] == 0.0) continue;

      // rebuild the mask input and step theta using only pixel q's seed
      std::vector<Tensor> loss_maps, cotangents;
      size_t pixels_total = 0;
      for (const Sample& smp : batch) {
        loss_maps.push_back(pixel_loss(seg_forward(t.cfg.seg, w, smp.image), smp.label));
        pixels_total += loss_maps.back().numel();
      }
      for (size_t i2 = 0; i2 < batch.size(); ++i2) {
        Tensor c({loss_maps[i2].shape[0], loss_maps[i2].shape[1]});
        if (i2 == i) c.data[q] = -alpha * s.data[q] / static_cast<double>(pixels_total);
        cotangents.push_back(std::move(c));
      }
      MaskParams d = mask_pixel_gradient(t.cfg.mask, theta, loss_maps, cotangents);

      MaskParams stepped = theta;
      for (size_t k = 0; k < d.tensors.size(); ++k)
        for (size_t j = 0; j < d.tensors[k].value.data.size(); ++j)
          stepped.tensors[k].value.data[j] -= beta * d.tensors[k].value.data[j];

      const double before = mask_forward(t.cfg.mask, theta, loss_maps[i]).data[q];
      const double after = mask_forward(t.cfg.mask, stepped, loss_maps[i]).data[q];
      ++configs;
      if (s.data[q] > 0.0) {
        ++saw_positive;
        if (after > before) ++correct;
      } else {
        ++saw_negative;
        if (after < before) ++correct;
      }
    }
  }
  const bool ok = configs == 50 && correct == 50 && saw_positive > 0 && saw_negative > 0;
  report(4, "one meta step moves single pixel weights along their inner products", ok,
         std::to_string(correct) + "/" + std::to_string(configs) + " correct, " +
             std::to_string(saw_positive) + " positive and " + std::to_string(saw_negative) +
             " negative cases");
}

// ---------------------------------------------------------------------------
// Criteria 5-8 and 10: the desk-scale sweep.

struct SweepData {
  std::vector<ReportRow> rows;
  std::string report_path;
  std::string cells_dir;
  bool ran = false;
  std::string error;
};

SweepData run_acceptance_sweep(const std::string& out_dir) {
  SweepData data;
  try {
    const std::string base_text = slurp(DESK_CONFIG_PATH);
    const std::string sweep_text =
        "{\"base\": " + base_text + ", \"r_values\": [0, 0.4, 0.8], \"seeds\": [1, 2, 3]}";
    SweepSpec spec = parse_sweep_spec(sweep_text, "acceptance-sweep");
    std::cerr << "acceptance: sweeping r in {0, 0.4, 0.8} x seeds {1,2,3} into " << out_dir
              << " (this takes a while)\n";
    data.rows = run_sweep(spec, out_dir);
    data.report_path = out_dir + "/sweep_report.csv";
    data.cells_dir = out_dir + "/cells";
    data.ran = true;
  } catch (const std::exception& e) {
    data.error = e.what();
  }
  return data;
}

double find_miou(const SweepData& d, const std::string& method, double r, uint64_t seed) {
  for (const ReportRow& row : d.rows)
    if (row.method == method && row.r == r && row.seed == seed) return row.miou;
  return std::numeric_limits<double>::quiet_NaN();
}

std::string bad_statuses(const SweepData& d) {
  std::string out;
  for (const ReportRow& row : d.rows)
    if (row.status != "ok")
      out += (out.empty() ? "" : "; ") + row.method + " r=" + fmt(row.r, 2) + " seed " +
             std::to_string(row.seed) + ": " + row.status;
  return out;
}

void criterion_gap(const SweepData& d) {
  if (!d.ran) {
    report(5, "desk-scale robustness gap at r=0.4", false, d.error);
    return;
  }
  const std::string bad = bad_statuses(d);
  double gap = 0.0, slowest = 0.0;
  for (uint64_t seed : {1, 2, 3}) {
    gap += (find_miou(d, "mcpm", 0.4, seed) - find_miou(d, "baseline", 0.4, seed)) / 3.0;
    double cell = 0.0;
    for (const ReportRow& row : d.rows)
      if (row.r == 0.4 && row.seed == seed) cell += row.wall_seconds;
    slowest = std::max(slowest, cell);
  }
  const bool ok = bad.empty() && gap >= 0.05;
  report(5, "desk-scale robustness gap at r=0.4", ok,
         bad.empty() ? "mean miou gap " + fmt(100.0 * gap, 4) + " points >= 5, slowest r=0.4 seed " +
                           fmt(slowest / 60.0, 3) + " min (target < 30)"
                     : bad);
}

void criterion_trend(const SweepData& d) {
  if (!d.ran) {
    report(6, "baseline degrades with r and the gap grows", false, d.error);
    return;
  }
  const std::string bad = bad_statuses(d);
  int satisfied = 0;
  std::string per_seed;
  for (uint64_t seed : {1, 2, 3}) {
    const double b0 = find_miou(d, "baseline", 0.0, seed);
    const double b4 = find_miou(d, "baseline", 0.4, seed);
    const double b8 = find_miou(d, "baseline", 0.8, seed);
    const double g0 = find_miou(d, "mcpm", 0.0, seed) - b0;
    const double g8 = find_miou(d, "mcpm", 0.8, seed) - b8;
    const bool mono = b0 >= b4 && b4 >= b8;
    const bool grows = g8 > g0;
    if (mono && grows) ++satisfied;
    per_seed += (per_seed.empty() ? "seed " : ", seed ") + std::to_string(seed) + ": baseline " +
                fmt(b0, 3) + "/" + fmt(b4, 3) + "/" + fmt(b8, 3) + (mono ? " mono" : " NOT-mono") +
                ", gap " + fmt(g0, 3) + "->" + fmt(g8, 3) + (grows ? " grows" : " FLAT");
  }
  const bool ok = bad.empty() && satisfied >= 2;
  report(6, "baseline degrades with r and the gap grows", ok,
         bad.empty() ? std::to_string(satisfied) + "/3 seeds satisfy the trend; " + per_seed : bad);
}

void criterion_no_harm(const SweepData& d) {
  if (!d.ran) {
    report(7, "clean-data runs keep mcpm within 3 points of the baseline", false, d.error);
    return;
  }
  const std::string bad = bad_statuses(d);
  double m = 0.0, b = 0.0;
  for (uint64_t seed : {1, 2, 3}) {
    m += find_miou(d, "mcpm", 0.0, seed) / 3.0;
    b += find_miou(d, "baseline", 0.0, seed) / 3.0;
  }
  const double diff = std::abs(m - b);
  const bool ok = bad.empty() && diff <= 0.03;
  report(7, "clean-data runs keep mcpm within 3 points of the baseline", ok,
         bad.empty() ? "mcpm " + fmt(m, 4) + " vs baseline " + fmt(b, 4) + ", |diff| " +
                           fmt(100.0 * diff, 3) + " points <= 3"
                     : bad);
}

void criterion_mining(const SweepData& d) {
  if (!d.ran) {
    report(8, "mask weights are lower on corruption-band pixels for every seed", false, d.error);
    return;
  }
  bool ok = true;
  std::string detail;
  for (uint64_t seed : {1, 2, 3}) {
    const std::string path =
        d.cells_dir + "/s" + std::to_string(seed) + "_r0.4/mcpm/final_metrics.json";
    try {
      const json doc = json::parse(slurp(path));
      const double clean = doc.at("weights").at("mean_clean").get<double>();
      const double band = doc.at("weights").at("mean_corrupted").get<double>();
      const bool lower = band < clean;
      if (!lower) ok = false;
      detail += (detail.empty() ? "seed " : ", seed ") + std::to_string(seed) + ": band " +
                fmt(band, 4) + (lower ? " < " : " >= ") + "non-band " + fmt(clean, 4);
    } catch (const std::exception& e) {
      ok = false;
      detail += (detail.empty() ? "" : ", ") + std::string(e.what());
    }
  }
  report(8, "mask weights are lower on corruption-band pixels for every seed", ok, detail);
}

// ---------------------------------------------------------------------------
// Criterion 9: metric identities against brute force.

BinaryMask random_mask(Rng& rng, int h, int w, double density) {
  BinaryMask m;
  m.h = h;
  m.w = w;
  m.on.resize(static_cast<size_t>(h) * w);
  for (auto& v : m.on) v = rng.uniform(0.0, 1.0) < density ? 1 : 0;
  return m;
}

BinaryMask make_mask(int h, int w, const std::vector<std::pair<int, int>>& pts) {
  BinaryMask m;
  m.h = h;
  m.w = w;
  m.on.assign(static_cast<size_t>(h) * w, 0);
  for (auto [y, x] : pts) m.on[static_cast<size_t>(y) * w + x] = 1;
  return m;
}

double naive_hausdorff(const BinaryMask& a, const BinaryMask& b) {
  std::vector<std::pair<int, int>> fa, fb;
  for (int y = 0; y < a.h; ++y)
    for (int x = 0; x < a.w; ++x) {
      if (a.at(y, x)) fa.push_back({y, x});
      if (b.at(y, x)) fb.push_back({y, x});
    }
  if (fa.empty() && fb.empty()) return 0.0;
  if (fa.empty() || fb.empty())
    return std::sqrt(static_cast<double>(a.h) * a.h + static_cast<double>(a.w) * a.w);
  double worst = 0.0;
  for (int dir = 0; dir < 2; ++dir) {
    const auto& src = dir == 0 ? fa : fb;
    const auto& dst = dir == 0 ? fb : fa;
    for (auto [py, px] : src) {
      double best = std::numeric_limits<double>::infinity();
      for (auto [qy, qx] : dst) {
        const double dy = py - qy;
        const double dx = px - qx;
        best = std::min(best, dy * dy + dx * dx);
      }
      worst = std::max(worst, best);
    }
  }
  return std::sqrt(worst);
}

void criterion_metrics() {
  bool ok = true;
  std::string why;

  // dice-iou identity over 1000 random pairs
  double worst_identity = 0.0;
  Rng rng(derive_seed(900, "accept-metrics"));
  for (int trial = 0; trial < 1000 && ok; ++trial) {
    const int h = rng.int_range(1, 12);
    const int w = rng.int_range(1, 12);
    const double density = rng.uniform(0.0, 0.6);
    BinaryMask a = random_mask(rng, h, w, density);
    BinaryMask b = random_mask(rng, h, w, density);
    const double i = iou(a, b);
    const double dd = dice(a, b);
    const double gap = std::abs(dd - 2.0 * i / (1.0 + i));
    worst_identity = std::max(worst_identity, gap);
    if (gap > 1e-15) {
      ok = false;
      why = "identity gap " + fmt(gap, 3) + " on trial " + std::to_string(trial);
    }
  }

  // hausdorff equals the all-pairs reference on 100 random masks
  int hd_equal = 0;
  for (int trial = 0; trial < 100 && ok; ++trial) {
    const int h = rng.int_range(1, 9);
    const int w = rng.int_range(1, 9);
    const double density = trial % 7 == 0 ? 0.02 : rng.uniform(0.05, 0.7);
    BinaryMask a = random_mask(rng, h, w, density);
    BinaryMask b = random_mask(rng, h, w, density);
    if (hausdorff(a, b) == naive_hausdorff(a, b)) {
      ++hd_equal;
    } else {
      ok = false;
      why = "hausdorff mismatch on trial " + std::to_string(trial);
    }
  }

  // pinned conventions
  if (ok) {
    BinaryMask a = make_mask(4, 4, {{0, 0}, {0, 1}});
    BinaryMask b = make_mask(4, 4, {{0, 1}, {0, 2}});
    BinaryMask empty = make_mask(4, 4, {});
    BinaryMask p = make_mask(8, 8, {{0, 0}});
    BinaryMask q = make_mask(8, 8, {{3, 4}});
    const bool pins = iou(a, a) == 1.0 && dice(a, a) == 1.0 && hausdorff(a, a) == 0.0 &&
                      iou(a, b) == 1.0 / 3.0 && dice(a, b) == 0.5 && hausdorff(p, q) == 5.0 &&
                      iou(empty, empty) == 1.0 && dice(empty, empty) == 1.0 &&
                      hausdorff(empty, empty) == 0.0 && iou(a, empty) == 0.0 &&
                      dice(a, empty) == 0.0 && hausdorff(a, empty) == std::sqrt(32.0);
    if (!pins) {
      ok = false;
      why = "a pinned metric example does not hold";
    }
  }

  report(9, "metric identities: dice-iou, brute-force hausdorff, pinned examples", ok,
         ok ? "identity gap <= " + fmt(worst_identity, 3) + " over 1000 pairs, " +
                  std::to_string(hd_equal) + "/100 hausdorff exact, pins hold"
            : why);
}

void criterion_determinism(const SweepData& first) {
  if (!first.ran) {
    report(10, "re-running the sweep reproduces the report byte for byte", false, first.error);
    return;
  }
  SweepData second = run_acceptance_sweep("acceptance_tmp/sweep_rerun");
  if (!second.ran) {
    report(10, "re-running the sweep reproduces the report byte for byte", false, second.error);
    return;
  }
  bool ok = true;
  std::string why;
  try {
    if (slurp(first.report_path) != slurp(second.report_path)) {
      ok = false;
      why = "sweep_report.csv differs between runs";
    }
    int histories = 0;
    if (ok) {
      for (uint64_t seed : {1, 2, 3})
        for (const std::string r : {"0", "0.4", "0.8"})
          for (const std::string method : {"mcpm", "baseline"}) {
            const std::string rel =
                "/s" + std::to_string(seed) + "_r" + r + "/" + method + "/history.csv";
            if (slurp(first.cells_dir + rel) != slurp(second.cells_dir + rel)) {
              ok = false;
              why = "history differs: " + rel;
              break;
            }
            ++histories;
          }
    }
    if (ok)
      why = "sweep_report.csv identical, " + std::to_string(histories) +
            " per-epoch histories identical";
  } catch (const std::exception& e) {
    ok = false;
    why = e.what();
  }
  report(10, "re-running the sweep reproduces the report byte for byte", ok, why);
}

}  // namespace

int main() {
  std::cout.setf(std::ios::unitbuf);
  const bool skip_long = std::getenv("MCPM_ACCEPT_SKIP_LONG") != nullptr;

  criterion_autodiff();
  criterion_hypergradient();
  criterion_degenerate();
  criterion_sign();

  if (skip_long) {
    skip(5, "desk-scale robustness gap at r=0.4");
    skip(6, "baseline degrades with r and the gap grows");
    skip(7, "clean-data runs keep mcpm within 3 points of the baseline");
    skip(8, "mask weights are lower on corruption-band pixels for every seed");
    criterion_metrics();
    skip(10, "re-running the sweep reproduces the report byte for byte");
  } else {
    SweepData sweep = run_acceptance_sweep("acceptance_tmp/sweep");
    criterion_gap(sweep);
    criterion_trend(sweep);
    criterion_no_harm(sweep);
    criterion_mining(sweep);
    criterion_metrics();
    criterion_determinism(sweep);
  }

  std::cout << (g_failures == 0 ? "all criteria passed" : std::to_string(g_failures) + " failed")
            << "\n";
  return g_failures;
}
