#include "mcpm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "mcpm/autodiff.hpp"
#include "mcpm/checkpoint.hpp"
#include "mcpm/metrics.hpp"

namespace mcpm {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

Tensor map_to_hw(const Tensor& t) {
  // graph-level maps are [1,h,w]; the value-level convention is [h,w]
  return Tensor({t.shape[1], t.shape[2]}, t.data);
}

Tensor map_to_chw(const Tensor& t) { return Tensor({1, t.shape[0], t.shape[1]}, t.data); }

bool finite_tensor(const Tensor& t) {
  for (double v : t.data)
    if (!std::isfinite(v)) return false;
  return true;
}

// Segmentation forward passes and loss maps for a whole batch on one tape,
// sharing the parameter leaves. The reverse, forward-mode and second
// reverse passes of one iteration all reuse this graph.
struct BatchGraph {
  ad::Tape tape;
  std::vector<ad::NodeId> leaves;
  std::vector<ad::NodeId> loss_maps;  // [1,h,w] per sample
  std::vector<Tensor> loss_values;
};

BatchGraph build_batch_graph(const SegConfig& cfg, const SegParams& w,
                             std::span<const Sample> batch) {
  BatchGraph g;
  g.leaves = bind_params(g.tape, w);
  g.loss_maps.reserve(batch.size());
  g.loss_values.reserve(batch.size());
  for (const Sample& s : batch) {
    ad::NodeId pred = seg_graph(g.tape, cfg, g.leaves, g.tape.constant(s.image));
    ad::NodeId lm = pixel_loss_graph(g.tape, pred, g.tape.constant(s.label));
    g.loss_maps.push_back(lm);
    g.loss_values.push_back(g.tape.value(lm));
  }
  return g;
}

// R for every sample of the batch, kept in graph form [1,h,w].
std::vector<Tensor> mask_weights(const MaskConfig& cfg, const MaskParams& theta,
                                 std::span<const Tensor> loss_values) {
  std::vector<Tensor> r;
  r.reserve(loss_values.size());
  for (const Tensor& l : loss_values)
    r.push_back(map_to_chw(mask_forward(cfg, theta, map_to_hw(l))));
  return r;
}

// mean over images and pixels of weight * loss; with every weight at one
// this is exactly the plain mean loss node.
ad::NodeId weighted_scalar(BatchGraph& g, std::span<const Tensor> weights) {
  std::vector<ad::NodeId> terms;
  terms.reserve(g.loss_maps.size());
  for (size_t i = 0; i < g.loss_maps.size(); ++i)
    terms.push_back(g.tape.mul(g.loss_maps[i], g.tape.constant(weights[i])));
  return g.tape.mean(g.tape.concat_channels(terms));
}

ad::NodeId unweighted_scalar(BatchGraph& g) {
  return g.tape.mean(g.tape.concat_channels(g.loss_maps));
}

// w - lr * adjoint for every leaf; reports whether the result stayed finite.
ParamSet stepped_params(const ParamSet& w, const ad::Tape& tape,
                        std::span<const ad::NodeId> leaves, double lr, bool* finite_out) {
  ParamSet out = w;
  bool ok = true;
  for (size_t k = 0; k < leaves.size(); ++k) {
    Tensor grad = tape.adjoint(leaves[k]);
    std::vector<double>& dst = out.tensors[k].value.data;
    for (size_t j = 0; j < dst.size(); ++j) {
      dst[j] -= lr * grad.data[j];
      ok = ok && std::isfinite(dst[j]);
    }
  }
  if (finite_out) *finite_out = ok;
  return out;
}

// Reverse pass of the mean meta loss at wprime; the returned gradient is the
// direction gbar the forward-mode pass is run along.
SegParams meta_loss_gradient(const SegConfig& cfg, const SegParams& wprime,
                             std::span<const Sample> meta_batch, double* loss_out) {
  BatchGraph g = build_batch_graph(cfg, wprime, meta_batch);
  ad::NodeId loss = unweighted_scalar(g);
  if (loss_out) *loss_out = g.tape.value(loss).data[0];
  g.tape.backward(loss);
  SegParams gbar = wprime;
  for (size_t k = 0; k < g.leaves.size(); ++k) gbar.tensors[k].value = g.tape.adjoint(g.leaves[k]);
  return gbar;
}

// Forward-mode pass along gbar: the tangent of each loss map collects the
// per-pixel inner products s = <dL_xy/dW, gbar> of one image.
std::vector<Tensor> inner_product_maps(BatchGraph& g, const SegParams& gbar) {
  std::vector<std::pair<ad::NodeId, Tensor>> dirs;
  dirs.reserve(g.leaves.size());
  for (size_t k = 0; k < g.leaves.size(); ++k) dirs.push_back({g.leaves[k], gbar.tensors[k].value});
  g.tape.jvp(dirs);
  std::vector<Tensor> s;
  s.reserve(g.loss_maps.size());
  for (ad::NodeId lm : g.loss_maps) s.push_back(g.tape.tangent(lm));
  return s;
}

void check_batch(std::span<const Sample> batch, const char* who) {
  if (batch.empty()) throw config_error(std::string(who) + ": empty batch");
}

void check_rate(double alpha, const char* who) {
  if (!(alpha > 0.0)) throw config_error(std::string(who) + ": alpha must be positive");
}

SegParams weighted_sgd_step(const TrainConfig& cfg, const SegParams& w, const MaskParams& theta,
                            std::span<const Sample> batch, double alpha, const char* who) {
  check_batch(batch, who);
  check_rate(alpha, who);
  BatchGraph g = build_batch_graph(cfg.seg, w, batch);
  std::vector<Tensor> r = mask_weights(cfg.mask, theta, g.loss_values);
  g.tape.backward(weighted_scalar(g, r));
  bool finite = true;
  SegParams out = stepped_params(w, g.tape, g.leaves, alpha, &finite);
  if (!finite) throw runtime_error(std::string(who) + ": non-finite gradient step");
  return out;
}

void check_params_match(const std::vector<TensorSpec>& layout, const ParamSet& params,
                        const char* who) {
  if (layout.size() != params.tensors.size())
    throw config_error(std::string(who) + ": expected " + std::to_string(layout.size()) +
                       " parameter tensors, got " + std::to_string(params.tensors.size()));
  for (size_t i = 0; i < layout.size(); ++i) {
    if (layout[i].name != params.tensors[i].name || layout[i].shape != params.tensors[i].value.shape)
      throw config_error(std::string(who) + ": parameter " + std::to_string(i) +
                         " does not match the layout (want " + layout[i].name + ")");
  }
}

struct AdamState {
  std::vector<Tensor> m, v;
  int64_t t = 0;
};

void adam_step(AdamState& st, ParamSet& w, const ad::Tape& tape,
               std::span<const ad::NodeId> leaves, double lr, bool* finite_out) {
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  if (st.m.empty()) {
    for (const NamedTensor& nt : w.tensors) {
      st.m.push_back(Tensor::zeros_like(nt.value));
      st.v.push_back(Tensor::zeros_like(nt.value));
    }
  }
  st.t += 1;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.t));
  bool ok = true;
  for (size_t k = 0; k < leaves.size(); ++k) {
    Tensor grad = tape.adjoint(leaves[k]);
    std::vector<double>& dst = w.tensors[k].value.data;
    for (size_t j = 0; j < dst.size(); ++j) {
      double g = grad.data[j];
      double& m = st.m[k].data[j];
      double& v = st.v[k].data[j];
      m = b1 * m + (1.0 - b1) * g;
      v = b2 * v + (1.0 - b2) * g * g;
      dst[j] -= lr * (m / c1) / (std::sqrt(v / c2) + eps);
      ok = ok && std::isfinite(dst[j]);
    }
  }
  if (finite_out) *finite_out = ok;
}

void write_epoch_checkpoint(const TrainConfig& cfg, const SegParams& w, const MaskParams* theta,
                            int epoch, const std::string& stem) {
  std::filesystem::create_directories(cfg.checkpoint_dir);
  Checkpoint ckpt;
  ckpt.seg_config = cfg.seg;
  ckpt.seg = w;
  if (theta) {
    ckpt.has_mask = true;
    ckpt.mask_config = cfg.mask;
    ckpt.mask = *theta;
  }
  ckpt.extra = "{\"epoch\":" + std::to_string(epoch) + "}";
  save_checkpoint(cfg.checkpoint_dir + "/" + stem + ".mpck", ckpt);
}

}  // namespace

double effective_rate(double base, int epoch, std::span<const int> decay_epochs, double factor) {
  double rate = base;
  for (int d : decay_epochs)
    if (epoch > d) rate *= factor;
  return rate;
}

double weighted_loss(const TrainConfig& cfg, std::span<const Sample> batch, const SegParams& w,
                     const MaskParams& theta) {
  check_batch(batch, "weighted_loss");
  double acc = 0.0;
  size_t total = 0;
  for (const Sample& s : batch) {
    Tensor loss = pixel_loss(seg_forward(cfg.seg, w, s.image), s.label);
    Tensor r = mask_forward(cfg.mask, theta, loss);
    for (size_t j = 0; j < loss.data.size(); ++j) acc += r.data[j] * loss.data[j];
    total += loss.data.size();
  }
  return acc / static_cast<double>(total);
}

SegParams virtual_update(const TrainConfig& cfg, const SegParams& w, const MaskParams& theta,
                         std::span<const Sample> batch, double alpha) {
  return weighted_sgd_step(cfg, w, theta, batch, alpha, "virtual_update");
}

SegParams actual_update(const TrainConfig& cfg, const SegParams& w, const MaskParams& theta_new,
                        std::span<const Sample> batch, double alpha) {
  return weighted_sgd_step(cfg, w, theta_new, batch, alpha, "actual_update");
}

MaskParams mask_pixel_gradient(const MaskConfig& cfg, const MaskParams& theta,
                               std::span<const Tensor> loss_maps,
                               std::span<const Tensor> cotangents) {
  if (loss_maps.empty()) throw config_error("mask_pixel_gradient: no loss maps");
  if (loss_maps.size() != cotangents.size())
    throw config_error("mask_pixel_gradient: " + std::to_string(cotangents.size()) +
                       " cotangents for " + std::to_string(loss_maps.size()) + " loss maps");
  ad::Tape tape;
  std::vector<ad::NodeId> leaves = bind_params(tape, theta);
  std::vector<std::pair<ad::NodeId, Tensor>> seeds;
  seeds.reserve(loss_maps.size());
  for (size_t i = 0; i < loss_maps.size(); ++i) {
    const Tensor& lm = loss_maps[i];
    ad::NodeId r = mask_graph(tape, cfg, leaves,
                              tape.constant(lm.rank() == 2 ? map_to_chw(lm) : lm));
    const Tensor& ct = cotangents[i];
    seeds.push_back({r, ct.rank() == 2 ? map_to_chw(ct) : ct});
  }
  tape.backward_seeded(seeds);
  MaskParams grad = theta;
  for (size_t k = 0; k < leaves.size(); ++k) grad.tensors[k].value = tape.adjoint(leaves[k]);
  return grad;
}

MaskParams meta_gradient(const TrainConfig& cfg, const SegParams& w, const MaskParams& theta,
                         std::span<const Sample> train_batch, std::span<const Sample> meta_batch,
                         double alpha, MetaGradientState* state) {
  check_batch(train_batch, "meta_gradient");
  if (meta_batch.empty()) throw config_error("meta_gradient: empty meta batch");
  SegParams wprime = virtual_update(cfg, w, theta, train_batch, alpha);
  SegParams gbar = meta_loss_gradient(cfg.seg, wprime, meta_batch, nullptr);
  BatchGraph g = build_batch_graph(cfg.seg, w, train_batch);
  std::vector<Tensor> s = inner_product_maps(g, gbar);
  size_t pixels_total = 0;
  for (const Tensor& l : g.loss_values) pixels_total += l.numel();
  const double scale = -alpha / static_cast<double>(pixels_total);
  std::vector<Tensor> cotangents;
  cotangents.reserve(s.size());
  for (const Tensor& si : s) {
    Tensor c = si;
    for (double& v : c.data) v *= scale;
    cotangents.push_back(std::move(c));
  }
  if (state) {
    state->meta_direction = gbar;
    state->inner_products.clear();
    for (const Tensor& si : s) state->inner_products.push_back(map_to_hw(si));
  }
  return mask_pixel_gradient(cfg.mask, theta, g.loss_values, cotangents);
}

void meta_step(const TrainConfig& cfg, TrainState& state, std::span<const Sample> train_batch,
               std::span<const Sample> meta_batch) {
  MaskParams d = meta_gradient(cfg, state.w, state.theta, train_batch, meta_batch, state.alpha);
  for (size_t k = 0; k < d.tensors.size(); ++k) {
    std::vector<double>& dst = state.theta.tensors[k].value.data;
    for (size_t j = 0; j < dst.size(); ++j) dst[j] -= state.beta * d.tensors[k].value.data[j];
  }
  if (!state.theta.all_finite()) throw runtime_error("meta_step: non-finite mask parameters");
}

StepStats train_step(const TrainConfig& cfg, TrainState& state,
                     std::span<const Sample> train_batch, std::span<const Sample> meta_batch) {
  check_batch(train_batch, "train_step");
  if (meta_batch.empty()) throw config_error("train_step: empty meta batch");
  check_rate(state.alpha, "train_step");

  StepStats stats;
  BatchGraph g = build_batch_graph(cfg.seg, state.w, train_batch);
  std::vector<Tensor> r_now = mask_weights(cfg.mask, state.theta, g.loss_values);
  ad::NodeId first = weighted_scalar(g, r_now);
  stats.train_weighted_loss = g.tape.value(first).data[0];
  if (!std::isfinite(stats.train_weighted_loss)) {
    stats.finite = false;
    return stats;
  }

  g.tape.backward(first);
  bool ok = true;
  SegParams wprime = stepped_params(state.w, g.tape, g.leaves, state.alpha, &ok);
  if (!ok) {
    stats.finite = false;
    return stats;
  }

  SegParams gbar = meta_loss_gradient(cfg.seg, wprime, meta_batch, &stats.meta_loss);
  if (!std::isfinite(stats.meta_loss) || !gbar.all_finite()) {
    stats.finite = false;
    return stats;
  }

  std::vector<Tensor> s = inner_product_maps(g, gbar);
  size_t pixels_total = 0;
  for (const Tensor& l : g.loss_values) pixels_total += l.numel();
  const double scale = -state.alpha / static_cast<double>(pixels_total);
  std::vector<Tensor> cotangents;
  cotangents.reserve(s.size());
  for (Tensor& si : s) {
    for (double& v : si.data) v *= scale;
    cotangents.push_back(std::move(si));
  }
  MaskParams dtheta = mask_pixel_gradient(cfg.mask, state.theta, g.loss_values, cotangents);

  MaskParams theta_new = state.theta;
  for (size_t k = 0; k < dtheta.tensors.size(); ++k) {
    std::vector<double>& dst = theta_new.tensors[k].value.data;
    for (size_t j = 0; j < dst.size(); ++j) dst[j] -= state.beta * dtheta.tensors[k].value.data[j];
  }
  if (!theta_new.all_finite()) {
    stats.finite = false;
    return stats;
  }

  std::vector<Tensor> r_new = mask_weights(cfg.mask, theta_new, g.loss_values);
  g.tape.backward(weighted_scalar(g, r_new));
  SegParams w_new = stepped_params(state.w, g.tape, g.leaves, state.alpha, &ok);
  if (!ok) {
    stats.finite = false;
    return stats;
  }

  state.w = std::move(w_new);
  state.theta = std::move(theta_new);
  state.t += 1;
  return stats;
}

WeightStats weight_stats(const TrainConfig& cfg, const SegParams& w, const MaskParams& theta,
                         const Dataset& train) {
  if (train.samples.empty()) throw config_error("weight_stats: empty dataset");
  double sum_clean = 0.0, sum_band = 0.0;
  size_t n_clean = 0, n_band = 0;
  for (const Sample& s : train.samples) {
    Tensor loss = pixel_loss(seg_forward(cfg.seg, w, s.image), s.label);
    Tensor r = mask_forward(cfg.mask, theta, loss);
    for (size_t j = 0; j < r.data.size(); ++j) {
      if (s.corruption_band.data[j] != 0.0) {
        sum_band += r.data[j];
        ++n_band;
      } else {
        sum_clean += r.data[j];
        ++n_clean;
      }
    }
  }
  WeightStats out;
  out.mean_clean = n_clean ? sum_clean / static_cast<double>(n_clean) : kNan;
  out.mean_corrupted = n_band ? sum_band / static_cast<double>(n_band) : kNan;
  return out;
}

std::string History::csv() const {
  std::ostringstream out;
  out << "epoch,train_weighted_loss,meta_loss,test_miou,test_dice,test_hausdorff,"
         "mean_weight_clean,mean_weight_corrupted\n";
  for (const EpochRecord& r : records) {
    out << r.epoch << ',' << format_compact(r.train_weighted_loss) << ','
        << format_compact(r.meta_loss) << ',' << format_compact(r.test_miou) << ','
        << format_compact(r.test_dice) << ',' << format_compact(r.test_hausdorff) << ','
        << format_compact(r.mean_weight_clean) << ',' << format_compact(r.mean_weight_corrupted)
        << '\n';
  }
  return out.str();
}

void History::write_csv(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw runtime_error("cannot open " + path + " for writing");
  out << csv();
  if (!out) throw runtime_error("failed writing " + path);
}

namespace {

void check_common_config(const TrainConfig& cfg, const Dataset& train, const Dataset& test,
                         const char* who) {
  if (!(cfg.alpha > 0.0)) throw config_error(std::string(who) + ": alpha must be positive");
  if (cfg.batch_size < 1) throw config_error(std::string(who) + ": batch size must be >= 1");
  if (cfg.epochs < 0) throw config_error(std::string(who) + ": negative epoch count");
  if (!(cfg.decay_factor > 0.0)) throw config_error(std::string(who) + ": decay factor must be positive");
  if (cfg.checkpoint_every < 0) throw config_error(std::string(who) + ": negative checkpoint interval");
  if (cfg.checkpoint_every > 0 && cfg.checkpoint_dir.empty())
    throw config_error(std::string(who) + ": checkpointing enabled without a directory");
  if (train.samples.empty()) throw config_error(std::string(who) + ": empty training set");
  if (test.samples.empty()) throw config_error(std::string(who) + ": empty test set");
}

SegParams initial_seg(const TrainConfig& cfg, const char* who) {
  SegParams w;
  if (cfg.initial_w) {
    w = *cfg.initial_w;
  } else {
    Rng rng(derive_seed(cfg.seed, "seg-init"));
    w = init_seg_params(cfg.seg, rng);
  }
  check_params_match(seg_param_layout(cfg.seg), w, who);
  return w;
}

void record_eval(EpochRecord& rec, const TrainConfig& cfg, const SegParams& w,
                 const Dataset& test) {
  MetricReport m = evaluate(cfg.seg, w, test);
  rec.test_miou = m.miou;
  rec.test_dice = m.dice;
  rec.test_hausdorff = m.hausdorff;
}

}  // namespace

FitResult fit(const TrainConfig& cfg, const Dataset& train, const Dataset& meta,
              const Dataset& test) {
  check_common_config(cfg, train, test, "fit");
  if (!(cfg.beta >= 0.0)) throw config_error("fit: beta must be non-negative");
  if (cfg.meta_batch_size < 1) throw config_error("fit: meta batch size must be >= 1");
  if (meta.samples.empty()) throw config_error("fit: empty meta set");
  if (static_cast<size_t>(cfg.meta_batch_size) > meta.samples.size())
    throw config_error("fit: meta batch size " + std::to_string(cfg.meta_batch_size) +
                       " exceeds the meta set size " + std::to_string(meta.samples.size()));
  for (size_t i = 0; i < meta.samples.size(); ++i)
    if (meta.samples[i].label.data != meta.samples[i].clean_label.data)
      throw config_error("fit: meta sample " + std::to_string(i) + " has a corrupted label");

  TrainState st;
  st.w = initial_seg(cfg, "fit");
  if (cfg.initial_theta) {
    st.theta = *cfg.initial_theta;
  } else {
    Rng rng(derive_seed(cfg.seed, "mask-init"));
    st.theta = init_mask_params(cfg.mask, rng);
  }
  check_params_match(mask_param_layout(cfg.mask), st.theta, "fit");
  st.train_order = Rng(derive_seed(cfg.seed, "train-order"));
  st.meta_order = Rng(derive_seed(cfg.seed, "meta-order"));

  std::vector<Sample> tr(train.samples.begin(), train.samples.end());
  std::vector<Sample> me(meta.samples.begin(), meta.samples.end());
  std::vector<Sample> meta_batch(static_cast<size_t>(cfg.meta_batch_size));

  FitResult res;
  res.w = st.w;
  res.theta = st.theta;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    st.alpha = effective_rate(cfg.alpha, epoch, cfg.decay_epochs, cfg.decay_factor);
    st.beta = effective_rate(cfg.beta, epoch, cfg.decay_epochs, cfg.decay_factor);
    st.train_order.shuffle(tr);
    st.meta_order.shuffle(me);
    size_t meta_pos = 0;

    double loss_acc = 0.0, meta_acc = 0.0;
    int iters = 0;
    for (size_t b0 = 0; b0 < tr.size(); b0 += static_cast<size_t>(cfg.batch_size)) {
      size_t n = std::min(static_cast<size_t>(cfg.batch_size), tr.size() - b0);
      for (size_t j = 0; j < meta_batch.size(); ++j)
        meta_batch[j] = me[(meta_pos + j) % me.size()];
      meta_pos = (meta_pos + meta_batch.size()) % me.size();

      StepStats ss = train_step(cfg, st, std::span<const Sample>(tr).subspan(b0, n), meta_batch);
      if (!ss.finite) {
        // train_step does not advance on failure, so the state still holds
        // the last finite parameters
        res.w = st.w;
        res.theta = st.theta;
        res.diverged = true;
        if (!cfg.checkpoint_dir.empty())
          write_epoch_checkpoint(cfg, res.w, &res.theta, epoch - 1, "last_good");
        return res;
      }
      loss_acc += ss.train_weighted_loss;
      meta_acc += ss.meta_loss;
      ++iters;
    }
    res.w = st.w;
    res.theta = st.theta;

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_weighted_loss = loss_acc / iters;
    rec.meta_loss = meta_acc / iters;
    record_eval(rec, cfg, st.w, test);
    WeightStats ws = weight_stats(cfg, st.w, st.theta, train);
    rec.mean_weight_clean = ws.mean_clean;
    rec.mean_weight_corrupted = ws.mean_corrupted;
    res.history.records.push_back(rec);

    if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
      char stem[32];
      std::snprintf(stem, sizeof stem, "epoch_%04d", epoch);
      write_epoch_checkpoint(cfg, st.w, &st.theta, epoch, stem);
    }
  }
  return res;
}

BaselineResult baseline_fit(const TrainConfig& cfg, const Dataset& train, const Dataset& test) {
  check_common_config(cfg, train, test, "baseline_fit");

  BaselineResult res;
  res.w = initial_seg(cfg, "baseline_fit");
  Rng order(derive_seed(cfg.seed, "train-order"));
  std::vector<Sample> tr(train.samples.begin(), train.samples.end());
  AdamState adam;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double lr = effective_rate(cfg.alpha, epoch, cfg.decay_epochs, cfg.decay_factor);
    order.shuffle(tr);

    double loss_acc = 0.0;
    int iters = 0;
    for (size_t b0 = 0; b0 < tr.size(); b0 += static_cast<size_t>(cfg.batch_size)) {
      size_t n = std::min(static_cast<size_t>(cfg.batch_size), tr.size() - b0);
      BatchGraph g =
          build_batch_graph(cfg.seg, res.w, std::span<const Sample>(tr).subspan(b0, n));
      ad::NodeId loss = unweighted_scalar(g);
      double value = g.tape.value(loss).data[0];
      bool ok = std::isfinite(value);
      SegParams before = res.w;
      if (ok) {
        g.tape.backward(loss);
        if (cfg.baseline_optimizer == BaselineOptimizer::kAdam) {
          adam_step(adam, res.w, g.tape, g.leaves, lr, &ok);
        } else {
          res.w = stepped_params(res.w, g.tape, g.leaves, lr, &ok);
        }
      }
      if (!ok) {
        res.w = std::move(before);  // the last finite parameters
        res.diverged = true;
        if (!cfg.checkpoint_dir.empty())
          write_epoch_checkpoint(cfg, res.w, nullptr, epoch - 1, "last_good");
        return res;
      }
      loss_acc += value;
      ++iters;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_weighted_loss = loss_acc / iters;
    rec.meta_loss = kNan;
    rec.mean_weight_clean = kNan;
    rec.mean_weight_corrupted = kNan;
    record_eval(rec, cfg, res.w, test);
    res.history.records.push_back(rec);

    if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
      char stem[32];
      std::snprintf(stem, sizeof stem, "epoch_%04d", epoch);
      write_epoch_checkpoint(cfg, res.w, nullptr, epoch, stem);
    }
  }
  return res;
}

}  // namespace mcpm
