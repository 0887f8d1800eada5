#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mcpm/datasynth.hpp"
#include "mcpm/networks.hpp"
#include "mcpm/rng.hpp"

namespace mcpm {

enum class BaselineOptimizer { kSgd, kAdam };

struct TrainConfig {
  SegConfig seg;
  MaskConfig mask;  // normalize_input here is the loss-normalization switch

  double alpha = 1e-4;  // segmentation learning rate
  double beta = 1e-3;   // mask network learning rate
  std::vector<int> decay_epochs{20, 40};
  double decay_factor = 0.1;
  int epochs = 120;         // desk-scale runs use 60
  int batch_size = 128;     // desk-scale runs use 16
  int meta_batch_size = 8;  // drawn without replacement, so at most the meta set size
  uint64_t seed = 0;
  BaselineOptimizer baseline_optimizer = BaselineOptimizer::kSgd;

  int checkpoint_every = 0;  // epochs between checkpoint files, 0 disables
  std::string checkpoint_dir;

  // Optional starting points. When unset, parameters are drawn from the
  // seeded initializers; fit and baseline_fit share the segmentation init
  // stream so runs with the same seed start from the same W.
  std::optional<SegParams> initial_w;
  std::optional<MaskParams> initial_theta;
};

struct TrainState {
  int64_t t = 0;  // completed iterations
  SegParams w;
  MaskParams theta;
  double alpha = 0.0;  // effective rates for the current epoch
  double beta = 0.0;
  Rng train_order{0};
  Rng meta_order{0};
};

/// Intermediates of the mask gradient, exposed for inspection: the averaged
/// meta gradient direction and the per-pixel inner products s of each
/// training image ([h,w] each).
struct MetaGradientState {
  SegParams meta_direction;
  std::vector<Tensor> inner_products;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_weighted_loss = 0.0;
  double meta_loss = 0.0;
  double test_miou = 0.0;
  double test_dice = 0.0;
  double test_hausdorff = 0.0;
  double mean_weight_clean = 0.0;
  double mean_weight_corrupted = 0.0;
};

struct History {
  std::vector<EpochRecord> records;

  std::string csv() const;
  void write_csv(const std::string& path) const;
};

/// Learning rate after decay: the base rate is multiplied by factor once for
/// every decay epoch the 1-based epoch counter has moved past.
double effective_rate(double base, int epoch, std::span<const int> decay_epochs, double factor);

/// Mean over images and pixels of R * L, where L is the per-pixel loss of
/// the current predictions and R is the mask net's weight for that pixel.
double weighted_loss(const TrainConfig& cfg, std::span<const Sample> batch, const SegParams& w,
                     const MaskParams& theta);

/// One SGD step on the weighted loss with the weights R frozen at their
/// current values. Returns the stepped parameters; w itself is untouched.
SegParams virtual_update(const TrainConfig& cfg, const SegParams& w, const MaskParams& theta,
                         std::span<const Sample> batch, double alpha);

/// Gradient of the meta objective with respect to the mask parameters:
/// (a) step to W' on the training batch, (b) backward pass of the mean meta
/// loss at W' giving the direction gbar, (c) one forward-mode pass of the
/// training loss maps along gbar giving per-pixel inner products s, and
/// (d) backward pass through the mask net with cotangents (-alpha/Nhw) * s.
/// Stepping theta against the result lowers the meta loss; pixels with
/// positive s get their weight pushed up.
MaskParams meta_gradient(const TrainConfig& cfg, const SegParams& w, const MaskParams& theta,
                         std::span<const Sample> train_batch, std::span<const Sample> meta_batch,
                         double alpha, MetaGradientState* state = nullptr);

/// Step (d) by itself: accumulate cotangent maps ([h,w] per image, matching
/// loss_maps) through the mask net into a gradient shaped like theta.
MaskParams mask_pixel_gradient(const MaskConfig& cfg, const MaskParams& theta,
                               std::span<const Tensor> loss_maps,
                               std::span<const Tensor> cotangents);

/// theta <- theta - beta * meta_gradient(...), using the state's effective
/// rates. Only theta changes.
void meta_step(const TrainConfig& cfg, TrainState& state, std::span<const Sample> train_batch,
               std::span<const Sample> meta_batch);

/// Same step as virtual_update but with the freshly updated mask parameters;
/// the weights are recomputed from theta_new and again treated as constants.
SegParams actual_update(const TrainConfig& cfg, const SegParams& w, const MaskParams& theta_new,
                        std::span<const Sample> batch, double alpha);

struct StepStats {
  double train_weighted_loss = 0.0;
  double meta_loss = 0.0;
  bool finite = true;  // false: divergence detected, state was not advanced
};

/// One full training iteration (virtual step, mask update, actual step),
/// sharing the segmentation forward pass across the three uses. Equivalent
/// to composing the operations above; on success advances w, theta and t.
StepStats train_step(const TrainConfig& cfg, TrainState& state,
                     std::span<const Sample> train_batch, std::span<const Sample> meta_batch);

struct WeightStats {
  double mean_clean = 0.0;      // mask weight over pixels outside corruption bands
  double mean_corrupted = 0.0;  // mask weight over band pixels; nan when there are none
};

WeightStats weight_stats(const TrainConfig& cfg, const SegParams& w, const MaskParams& theta,
                         const Dataset& train);

struct FitResult {
  SegParams w;
  MaskParams theta;
  History history;
  bool diverged = false;
};

/// The alternating optimizer. Meta samples are only ever used for the mask
/// update, never as segmentation supervision.
FitResult fit(const TrainConfig& cfg, const Dataset& train, const Dataset& meta,
              const Dataset& test);

struct BaselineResult {
  SegParams w;
  History history;
  bool diverged = false;
};

/// Plain training on the unweighted mean loss, same schedule and batch
/// order as fit. The meta-loss and weight columns of its history are nan.
BaselineResult baseline_fit(const TrainConfig& cfg, const Dataset& train, const Dataset& test);

}  // namespace mcpm
