#pragma once

#include <span>
#include <string>
#include <vector>

#include "mcpm/datasynth.hpp"
#include "mcpm/networks.hpp"
#include "mcpm/tensor.hpp"

namespace mcpm {

/// Dense foreground indicator over an h by w grid, row major.
struct BinaryMask {
  int h = 0;
  int w = 0;
  std::vector<uint8_t> on;

  bool at(int y, int x) const { return on[static_cast<size_t>(y) * w + x] != 0; }
};

/// Strict threshold: a pixel is foreground iff its score is > 0.5, so an
/// exact 0.5 lands in the background. Accepts [h,w] or [1,h,w].
BinaryMask threshold_mask(const Tensor& scores);

/// |a n b| / |a u b|; both masks empty counts as a perfect match (1).
double iou(const BinaryMask& a, const BinaryMask& b);

/// 2|a n b| / (|a| + |b|); both masks empty counts as a perfect match (1).
double dice(const BinaryMask& a, const BinaryMask& b);

/// Symmetric Hausdorff distance between the foreground point sets, in
/// pixels. Both empty: 0. Exactly one empty: the full image diagonal
/// sqrt(h^2 + w^2) as a penalty.
double hausdorff(const BinaryMask& a, const BinaryMask& b);

struct MetricReport {
  double miou = 0.0;       // means of the per-sample vectors below
  double dice = 0.0;
  double hausdorff = 0.0;
  std::vector<double> sample_iou;
  std::vector<double> sample_dice;
  std::vector<double> sample_hausdorff;
};

/// Scores already-computed prediction maps against the clean labels,
/// one prediction per sample.
MetricReport evaluate_predictions(std::span<const Tensor> predictions,
                                  const Dataset& dataset);

/// Runs the net over every sample, thresholds at 0.5 and scores against
/// the clean label. Single-channel outputs only.
MetricReport evaluate(const SegConfig& cfg, const SegParams& w, const Dataset& dataset);

/// Shortest decimal form that parses back to the same double. Used by all
/// CSV writers so reruns are byte-identical.
std::string format_compact(double v);

/// "sample,iou,dice,hausdorff" rows followed by a "mean" summary row.
std::string metric_csv(const MetricReport& report);
void write_metric_csv(const std::string& path, const MetricReport& report);

}  // namespace mcpm
