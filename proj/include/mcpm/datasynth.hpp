#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mcpm/tensor.hpp"

namespace mcpm {

/// One image with its (possibly corrupted) training label, the pristine
/// label, and the bookkeeping needed to measure where corruption landed.
struct Sample {
  Tensor image;            // [1,h,w], values in [0,1]
  Tensor label;            // [c,h,w] binary, what the trainer sees
  Tensor clean_label;      // [c,h,w] binary ground truth
  bool corrupted = false;
  Tensor corruption_band;  // [h,w] binary, pixels where label != clean_label
};

enum class Split { kTrain, kMeta, kTest };

struct Dataset {
  Split split = Split::kTrain;
  std::vector<Sample> samples;
};

struct DatasetBundle {
  Dataset train;
  Dataset meta;
  Dataset test;
};

enum class CorruptionKind { kDilation, kElastic };

struct ElasticParams {
  int grid_spacing = 8;          // coarse displacement grid pitch, >= 4
  double displacement_sigma = 2.0;  // px, gaussian offsets at grid nodes
  double rotation_max = 0.15;    // rad, uniform in [-max, max]
  double translation_max = 2.0;  // px per axis, uniform in [-max, max]
  int dilation_lo = 0;           // final dilation radius range (integers)
  int dilation_hi = 1;
};

struct CorruptionSpec {
  double r = 0.0;  // fraction of images to corrupt
  CorruptionKind kind = CorruptionKind::kDilation;
  int radius_lo = 0;  // dilation radius range, drawn per image
  int radius_hi = 6;
  ElasticParams elastic;
  uint64_t seed = 0;
};

struct SyntheticSpec {
  int train_count = 200;
  int meta_count = 20;
  int test_count = 100;
  int h = 32;
  int w = 32;
  int blobs_lo = 1;  // filled ellipses per image
  int blobs_hi = 3;
  double radius_lo = 4.0;  // ellipse semi-axis range, px
  double radius_hi = 8.0;
  double fg_mean = 0.75;
  double bg_mean = 0.25;
  double noise_sigma = 0.08;
  uint64_t seed = 0;
};

/// Draw the three splits. Pure function of the spec; per-sample sub-seeds
/// make the result independent of generation order.
DatasetBundle generate(const SyntheticSpec& spec);

/// Morphological dilation of a binary [h,w] mask with a Euclidean disk:
/// output pixel is set iff some set input pixel lies within `radius`.
Tensor dilate(const Tensor& mask, int radius);

/// Deterministic warp core: backward-map each output pixel through the
/// rotation `theta` about the image centre, translation (ty,tx), and the
/// dense displacement field disp [2,h,w] (dy plane then dx plane), with
/// nearest-neighbor sampling and zero outside the border.
Tensor elastic_warp(const Tensor& mask, const Tensor& disp, double theta, double ty, double tx);

/// Random elastic corruption: gaussian offsets on a coarse grid upsampled
/// bilinearly, a random rotation and translation, then a final dilation
/// with a radius drawn from the configured range.
Tensor elastic(const Tensor& mask, const ElasticParams& params, uint64_t seed);

/// Corrupt round(r*N) samples chosen uniformly without replacement. Labels
/// are rewritten, flags and bands refreshed. Meta splits are refused: that
/// split is clean by definition.
Dataset corrupt(const Dataset& dataset, const CorruptionSpec& spec);

/// Directory container: manifest.json at the root, one subdirectory per
/// split holding img_%05d.mptd, lbl_%05d.mptd, clean_%05d.mptd and a
/// flags.csv with `index,corrupted` rows. When a corruption spec is given
/// it is echoed into the manifest under "corruption" (r included) so a
/// dataset directory records how it was made.
void save_bundle(const std::string& dir, const DatasetBundle& bundle, const SyntheticSpec& spec,
                 const CorruptionSpec* corruption = nullptr);
DatasetBundle load_bundle(const std::string& dir);

}  // namespace mcpm
