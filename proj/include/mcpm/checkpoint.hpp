#pragma once

#include <string>

#include "mcpm/networks.hpp"

namespace mcpm {

/// A saved model: the segmentation parameters, and for the meta-trained
/// variant the mask parameters as well. `extra` is a free-form JSON object
/// (as text) for bookkeeping like the epoch or the seed; empty means {}.
struct Checkpoint {
  SegConfig seg_config;
  SegParams seg;
  bool has_mask = false;
  MaskConfig mask_config;
  MaskParams mask;
  std::string extra;
};

/// Container layout: magic 4D 50 43 4B 01 ("MPCK", version), u64 LE length
/// of a JSON manifest, the manifest, then the named tensors back to back,
/// each one in MPTD v1 form at the byte offset the manifest lists.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace mcpm
