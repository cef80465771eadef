#pragma once

#include <string>
#include <vector>

#include "nar/model.hpp"
#include "nar/tiers.hpp"

namespace nar {

// Checkpoint file: magic "NARCKPT1", a little-endian u64 header length, a
// JSON header (config, normalization statistics, bucket statistics, tensor
// manifest), then the raw little-endian float64 tensor payload.
void save_checkpoint(const std::string& path, const NarModel& model, const std::vector<TierBucket>& buckets);

struct Checkpoint {
  NarModel model;
  std::vector<TierBucket> buckets;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace nar
