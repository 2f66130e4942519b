#pragma once

#include "dlcm/common.hpp"
#include "dlcm/params.hpp"

#include <string>

namespace dlcm {

class AdamW;

struct CheckpointMeta {
  std::string config_hash;
  long step = 0;
  long tokens_seen = 0;
  std::uint64_t rng_seed = 0;
  std::string kind = "dlcm";        // "dlcm" | "baseline"
  std::string model_config_json;    // enough to rebuild the model shell
};

/// Writes `dir/manifest.json` plus `dir/tensors.bin`. Parameter tensors are
/// stored as little-endian f32 blobs (the interchange format); when
/// `with_resume_state` is set, f64 master parameters and optimizer moments are
/// appended so a resumed run continues bit-exactly. Saving the same state
/// twice is byte-identical.
void save_checkpoint(const std::string& dir, const ParamStore& store, const CheckpointMeta& meta,
                     const AdamW* opt, bool with_resume_state);

/// Restores parameters (f64 master state when present, else upcast f32).
/// Refuses to load when `expected_config_hash` is non-empty and differs.
/// Throws IoError on truncated or malformed files.
CheckpointMeta load_checkpoint(const std::string& dir, ParamStore& store, AdamW* opt,
                               const std::string& expected_config_hash);

}  // namespace dlcm
