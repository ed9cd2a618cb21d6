#pragma once

// Parameter files: one line of JSON header (shape manifest, seed, config
// hash) followed by the flat parameter vector as little-endian float64.

#include <cstdint>
#include <string>

#include "dyme/policy.hpp"

namespace dyme {

struct CheckpointHeader {
  PolicyConfig policy;
  std::uint64_t seed = 0;
  std::string config_hash;
  long step = 0;
};

void save_checkpoint(const std::string& path, const PolicyParameters<double>& params,
                     const CheckpointHeader& header);

struct Checkpoint {
  CheckpointHeader header;
  PolicyParameters<double> params;
};

/// Throws InvalidInput on a truncated file or a manifest that does not
/// match the payload.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace dyme
