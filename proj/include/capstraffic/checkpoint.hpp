#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "capstraffic/adam.hpp"
#include "capstraffic/model.hpp"
#include "capstraffic/windowing.hpp"

namespace capstraffic {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Everything needed to resume training or reproduce predictions.
struct Checkpoint {
  ModelSpec model;
  TaskSpec task;
  std::vector<Parameter> parameters;
  AdamConfig adam;
  std::uint64_t step = 0;
  std::vector<Tensor> adam_first;
  std::vector<Tensor> adam_second;
  ScalingStats stats;
  std::uint64_t seed = 0;
};

// Single-file container:
//   8 bytes   magic "CAPSTRFC"
//   u32       format version
//   u64       header length H
//   H bytes   JSON header (specs, seed, step, stats, tensor names and shapes)
//   payload   little-endian IEEE-754 doubles: parameters, then first and
//             second Adam moments, in header order
//   u64       FNV-1a hash of header and payload
// All integers little-endian. Writes go to a temporary file that is renamed
// into place.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);

// Throws CheckpointError on a missing, truncated, corrupt or
// version-mismatched file; nothing partial is returned.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Throws GeometryError unless the checkpoint was trained for `task`'s geometry.
void require_task(const Checkpoint& checkpoint, const TaskSpec& task);

Model model_from(const Checkpoint& checkpoint);

}  // namespace capstraffic
