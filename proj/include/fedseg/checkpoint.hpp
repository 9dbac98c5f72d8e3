#pragma once

#include <string>

#include "fedseg/weights.hpp"

namespace fedseg {

// Little-endian binary checkpoint:
//   magic "FSEG" | u32 version | u32 tensor count
//   per tensor: u32 name length | name bytes | u32 rank | u64 extents...
//               | raw float32 data
// Round-trips are bit-exact.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const ModelWeights& weights, const std::string& path);

// Loaded entries carry trainable=true placeholders; callers restore
// trainability from the model plan via apply_checkpoint.
ModelWeights load_checkpoint(const std::string& path);

// Assigns loaded tensors onto the model's weights by name; throws when a
// tensor is missing, extra, or of the wrong shape.
void apply_checkpoint(ModelWeights& target, const ModelWeights& loaded);

}  // namespace fedseg
