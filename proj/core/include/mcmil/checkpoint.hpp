#pragma once

#include <string>

#include "mcmil/nn.hpp"

namespace mcmil {

// Checkpoint file: magic "MCML", u32 LE version = 1, u32 camera-variant
// count, u32 split-layer index, 4 x u32 layer dims, then each tensor as
// row-major f32 LE in fixed order: shared layers first (weights then bias per
// layer), then variants by camera index.
void save_checkpoint(const std::string& path, const RegressorParams& params);
RegressorParams load_checkpoint(const std::string& path);

}  // namespace mcmil
