#pragma once

#include <filesystem>

#include "w2s/model.hpp"

namespace w2s {

/// Binary checkpoint: magic "W2SCKPT1", u64 header length, JSON header
/// (model config, train scope, parameter names and shapes), then every
/// parameter as raw little-endian doubles in header order. Round-trips
/// bit-exactly.
void save_checkpoint(const std::filesystem::path& path, const RewardModel& model);
RewardModel load_checkpoint(const std::filesystem::path& path);

}  // namespace w2s
