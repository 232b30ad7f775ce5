#pragma once

#include <filesystem>

#include "ynet/model.hpp"

namespace ynet {

inline constexpr uint32_t kCheckpointVersion = 1;

// Binary layout (little-endian):
//   "YNCK" | u32 version | u32 config length | config text (key=value lines)
//   | u32 tensor count | per tensor: u32 name length, name, u32 rank,
//   rank x u64 dims, numel x f64 values
// Batch-norm running statistics are stored as `<layer>.running_mean` and
// `<layer>.running_var`.
void save_checkpoint(const YNetParams& params, const std::filesystem::path& path);

// Throws FormatError on bad magic, version, or truncation and ShapeError
// (naming the tensor) when the stored shapes disagree with the config.
YNetParams load_checkpoint(const std::filesystem::path& path);

// Loads and additionally requires the stored config to match `expected`.
YNetParams load_checkpoint(const std::filesystem::path& path, const YNetConfig& expected);

std::string config_to_text(const YNetConfig& config);
YNetConfig config_from_text(const std::string& text);

}  // namespace ynet
