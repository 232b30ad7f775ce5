#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ynet {

/// 8-bit interleaved pixels.
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 (gray) or 3 (RGB)
  std::vector<uint8_t> pixels;
};

// Gray, gray+alpha, RGB and RGBA inputs are accepted; alpha is dropped and
// 16-bit samples are reduced to 8 bits. Throws FormatError.
Image8 read_png(const std::filesystem::path& path);
Image8 decode_png(const std::vector<uint8_t>& bytes);

void write_png(const std::filesystem::path& path, const Image8& image);
std::vector<uint8_t> encode_png(const Image8& image);

}  // namespace ynet
