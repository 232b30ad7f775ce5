#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ynet/tensor.hpp"

namespace ynet {

struct Sample {
  std::string id;
  Tensor image;  // 3 x N x N in [0, 1]
  Tensor mask;   // N x N of {0, 1}
  int label = 0;
  std::optional<double> stage;  // cup-to-disc-style severity in [0, 1]
};

/// Reads `images/<id>.png`, `masks/<id>.png` (0/255 gray) and `labels.csv`
/// (`id,label,stage`, stage may be empty). Samples come back sorted by id.
/// Throws DatasetError naming the offending file.
std::vector<Sample> load_dataset(const std::filesystem::path& dir);

// Writes the load_dataset layout. Images are quantised to 8 bits.
void write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples);

struct SplitResult {
  std::vector<Sample> train;
  std::vector<Sample> test;
  bool stratified = true;
  std::vector<std::string> warnings;
};

/// Class-stratified train/test partition. The test set holds
/// round((1 - ratio) * n) samples, spread over classes by largest remainder.
/// A class id in [0, max label] with no samples makes the split fall back
/// to an unstratified shuffle, with a warning.
SplitResult split(const std::vector<Sample>& samples, double ratio, uint64_t seed);

enum class Scenario { spdd, dpsd };

Scenario parse_scenario(const std::string& name);
std::string to_string(Scenario s);

// Geometry of one synthetic sample. For DPSD the lesion ellipse is the disc
// and `inner_ratio` the cup/disc ratio; for SPDD the lesion is the nodule.
struct SynthSpec {
  std::string id;
  int label = 0;
  std::optional<double> stage;
  double cx = 0, cy = 0;
  double axis_x = 0, axis_y = 0;
  double inner_ratio = 0;
};

inline constexpr double kDpsdStageThreshold = 0.6;

std::vector<SynthSpec> plan_synthetic(Scenario scenario, int n, int image_size, uint64_t seed);

// Pixel (x, y) belongs to the ellipse when its centre (x + .5, y + .5)
// satisfies ((x - cx) / ax)^2 + ((y - cy) / ay)^2 <= 1.
bool inside_ellipse(double px, double py, double cx, double cy, double ax, double ay);

/// Renders a synthetic dataset in the load_dataset layout. Deterministic
/// under `seed`. n must be even and >= 4 (classes are balanced).
void synth_generate(Scenario scenario, int n, int image_size, uint64_t seed, const std::filesystem::path& out_dir);

// In-memory variant of synth_generate (same pixels after 8-bit quantisation).
std::vector<Sample> synth_samples(Scenario scenario, int n, int image_size, uint64_t seed);

}  // namespace ynet
