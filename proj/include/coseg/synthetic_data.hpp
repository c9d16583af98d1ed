#pragma once

#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "coseg/grid.hpp"

namespace coseg {

struct GenConfig {
  int image_size = 64;
  int distractors_min = 0;
  int distractors_max = 3;
  double scale_min = 0.7;
  double scale_max = 1.3;
  double rotation_min = 0.0;
  double rotation_max = 2.0 * std::numbers::pi;
  double color_jitter = 0.1;
  double noise_sigma = 0.02;

  /// Throws InvalidConfig.
  void validate() const;
};

struct PairSample {
  RgbImage img_a;
  RgbImage img_b;
  BinaryMask mask_a;
  BinaryMask mask_b;
  std::uint64_t seed = 0;
};

/// One co-segmentation pair: the same smoothed polygon rendered into two
/// images under independent similarity transforms, plus per-image
/// distractors. Pure function of (seed, config).
PairSample gen_pair(std::uint64_t seed, const GenConfig& config);

/// Number of 4-connected foreground components.
int count_components(const BinaryMask& mask);

struct ManifestEntry {
  std::string id;
  std::string img_a;
  std::string mask_a;
  std::string img_b;
  std::string mask_b;
};

/// Writes pair_NNNN_{a,b}.ppm, pair_NNNN_{a,b}_mask.pgm and manifest.tsv.
/// Pair i uses seed derive_seed(seed, i). Throws IoFailure.
std::vector<ManifestEntry> gen_dataset(std::uint64_t seed, const GenConfig& config, int n_pairs,
                                       const std::filesystem::path& out_dir);

struct DatasetItem {
  std::string id;
  RgbImage img_a;
  RgbImage img_b;
  BinaryMask mask_a;
  BinaryMask mask_b;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir);

/// Loads every pair listed in dir/manifest.tsv. Throws MissingFile,
/// DatasetEmpty, ShapeMismatch (pairs of unequal sizes).
std::vector<DatasetItem> load_dataset(const std::filesystem::path& dir);

}  // namespace coseg
