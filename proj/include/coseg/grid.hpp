#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

namespace coseg {

/// Largest accepted side length for any raster.
inline constexpr int kMaxRasterSide = 1 << 16;

/// Per-pixel foreground/background labels, row-major.
class BinaryMask {
 public:
  BinaryMask(int width, int height, bool fill = false);
  BinaryMask(int width, int height, std::vector<std::uint8_t> labels);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return labels_.size(); }

  bool at(int x, int y) const { return labels_[index(x, y)] != 0; }
  void set(int x, int y, bool fg) { labels_[index(x, y)] = fg ? 1 : 0; }

  /// Labels as 0/1 bytes.
  std::span<const std::uint8_t> labels() const noexcept { return labels_; }

  std::size_t count_foreground() const noexcept;
  BinaryMask complement() const;
  BinaryMask mirrored_x() const;
  BinaryMask mirrored_y() const;

  bool operator==(const BinaryMask&) const = default;

 private:
  std::size_t index(int x, int y) const noexcept {
    return static_cast<std::size_t>(y) * width_ + x;
  }

  int width_;
  int height_;
  std::vector<std::uint8_t> labels_;
};

/// Per-pixel finite real values, row-major. Carries distance maps and SNDMs.
class FloatMap {
 public:
  FloatMap(int width, int height, float fill = 0.0f);
  FloatMap(int width, int height, std::vector<float> values);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return values_.size(); }

  float at(int x, int y) const { return values_[index(x, y)]; }
  void set(int x, int y, float v) { values_[index(x, y)] = v; }

  std::span<const float> values() const noexcept { return values_; }
  std::span<float> values() noexcept { return values_; }

  FloatMap mirrored_x() const;
  FloatMap mirrored_y() const;

  bool operator==(const FloatMap&) const = default;

 private:
  std::size_t index(int x, int y) const noexcept {
    return static_cast<std::size_t>(y) * width_ + x;
  }

  int width_;
  int height_;
  std::vector<float> values_;
};

/// Three-channel image with values in [0,1], stored interleaved (x, y, c).
class RgbImage {
 public:
  RgbImage(int width, int height);
  RgbImage(int width, int height, std::vector<float> values);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }

  float at(int x, int y, int c) const { return values_[index(x, y, c)]; }
  void set(int x, int y, int c, float v) { values_[index(x, y, c)] = v; }

  std::span<const float> values() const noexcept { return values_; }

  bool operator==(const RgbImage&) const = default;

 private:
  std::size_t index(int x, int y, int c) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * 3 + c;
  }

  int width_;
  int height_;
  std::vector<float> values_;
};

/// value > 0 is foreground; 0 and negatives are background.
BinaryMask threshold_to_mask(const FloatMap& map);

// File I/O. Masks are binary PGM (P5), images binary PPM (P6), float maps
// use the little-endian "SNDM" container.

BinaryMask read_mask(const std::filesystem::path& path);
void write_mask(const BinaryMask& mask, const std::filesystem::path& path);

RgbImage read_image(const std::filesystem::path& path);
void write_image(const RgbImage& image, const std::filesystem::path& path);

FloatMap read_float_map(const std::filesystem::path& path);
void write_float_map(const FloatMap& map, const std::filesystem::path& path);

std::vector<std::uint8_t> encode_float_map(const FloatMap& map);
FloatMap decode_float_map(std::span<const std::uint8_t> bytes);

/// Writes to a sibling temporary and renames over `path`, so readers never
/// observe a partially written file.
void write_file_atomic(const std::filesystem::path& path,
                       std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace coseg
