#include "coseg/grid.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <string>
#include <unistd.h>

#include "coseg/error.hpp"

namespace coseg {

namespace {

void check_dims(int width, int height) {
  if (width < 1 || height < 1 || width > kMaxRasterSide || height > kMaxRasterSide) {
    throw Error(ErrorCode::ShapeMismatch,
                "raster dimensions " + std::to_string(width) + "x" + std::to_string(height) +
                    " out of range");
  }
}

std::size_t pixel_count(int width, int height) {
  return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
}

// Netpbm header: magic, width, height, maxval, then a single whitespace byte.
struct PnmHeader {
  int width = 0;
  int height = 0;
  int maxval = 0;
  std::size_t payload_offset = 0;
};

PnmHeader parse_pnm_header(std::span<const std::uint8_t> bytes, std::string_view magic,
                           const std::filesystem::path& path) {
  const auto fail = [&](const std::string& why) {
    return Error(ErrorCode::MalformedHeader, path.string() + ": " + why);
  };
  if (bytes.size() < 2 || bytes[0] != magic[0] || bytes[1] != magic[1]) {
    throw fail("expected magic " + std::string(magic));
  }
  std::size_t pos = 2;
  int fields[3] = {0, 0, 0};
  for (int& field : fields) {
    // Skip whitespace and comments.
    while (pos < bytes.size()) {
      if (std::isspace(bytes[pos])) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw fail("missing header field");
    long long value = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      value = value * 10 + (bytes[pos] - '0');
      if (value > (1LL << 31)) throw fail("header field overflow");
      ++pos;
    }
    field = static_cast<int>(value);
  }
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw fail("missing separator");
  ++pos;
  PnmHeader header{fields[0], fields[1], fields[2], pos};
  if (header.width < 1 || header.height < 1 || header.width > kMaxRasterSide ||
      header.height > kMaxRasterSide) {
    throw fail("bad dimensions");
  }
  if (header.maxval < 1 || header.maxval > 255) throw fail("only 8-bit maxval supported");
  return header;
}

std::string pnm_header(std::string_view magic, int width, int height) {
  return std::string(magic) + "\n" + std::to_string(width) + " " + std::to_string(height) +
         "\n255\n";
}

void put_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32_le(std::span<const std::uint8_t> bytes, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
  return v;
}

}  // namespace

// --- BinaryMask -------------------------------------------------------------

BinaryMask::BinaryMask(int width, int height, bool fill)
    : width_(width), height_(height) {
  check_dims(width, height);
  labels_.assign(pixel_count(width, height), fill ? 1 : 0);
}

BinaryMask::BinaryMask(int width, int height, std::vector<std::uint8_t> labels)
    : width_(width), height_(height), labels_(std::move(labels)) {
  check_dims(width, height);
  if (labels_.size() != pixel_count(width, height)) {
    throw Error(ErrorCode::ShapeMismatch, "label count does not match dimensions");
  }
  for (auto& l : labels_) l = l != 0 ? 1 : 0;
}

std::size_t BinaryMask::count_foreground() const noexcept {
  return static_cast<std::size_t>(std::count(labels_.begin(), labels_.end(), std::uint8_t{1}));
}

BinaryMask BinaryMask::complement() const {
  BinaryMask out = *this;
  for (auto& l : out.labels_) l = 1 - l;
  return out;
}

BinaryMask BinaryMask::mirrored_x() const {
  BinaryMask out(width_, height_);
  for (int y = 0; y < height_; ++y)
    for (int x = 0; x < width_; ++x) out.set(width_ - 1 - x, y, at(x, y));
  return out;
}

BinaryMask BinaryMask::mirrored_y() const {
  BinaryMask out(width_, height_);
  for (int y = 0; y < height_; ++y)
    for (int x = 0; x < width_; ++x) out.set(x, height_ - 1 - y, at(x, y));
  return out;
}

// --- FloatMap ---------------------------------------------------------------

FloatMap::FloatMap(int width, int height, float fill) : width_(width), height_(height) {
  check_dims(width, height);
  if (!std::isfinite(fill)) throw Error(ErrorCode::InvalidValue, "non-finite fill value");
  values_.assign(pixel_count(width, height), fill);
}

FloatMap::FloatMap(int width, int height, std::vector<float> values)
    : width_(width), height_(height), values_(std::move(values)) {
  check_dims(width, height);
  if (values_.size() != pixel_count(width, height)) {
    throw Error(ErrorCode::ShapeMismatch, "value count does not match dimensions");
  }
  for (float v : values_) {
    if (!std::isfinite(v)) throw Error(ErrorCode::InvalidValue, "non-finite map value");
  }
}

FloatMap FloatMap::mirrored_x() const {
  FloatMap out(width_, height_);
  for (int y = 0; y < height_; ++y)
    for (int x = 0; x < width_; ++x) out.set(width_ - 1 - x, y, at(x, y));
  return out;
}

FloatMap FloatMap::mirrored_y() const {
  FloatMap out(width_, height_);
  for (int y = 0; y < height_; ++y)
    for (int x = 0; x < width_; ++x) out.set(x, height_ - 1 - y, at(x, y));
  return out;
}

// --- RgbImage ---------------------------------------------------------------

RgbImage::RgbImage(int width, int height) : width_(width), height_(height) {
  check_dims(width, height);
  values_.assign(pixel_count(width, height) * 3, 0.0f);
}

RgbImage::RgbImage(int width, int height, std::vector<float> values)
    : width_(width), height_(height), values_(std::move(values)) {
  check_dims(width, height);
  if (values_.size() != pixel_count(width, height) * 3) {
    throw Error(ErrorCode::ShapeMismatch, "value count does not match dimensions");
  }
  for (float v : values_) {
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f) {
      throw Error(ErrorCode::InvalidValue, "image value outside [0,1]");
    }
  }
}

// --- conversions ------------------------------------------------------------

BinaryMask threshold_to_mask(const FloatMap& map) {
  std::vector<std::uint8_t> labels(map.size());
  const auto values = map.values();
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = values[i] > 0.0f ? 1 : 0;
  return BinaryMask(map.width(), map.height(), std::move(labels));
}

// --- file I/O ---------------------------------------------------------------

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorCode::IoFailure, "read failed: " + path.string());
  return bytes;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  static thread_local std::mt19937_64 suffix_rng{std::random_device{}()};
  auto tmp = path;
  tmp += ".tmp-" + std::to_string(::getpid()) + "-" + std::to_string(suffix_rng() % 1000000);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot open for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      out.close();
      std::error_code ignored;
      std::filesystem::remove(tmp, ignored);
      throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::error_code ignored;
    std::filesystem::remove(tmp, ignored);
    throw Error(ErrorCode::IoFailure, "rename failed: " + path.string() + ": " + ec.message());
  }
}

void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()),
                                    text.size()));
}

BinaryMask read_mask(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  const auto header = parse_pnm_header(bytes, "P5", path);
  const std::size_t n = pixel_count(header.width, header.height);
  if (bytes.size() < header.payload_offset + n) {
    throw Error(ErrorCode::TruncatedPayload, path.string());
  }
  std::vector<std::uint8_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = bytes[header.payload_offset + i] >= 128 ? 1 : 0;
  return BinaryMask(header.width, header.height, std::move(labels));
}

void write_mask(const BinaryMask& mask, const std::filesystem::path& path) {
  const std::string head = pnm_header("P5", mask.width(), mask.height());
  std::vector<std::uint8_t> bytes(head.begin(), head.end());
  for (auto l : mask.labels()) bytes.push_back(l ? 255 : 0);
  write_file_atomic(path, bytes);
}

RgbImage read_image(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  const auto header = parse_pnm_header(bytes, "P6", path);
  const std::size_t n = pixel_count(header.width, header.height) * 3;
  if (bytes.size() < header.payload_offset + n) {
    throw Error(ErrorCode::TruncatedPayload, path.string());
  }
  std::vector<float> values(n);
  const float scale = 1.0f / static_cast<float>(header.maxval);
  for (std::size_t i = 0; i < n; ++i) {
    values[i] = std::min(1.0f, bytes[header.payload_offset + i] * scale);
  }
  return RgbImage(header.width, header.height, std::move(values));
}

void write_image(const RgbImage& image, const std::filesystem::path& path) {
  const std::string head = pnm_header("P6", image.width(), image.height());
  std::vector<std::uint8_t> bytes(head.begin(), head.end());
  for (float v : image.values()) {
    bytes.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
  }
  write_file_atomic(path, bytes);
}

std::vector<std::uint8_t> encode_float_map(const FloatMap& map) {
  std::vector<std::uint8_t> bytes = {'S', 'N', 'D', 'M'};
  bytes.reserve(12 + 4 * map.size());
  put_u32_le(bytes, static_cast<std::uint32_t>(map.width()));
  put_u32_le(bytes, static_cast<std::uint32_t>(map.height()));
  for (float v : map.values()) put_u32_le(bytes, std::bit_cast<std::uint32_t>(v));
  return bytes;
}

FloatMap decode_float_map(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "SNDM", 4) != 0) {
    throw Error(ErrorCode::MalformedHeader, "missing SNDM magic");
  }
  const std::uint32_t width = get_u32_le(bytes, 4);
  const std::uint32_t height = get_u32_le(bytes, 8);
  if (width < 1 || height < 1 || width > kMaxRasterSide || height > kMaxRasterSide) {
    throw Error(ErrorCode::MalformedHeader, "bad SNDM dimensions");
  }
  const std::size_t n = static_cast<std::size_t>(width) * height;
  if (bytes.size() < 12 + 4 * n) throw Error(ErrorCode::TruncatedPayload, "SNDM payload");
  std::vector<float> values(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = std::bit_cast<float>(get_u32_le(bytes, 12 + 4 * i));
  return FloatMap(static_cast<int>(width), static_cast<int>(height), std::move(values));
}

FloatMap read_float_map(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_float_map(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

void write_float_map(const FloatMap& map, const std::filesystem::path& path) {
  write_file_atomic(path, encode_float_map(map));
}

}  // namespace coseg
