#include "coseg/synthetic_data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

#include "coseg/error.hpp"
#include "coseg/rng.hpp"

namespace coseg {

namespace {

using Color = std::array<double, 3>;

struct Point {
  double x, y;
};

constexpr int kAttempts = 16;
constexpr int kSupersample = 4;
constexpr double kMinFraction = 0.02;
constexpr double kMaxFraction = 0.6;

double color_distance(const Color& a, const Color& b) {
  return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
}

Color random_color(SplitMix64& rng, double lo, double hi) {
  return {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
}

// Even-odd crossing test.
bool inside_polygon(const std::vector<Point>& poly, double x, double y) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const Point& a = poly[i];
    const Point& b = poly[j];
    if ((a.y > y) != (b.y > y)) {
      const double cross = a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (x < cross) in = !in;
    }
  }
  return in;
}

// Star-shaped polygon around the origin, then two rounds of corner cutting.
std::vector<Point> smoothed_polygon(SplitMix64& rng, double radius) {
  const int n = static_cast<int>(rng.uniform_int(8, 12));
  std::vector<Point> poly;
  for (int i = 0; i < n; ++i) {
    const double theta = 2.0 * std::numbers::pi * (i + 0.5 + 0.7 * (rng.uniform() - 0.5)) / n;
    const double r = radius * rng.uniform(0.55, 1.0);
    poly.push_back({r * std::cos(theta), r * std::sin(theta)});
  }
  for (int round = 0; round < 2; ++round) {
    std::vector<Point> next;
    for (std::size_t i = 0; i < poly.size(); ++i) {
      const Point& a = poly[i];
      const Point& b = poly[(i + 1) % poly.size()];
      next.push_back({0.75 * a.x + 0.25 * b.x, 0.75 * a.y + 0.25 * b.y});
      next.push_back({0.25 * a.x + 0.75 * b.x, 0.25 * a.y + 0.75 * b.y});
    }
    poly = std::move(next);
  }
  return poly;
}

std::vector<Point> ellipse_polygon(double rx, double ry) {
  std::vector<Point> poly;
  for (int i = 0; i < 64; ++i) {
    const double t = 2.0 * std::numbers::pi * i / 64;
    poly.push_back({rx * std::cos(t), ry * std::sin(t)});
  }
  return poly;
}

double max_radius(const std::vector<Point>& poly) {
  double r = 0.0;
  for (const Point& p : poly) r = std::max(r, std::hypot(p.x, p.y));
  return r;
}

std::vector<Point> place(const std::vector<Point>& shape, double scale, double angle, double cx, double cy) {
  const double c = std::cos(angle), s = std::sin(angle);
  std::vector<Point> out;
  out.reserve(shape.size());
  for (const Point& p : shape) out.push_back({cx + scale * (c * p.x - s * p.y), cy + scale * (s * p.x + c * p.y)});
  return out;
}

struct Distractor {
  bool ellipse;
  double cx, cy, a, b, angle;
  Color color;

  bool contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double u = std::cos(angle) * dx + std::sin(angle) * dy;
    const double v = -std::sin(angle) * dx + std::cos(angle) * dy;
    if (ellipse) return (u / a) * (u / a) + (v / b) * (v / b) <= 1.0;
    return std::abs(u) <= a && std::abs(v) <= b;
  }
};

struct Scene {
  std::vector<Point> object;
  Color object_color;
  Color background;
  std::vector<Distractor> distractors;
};

BinaryMask rasterize_object(const std::vector<Point>& poly, int size) {
  BinaryMask mask(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) mask.set(x, y, inside_polygon(poly, x + 0.5, y + 0.5));
  return mask;
}

// Distractors never touch the object (one pixel of clearance) or each other.
std::vector<Distractor> place_distractors(SplitMix64& rng, const GenConfig& cfg, const BinaryMask& object,
                                          const Color& object_color, const Color& background) {
  const int size = cfg.image_size;
  const int count = static_cast<int>(rng.uniform_int(cfg.distractors_min, cfg.distractors_max));
  std::vector<std::uint8_t> taken(static_cast<std::size_t>(size) * size, 0);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      if (!object.at(x, y)) continue;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int xx = x + dx, yy = y + dy;
          if (xx >= 0 && yy >= 0 && xx < size && yy < size) taken[static_cast<std::size_t>(yy) * size + xx] = 1;
        }
    }

  std::vector<Distractor> out;
  for (int i = 0; i < count; ++i) {
    Color color = random_color(rng, 0.0, 1.0);
    for (int tries = 0; tries < 64; ++tries) {
      bool distinct = color_distance(color, object_color) >= 0.35 && color_distance(color, background) >= 0.25;
      for (const Distractor& d : out) distinct = distinct && color_distance(color, d.color) >= 0.15;
      if (distinct) break;
      color = random_color(rng, 0.0, 1.0);
    }
    for (int tries = 0; tries < 20; ++tries) {
      Distractor d{rng.uniform() < 0.5,
                   rng.uniform(0.0, size),
                   rng.uniform(0.0, size),
                   rng.uniform(0.06, 0.14) * size,
                   rng.uniform(0.06, 0.14) * size,
                   rng.uniform(0.0, std::numbers::pi),
                   color};
      std::vector<std::size_t> cells;
      bool clash = false;
      for (int y = 0; y < size && !clash; ++y)
        for (int x = 0; x < size; ++x) {
          if (!d.contains(x + 0.5, y + 0.5)) continue;
          const std::size_t idx = static_cast<std::size_t>(y) * size + x;
          if (taken[idx]) {
            clash = true;
            break;
          }
          cells.push_back(idx);
        }
      if (clash || cells.empty()) continue;
      for (std::size_t idx : cells) taken[idx] = 1;
      out.push_back(d);
      break;
    }
  }
  return out;
}

RgbImage render(const Scene& scene, const GenConfig& cfg, SplitMix64& rng) {
  const int size = cfg.image_size;
  RgbImage img(size, size);
  const double step = 1.0 / kSupersample;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      Color acc{0.0, 0.0, 0.0};
      for (int sy = 0; sy < kSupersample; ++sy) {
        for (int sx = 0; sx < kSupersample; ++sx) {
          const double px = x + (sx + 0.5) * step;
          const double py = y + (sy + 0.5) * step;
          const Color* c = &scene.background;
          if (inside_polygon(scene.object, px, py)) {
            c = &scene.object_color;
          } else {
            for (const Distractor& d : scene.distractors) {
              if (d.contains(px, py)) {
                c = &d.color;
                break;
              }
            }
          }
          for (int k = 0; k < 3; ++k) acc[k] += (*c)[k];
        }
      }
      for (int k = 0; k < 3; ++k) {
        const double v = acc[k] / (kSupersample * kSupersample) + cfg.noise_sigma * rng.normal();
        img.set(x, y, k, static_cast<float>(std::clamp(v, 0.0, 1.0)));
      }
    }
  }
  return img;
}

bool mask_valid(const BinaryMask& mask) {
  const double fraction = static_cast<double>(mask.count_foreground()) / static_cast<double>(mask.size());
  return fraction >= kMinFraction && fraction <= kMaxFraction && count_components(mask) == 1;
}

Color jittered(const Color& base, double amplitude, SplitMix64& rng) {
  Color c;
  for (int k = 0; k < 3; ++k) c[k] = std::clamp(base[k] + rng.uniform(-amplitude, amplitude), 0.0, 1.0);
  return c;
}

Color background_for(const Color& object, SplitMix64& rng) {
  Color bg = random_color(rng, 0.0, 1.0);
  for (int tries = 0; tries < 64 && color_distance(bg, object) < 0.3; ++tries) bg = random_color(rng, 0.0, 1.0);
  return bg;
}

struct Placed {
  std::vector<Point> object;
  BinaryMask mask{1, 1};
};

Placed place_object(const std::vector<Point>& shape, const GenConfig& cfg, SplitMix64& rng) {
  const int size = cfg.image_size;
  const double scale = rng.uniform(cfg.scale_min, cfg.scale_max);
  const double angle = rng.uniform(cfg.rotation_min, cfg.rotation_max);
  const double extent = scale * max_radius(shape) + 1.0;
  double cx = size / 2.0, cy = size / 2.0;
  if (size - 2.0 * extent > 0.0) {
    cx = rng.uniform(extent, size - extent);
    cy = rng.uniform(extent, size - extent);
  }
  Placed p{place(shape, scale, angle, cx, cy), BinaryMask(size, size)};
  p.mask = rasterize_object(p.object, size);
  return p;
}

}  // namespace

void GenConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidConfig, msg); };
  if (image_size < 16 || image_size > 4096) fail("image_size must be in [16, 4096]");
  if (distractors_min < 0 || distractors_max < distractors_min || distractors_max > 16) {
    fail("distractor range must satisfy 0 <= min <= max <= 16");
  }
  if (!(scale_min > 0.0 && scale_min <= scale_max && scale_max <= 4.0)) fail("scale range must satisfy 0 < min <= max <= 4");
  if (!(rotation_min <= rotation_max) || !std::isfinite(rotation_min) || !std::isfinite(rotation_max)) {
    fail("rotation range must be ordered and finite");
  }
  if (!(color_jitter >= 0.0 && color_jitter <= 1.0)) fail("color_jitter must be in [0, 1]");
  if (!(noise_sigma >= 0.0 && noise_sigma <= 1.0)) fail("noise_sigma must be in [0, 1]");
}

int count_components(const BinaryMask& mask) {
  const int w = mask.width(), h = mask.height();
  std::vector<std::uint8_t> seen(mask.size(), 0);
  std::vector<int> stack;
  int components = 0;
  for (int start = 0; start < w * h; ++start) {
    if (seen[static_cast<std::size_t>(start)] || !mask.labels()[static_cast<std::size_t>(start)]) continue;
    ++components;
    stack.push_back(start);
    seen[static_cast<std::size_t>(start)] = 1;
    while (!stack.empty()) {
      const int i = stack.back();
      stack.pop_back();
      const int x = i % w, y = i / w;
      const int nx[4] = {x - 1, x + 1, x, x};
      const int ny[4] = {y, y, y - 1, y + 1};
      for (int k = 0; k < 4; ++k) {
        if (nx[k] < 0 || ny[k] < 0 || nx[k] >= w || ny[k] >= h) continue;
        const int j = ny[k] * w + nx[k];
        if (!seen[static_cast<std::size_t>(j)] && mask.labels()[static_cast<std::size_t>(j)]) {
          seen[static_cast<std::size_t>(j)] = 1;
          stack.push_back(j);
        }
      }
    }
  }
  return components;
}

PairSample gen_pair(std::uint64_t seed, const GenConfig& config) {
  config.validate();
  const int size = config.image_size;
  for (int attempt = 0; attempt <= kAttempts; ++attempt) {
    SplitMix64 rng(derive_seed(seed, static_cast<std::uint64_t>(attempt)));
    const bool fallback = attempt == kAttempts;
    const std::vector<Point> shape =
        fallback ? ellipse_polygon(0.25 * size, 0.18 * size) : smoothed_polygon(rng, 0.2 * size);
    const Color base = random_color(rng, 0.15, 0.85);

    Placed placed[2];
    Scene scenes[2];
    for (int i = 0; i < 2; ++i) {
      if (fallback) {
        placed[i] = {place(shape, 1.0, 0.0, size / 2.0, size / 2.0), BinaryMask(size, size)};
        placed[i].mask = rasterize_object(placed[i].object, size);
      } else {
        placed[i] = place_object(shape, config, rng);
      }
      scenes[i].object = placed[i].object;
      scenes[i].object_color = jittered(base, config.color_jitter, rng);
      scenes[i].background = background_for(scenes[i].object_color, rng);
    }
    if (!fallback && !(mask_valid(placed[0].mask) && mask_valid(placed[1].mask))) continue;

    PairSample sample{RgbImage(size, size), RgbImage(size, size), placed[0].mask, placed[1].mask, seed};
    for (int i = 0; i < 2; ++i) {
      scenes[i].distractors =
          place_distractors(rng, config, placed[i].mask, scenes[i].object_color, scenes[i].background);
    }
    sample.img_a = render(scenes[0], config, rng);
    sample.img_b = render(scenes[1], config, rng);
    return sample;
  }
  throw Error(ErrorCode::InvalidValue, "unreachable: fallback shape not returned");
}

std::vector<ManifestEntry> gen_dataset(std::uint64_t seed, const GenConfig& config, int n_pairs,
                                       const std::filesystem::path& out_dir) {
  config.validate();
  if (n_pairs < 1) throw Error(ErrorCode::InvalidConfig, "pairs must be positive");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + out_dir.string() + ": " + ec.message());

  std::vector<ManifestEntry> entries;
  std::ostringstream manifest;
  for (int i = 0; i < n_pairs; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "pair_%04d", i);
    const std::string stem(id);
    ManifestEntry e{stem, stem + "_a.ppm", stem + "_a_mask.pgm", stem + "_b.ppm", stem + "_b_mask.pgm"};
    const PairSample s = gen_pair(derive_seed(seed, static_cast<std::uint64_t>(i)), config);
    write_image(s.img_a, out_dir / e.img_a);
    write_mask(s.mask_a, out_dir / e.mask_a);
    write_image(s.img_b, out_dir / e.img_b);
    write_mask(s.mask_b, out_dir / e.mask_b);
    manifest << e.id << '\t' << e.img_a << '\t' << e.mask_a << '\t' << e.img_b << '\t' << e.mask_b << '\n';
    entries.push_back(std::move(e));
  }
  // The manifest goes last: a directory with a manifest is complete.
  write_file_atomic(out_dir / "manifest.tsv", manifest.str());
  return entries;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir) {
  const auto bytes = read_file_bytes(dir / "manifest.tsv");
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  std::vector<ManifestEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::istringstream ls(line);
    std::string f;
    while (std::getline(ls, f, '\t')) fields.push_back(f);
    if (fields.size() != 5) {
      throw Error(ErrorCode::MalformedHeader,
                  "manifest line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) + " fields");
    }
    entries.push_back({fields[0], fields[1], fields[2], fields[3], fields[4]});
  }
  return entries;
}

std::vector<DatasetItem> load_dataset(const std::filesystem::path& dir) {
  const auto entries = read_manifest(dir);
  if (entries.empty()) throw Error(ErrorCode::DatasetEmpty, "no pairs listed in " + (dir / "manifest.tsv").string());
  std::vector<DatasetItem> items;
  items.reserve(entries.size());
  for (const ManifestEntry& e : entries) {
    DatasetItem item{e.id, read_image(dir / e.img_a), read_image(dir / e.img_b), read_mask(dir / e.mask_a),
                     read_mask(dir / e.mask_b)};
    const int w = item.img_a.width(), h = item.img_a.height();
    const bool same = item.img_b.width() == w && item.img_b.height() == h && item.mask_a.width() == w &&
                      item.mask_a.height() == h && item.mask_b.width() == w && item.mask_b.height() == h;
    if (!same) throw Error(ErrorCode::ShapeMismatch, "pair " + e.id + " has rasters of different sizes");
    if (!items.empty() && (items.front().img_a.width() != w || items.front().img_a.height() != h)) {
      throw Error(ErrorCode::ShapeMismatch, "pair " + e.id + " differs in size from " + items.front().id);
    }
    items.push_back(std::move(item));
  }
  return items;
}

}  // namespace coseg
