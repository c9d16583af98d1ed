#include "coseg/distance_transform.hpp"

#include <cmath>
#include <limits>

#include "coseg/error.hpp"

namespace coseg {

namespace {

constexpr std::int64_t kUnreached = std::numeric_limits<std::int64_t>::max();

// Intersection abscissa of two parabolas, kept as an exact fraction num/den
// with den > 0.
struct Fraction {
  std::int64_t num;
  std::int64_t den;
};

bool less_or_equal(const Fraction& a, const Fraction& b) {
  return static_cast<__int128>(a.num) * b.den <= static_cast<__int128>(b.num) * a.den;
}

// 1D squared distance transform over a line of length n with sampled values
// f (kUnreached = no seed). Output d[i] = min_q (i-q)^2 + f[q].
void transform_line(const std::int64_t* f, std::int64_t* d, int n, std::vector<int>& hull,
                    std::vector<Fraction>& bounds) {
  hull.clear();
  bounds.clear();
  for (int q = 0; q < n; ++q) {
    if (f[q] == kUnreached) continue;
    const std::int64_t fq = f[q] + static_cast<std::int64_t>(q) * q;
    while (!hull.empty()) {
      const int v = hull.back();
      const std::int64_t fv = f[v] + static_cast<std::int64_t>(v) * v;
      const Fraction s{fq - fv, 2 * static_cast<std::int64_t>(q - v)};
      // Parabola at v is dominated if the new intersection falls left of the
      // point where v starts being the minimum.
      if (hull.size() > 1 && less_or_equal(s, bounds.back())) {
        hull.pop_back();
        bounds.pop_back();
        continue;
      }
      bounds.push_back(s);
      break;
    }
    hull.push_back(q);
  }
  if (hull.empty()) {
    for (int i = 0; i < n; ++i) d[i] = kUnreached;
    return;
  }
  // bounds[k] separates hull[k] and hull[k+1].
  std::size_t k = 0;
  for (int i = 0; i < n; ++i) {
    while (k + 1 < hull.size() &&
           static_cast<__int128>(bounds[k].num) < static_cast<__int128>(i) * bounds[k].den) {
      ++k;
    }
    const std::int64_t dx = i - hull[k];
    d[i] = dx * dx + f[hull[k]];
  }
}

}  // namespace

DistanceMap::DistanceMap(int width, int height, std::vector<std::int64_t> squared)
    : width_(width), height_(height), squared_(std::move(squared)) {
  if (squared_.size() != static_cast<std::size_t>(width) * height) {
    throw Error(ErrorCode::ShapeMismatch, "distance count does not match dimensions");
  }
}

double DistanceMap::at(int x, int y) const {
  return std::sqrt(static_cast<double>(squared_at(x, y)));
}

FloatMap DistanceMap::to_float_map() const {
  std::vector<float> values(squared_.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = static_cast<float>(std::sqrt(static_cast<double>(squared_[i])));
  }
  return FloatMap(width_, height_, std::move(values));
}

std::vector<Pixel> boundary_set(const BinaryMask& mask) {
  const int w = mask.width();
  const int h = mask.height();
  const auto fg = [&](int x, int y) {
    return x >= 0 && y >= 0 && x < w && y < h && mask.at(x, y);
  };
  // A single row (column) is a 1-D signal: the missing axis has no neighbours.
  const bool row_image = h == 1 && w > 1;
  const bool column_image = w == 1 && h > 1;
  std::vector<Pixel> out;
  bool any_fg = false;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!mask.at(x, y)) continue;
      any_fg = true;
      const bool open_x = !fg(x - 1, y) || !fg(x + 1, y);
      const bool open_y = !fg(x, y - 1) || !fg(x, y + 1);
      if ((open_x && !column_image) || (open_y && !row_image)) {
        out.push_back({x, y});
      }
    }
  }
  if (!any_fg) throw Error(ErrorCode::EmptyForeground, "mask has no foreground pixel");
  return out;
}

DistanceMap edt(const BinaryMask& mask) {
  const int w = mask.width();
  const int h = mask.height();
  const auto boundary = boundary_set(mask);

  std::vector<std::int64_t> grid(static_cast<std::size_t>(w) * h, kUnreached);
  for (const auto& p : boundary) grid[static_cast<std::size_t>(p.y) * w + p.x] = 0;

  std::vector<int> hull;
  std::vector<Fraction> bounds;
  std::vector<std::int64_t> line_in(std::max(w, h));
  std::vector<std::int64_t> line_out(std::max(w, h));

  // Columns first, then rows.
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) line_in[y] = grid[static_cast<std::size_t>(y) * w + x];
    transform_line(line_in.data(), line_out.data(), h, hull, bounds);
    for (int y = 0; y < h; ++y) grid[static_cast<std::size_t>(y) * w + x] = line_out[y];
  }
  for (int y = 0; y < h; ++y) {
    std::int64_t* row = grid.data() + static_cast<std::size_t>(y) * w;
    std::copy(row, row + w, line_in.begin());
    transform_line(line_in.data(), row, w, hull, bounds);
  }
  return DistanceMap(w, h, std::move(grid));
}

std::vector<std::int64_t> brute_force_squared_edt(int width, int height,
                                                  const std::vector<Pixel>& boundary) {
  std::vector<std::int64_t> out(static_cast<std::size_t>(width) * height, kUnreached);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      std::int64_t best = kUnreached;
      for (const auto& b : boundary) {
        const std::int64_t dx = x - b.x;
        const std::int64_t dy = y - b.y;
        best = std::min(best, dx * dx + dy * dy);
      }
      out[static_cast<std::size_t>(y) * width + x] = best;
    }
  }
  return out;
}

}  // namespace coseg
