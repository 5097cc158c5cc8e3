#pragma once

// Patch grids over an image and the two ways of putting predicted patches
// back together.
//
// Non-overlap: the image is reflect-padded on the bottom/right to a multiple
// of the patch and cut into a plain grid.
//
// Overlap: the image is reflect-padded by patch/4 on the top/left (and at
// least that on the bottom/right), tiles step by patch/2, and the last tile
// per axis is clamped to the padded edge. Only the central patch/2 square of
// each predicted tile is kept; those squares tile the image exactly once.

#include <algorithm>
#include <cstdlib>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "orbitsr/tensor.hpp"

namespace orbitsr {

struct TileAxis {
  int size = 0;        // unpadded length
  int pad_before = 0;
  int pad_after = 0;
  std::vector<int> origins;  // in padded coordinates

  int padded() const { return size + pad_before + pad_after; }
};

struct TilePlan {
  int height = 0;
  int width = 0;
  int patch = 0;
  int stride = 0;
  bool overlap = false;
  TileAxis rows_axis;
  TileAxis cols_axis;

  int rows() const { return static_cast<int>(rows_axis.origins.size()); }
  int cols() const { return static_cast<int>(cols_axis.origins.size()); }
  std::size_t count() const { return static_cast<std::size_t>(rows()) * cols(); }

  // Tile origins (y, x) in padded coordinates, row-major.
  std::vector<std::pair<int, int>> origins() const {
    std::vector<std::pair<int, int>> out;
    out.reserve(count());
    for (int y : rows_axis.origins)
      for (int x : cols_axis.origins) out.emplace_back(y, x);
    return out;
  }

  // Human-readable dump, one origin per line.
  std::string to_text() const {
    std::ostringstream os;
    os << "image: " << height << "x" << width << "\n"
       << "patch: " << patch << " stride: " << stride
       << " mode: " << (overlap ? "overlap" : "nonoverlap") << "\n"
       << "padding: top " << rows_axis.pad_before << " bottom " << rows_axis.pad_after
       << " left " << cols_axis.pad_before << " right " << cols_axis.pad_after << "\n"
       << "grid: " << rows() << "x" << cols() << "\n"
       << "tiles: " << count() << "\n";
    for (auto [y, x] : origins()) os << y << " " << x << "\n";
    return os.str();
  }
};

namespace detail {

inline TileAxis plan_axis(int size, int patch, bool overlap) {
  TileAxis a;
  a.size = size;
  if (!overlap) {
    const int tiles = (size + patch - 1) / patch;
    a.pad_after = tiles * patch - size;
    for (int t = 0; t < tiles; ++t) a.origins.push_back(t * patch);
    return a;
  }
  const int stride = patch / 2;
  const int quarter = patch / 4;
  a.pad_before = quarter;
  // Enough trailing pad for the last clamped tile's center to reach the end,
  // and for at least one full tile.
  a.pad_after = std::max(patch - stride - quarter, patch - size - quarter);
  const int last = a.padded() - patch;
  for (int o = 0; o < last; o += stride) a.origins.push_back(o);
  a.origins.push_back(last);
  return a;
}

// Reflect (mirror without repeating the edge) an index into [0, n).
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

// For each tile along an axis, the [begin, end) range of unpadded
// coordinates it owns in overlap reconstruction.
inline std::vector<std::pair<int, int>> center_spans(const TileAxis& a, int stride) {
  std::vector<std::pair<int, int>> spans;
  int next = 0;
  for (int o : a.origins) {
    // the center starts pad_before into the tile, i.e. at unpadded coordinate o
    const int end = std::min(o + stride, a.size);
    spans.emplace_back(std::min(next, end), end);
    next = std::max(next, end);
  }
  return spans;
}

}  // namespace detail

inline TilePlan plan_tiles(int h, int w, int patch, bool overlap) {
  if (patch < 2 || patch % 2 != 0) throw std::invalid_argument("plan_tiles: patch must be even and >= 2");
  if (h < 1 || w < 1) throw std::invalid_argument("plan_tiles: image dims must be >= 1");
  TilePlan plan;
  plan.height = h;
  plan.width = w;
  plan.patch = patch;
  plan.overlap = overlap;
  plan.stride = overlap ? patch / 2 : patch;
  plan.rows_axis = detail::plan_axis(h, patch, overlap);
  plan.cols_axis = detail::plan_axis(w, patch, overlap);
  return plan;
}

// Patches of (n, c, patch, patch) in plan order; out-of-image samples are
// reflected.
template <typename T>
std::vector<Tensor<T>> extract_patches(const Tensor<T>& img, const TilePlan& plan) {
  if (img.h() != plan.height || img.w() != plan.width)
    throw ShapeError("extract_patches: image " + img.shape().str() + " does not match plan " +
                     std::to_string(plan.height) + "x" + std::to_string(plan.width));
  std::vector<Tensor<T>> out;
  out.reserve(plan.count());
  const int P = plan.patch;
  for (auto [oy, ox] : plan.origins()) {
    Tensor<T> t(img.n(), img.c(), P, P);
    for (int n = 0; n < img.n(); ++n)
      for (int c = 0; c < img.c(); ++c)
        for (int y = 0; y < P; ++y) {
          const int sy = detail::reflect_index(oy + y - plan.rows_axis.pad_before, plan.height);
          for (int x = 0; x < P; ++x) {
            const int sx = detail::reflect_index(ox + x - plan.cols_axis.pad_before, plan.width);
            t(n, c, y, x) = img(n, c, sy, sx);
          }
        }
    out.push_back(std::move(t));
  }
  return out;
}

namespace detail {
template <typename T>
void check_patches(const std::vector<Tensor<T>>& patches, const TilePlan& plan, int scale) {
  if (scale < 1) throw ShapeError("stitch: scale must be >= 1");
  if (patches.size() != plan.count())
    throw ShapeError("stitch: got " + std::to_string(patches.size()) + " patches, plan has " +
                     std::to_string(plan.count()));
  const int side = plan.patch * scale;
  for (const auto& p : patches)
    if (p.h() != side || p.w() != side || !(p.n() == patches[0].n() && p.c() == patches[0].c()))
      throw ShapeError("stitch: patch " + p.shape().str() + " is not " + std::to_string(side) +
                       "x" + std::to_string(side));
}
}  // namespace detail

template <typename T>
Tensor<T> stitch_nonoverlap(const std::vector<Tensor<T>>& patches, const TilePlan& plan, int scale) {
  if (plan.overlap) throw std::invalid_argument("stitch_nonoverlap: plan is in overlap mode");
  detail::check_patches(patches, plan, scale);
  const int H = plan.height * scale, W = plan.width * scale, side = plan.patch * scale;
  Tensor<T> out(patches[0].n(), patches[0].c(), H, W);
  const auto origins = plan.origins();
  for (std::size_t t = 0; t < origins.size(); ++t) {
    const int y0 = origins[t].first * scale, x0 = origins[t].second * scale;
    const int y1 = std::min(H, y0 + side), x1 = std::min(W, x0 + side);
    const auto& p = patches[t];
    for (int n = 0; n < p.n(); ++n)
      for (int c = 0; c < p.c(); ++c)
        for (int y = y0; y < y1; ++y)
          for (int x = x0; x < x1; ++x) out(n, c, y, x) = p(n, c, y - y0, x - x0);
  }
  return out;
}

// Overlap reconstruction from each patch's central region. When coverage
// is given it receives the per-pixel write count (H*scale x W*scale).
template <typename T>
Tensor<T> stitch_overlap_center(const std::vector<Tensor<T>>& patches, const TilePlan& plan,
                                int scale, std::vector<int>* coverage = nullptr) {
  if (!plan.overlap) throw std::invalid_argument("stitch_overlap_center: plan is not in overlap mode");
  detail::check_patches(patches, plan, scale);
  const int H = plan.height * scale, W = plan.width * scale;
  Tensor<T> out(patches[0].n(), patches[0].c(), H, W);
  if (coverage) coverage->assign(static_cast<std::size_t>(H) * W, 0);
  const auto ys = detail::center_spans(plan.rows_axis, plan.stride);
  const auto xs = detail::center_spans(plan.cols_axis, plan.stride);
  std::size_t t = 0;
  for (std::size_t r = 0; r < ys.size(); ++r) {
    for (std::size_t c = 0; c < xs.size(); ++c, ++t) {
      const auto& p = patches[t];
      // unpadded coordinate u maps to patch-local u - origin + pad_before
      const int ly = plan.rows_axis.pad_before - plan.rows_axis.origins[r];
      const int lx = plan.cols_axis.pad_before - plan.cols_axis.origins[c];
      for (int y = ys[r].first * scale; y < ys[r].second * scale; ++y)
        for (int x = xs[c].first * scale; x < xs[c].second * scale; ++x) {
          for (int n = 0; n < p.n(); ++n)
            for (int ch = 0; ch < p.c(); ++ch)
              out(n, ch, y, x) = p(n, ch, y + ly * scale, x + lx * scale);
          if (coverage) ++(*coverage)[static_cast<std::size_t>(y) * W + x];
        }
    }
  }
  return out;
}

// "2-D box linear decay" weights over an N x N patch: 1 within Chebyshev
// distance k/2 of the patch center (a k x k box, k + 1 when N - k is odd),
// then falling linearly with the pixel distance d beyond the box to
// 1 - d / (m + 1) where m is the largest such distance in the patch.
struct Mask {
  int side = 0;
  int k = 0;
  std::vector<double> values;

  double operator()(int u, int v) const {
    return values[static_cast<std::size_t>(u) * side + v];
  }

  template <typename T>
  Tensor<T> tensor() const {
    Tensor<T> t(1, 1, side, side);
    for (std::size_t i = 0; i < values.size(); ++i) t[i] = static_cast<T>(values[i]);
    return t;
  }
};

inline Mask make_mask(int side, int k) {
  if (side < 1) throw std::invalid_argument("make_mask: side must be >= 1");
  if (k <= 0) throw std::invalid_argument("make_mask: k must be positive");
  Mask m;
  m.side = side;
  m.k = k;
  m.values.assign(static_cast<std::size_t>(side) * side, 1.0);
  if (k >= side) return m;
  // doubled offsets from the center keep everything integral
  auto dist = [&](int u) { return std::max(0, (std::abs(2 * u - (side - 1)) - k + 1) / 2); };
  const int reach = dist(0);
  for (int u = 0; u < side; ++u)
    for (int v = 0; v < side; ++v) {
      const int d = std::max(dist(u), dist(v));
      m.values[static_cast<std::size_t>(u) * side + v] = 1.0 - static_cast<double>(d) / (reach + 1);
    }
  return m;
}

}  // namespace orbitsr
