#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "orbitsr/tensor.hpp"

namespace orbitsr {

// Keys cubic convolution kernel with a = -0.5 (Catmull-Rom).
inline double cubic_kernel(double x, double a = -0.5) {
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

namespace detail {

struct CubicTap {
  std::array<int, 4> index;
  std::array<double, 4> weight;
};

// Taps for every output coordinate along one axis. Source position uses the
// half-pixel-center mapping src = (dst + 0.5) * ratio - 0.5; samples outside
// the image are clamped to the edge.
inline std::vector<CubicTap> cubic_taps(int in, int out, double ratio) {
  std::vector<CubicTap> taps(static_cast<std::size_t>(out));
  for (int d = 0; d < out; ++d) {
    const double src = (d + 0.5) * ratio - 0.5;
    const int base = static_cast<int>(std::floor(src));
    const double t = src - base;
    auto& tap = taps[static_cast<std::size_t>(d)];
    for (int k = 0; k < 4; ++k) {
      tap.index[k] = std::clamp(base - 1 + k, 0, in - 1);
      tap.weight[k] = cubic_kernel(t - (k - 1));
    }
  }
  return taps;
}

}  // namespace detail

// Resizes every (n, c) plane by the factor num/den. Taps are accumulated as
// offsets from one sample so flat regions stay bit-exact.
template <typename T>
Tensor<T> bicubic_resize(const Tensor<T>& img, int scale_num, int scale_den) {
  if (scale_num < 1 || scale_den < 1) throw ShapeError("bicubic_resize: scale must be positive");
  const long oh = static_cast<long>(img.h()) * scale_num / scale_den;
  const long ow = static_cast<long>(img.w()) * scale_num / scale_den;
  if (oh < 1 || ow < 1) throw ShapeError("bicubic_resize: zero target dimension");
  const double ratio = static_cast<double>(scale_den) / scale_num;
  const auto ty = detail::cubic_taps(img.h(), static_cast<int>(oh), ratio);
  const auto tx = detail::cubic_taps(img.w(), static_cast<int>(ow), ratio);

  Tensor<T> out(img.n(), img.c(), static_cast<int>(oh), static_cast<int>(ow));
  std::vector<double> rows(static_cast<std::size_t>(img.h()) * ow);
  for (int n = 0; n < img.n(); ++n) {
    for (int c = 0; c < img.c(); ++c) {
      auto src = img.plane(n, c);
      for (int y = 0; y < img.h(); ++y) {
        for (long x = 0; x < ow; ++x) {
          const auto& tap = tx[static_cast<std::size_t>(x)];
          const T* row = src.data() + static_cast<std::size_t>(y) * img.w();
          const double ref = row[tap.index[1]];
          double acc = 0.0;
          for (int k = 0; k < 4; ++k) acc += tap.weight[k] * (row[tap.index[k]] - ref);
          rows[static_cast<std::size_t>(y) * ow + x] = ref + acc;
        }
      }
      auto dst = out.plane(n, c);
      for (long y = 0; y < oh; ++y) {
        const auto& tap = ty[static_cast<std::size_t>(y)];
        for (long x = 0; x < ow; ++x) {
          const double ref = rows[static_cast<std::size_t>(tap.index[1]) * ow + x];
          double acc = 0.0;
          for (int k = 0; k < 4; ++k)
            acc += tap.weight[k] * (rows[static_cast<std::size_t>(tap.index[k]) * ow + x] - ref);
          dst[static_cast<std::size_t>(y) * ow + x] = static_cast<T>(ref + acc);
        }
      }
    }
  }
  return out;
}

}  // namespace orbitsr
