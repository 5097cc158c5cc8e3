#pragma once

#include <array>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "orbitsr/tensor.hpp"
#include "orbitsr/tiling.hpp"

namespace orbitsr {

// PSNR of identical images.
inline constexpr double kInfiniteDb = std::numeric_limits<double>::infinity();

inline std::string format_db(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::fixed << std::setprecision(6) << v;
  return os.str();
}

template <typename T>
double mse(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mse");
  auto av = a.values();
  auto bv = b.values();
  double acc = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = static_cast<double>(av[i]) - static_cast<double>(bv[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(av.size());
}

inline double psnr_from_mse(double mse_value, double i_max) {
  if (mse_value == 0.0) return kInfiniteDb;
  return 10.0 * std::log10(i_max * i_max / mse_value);
}

template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double i_max = 255.0) {
  return psnr_from_mse(mse(a, b), i_max);
}

// 10 log10(N^2 imax^2 / sum M (hr - sr)^2) for N x N patches; with several
// planes every plane is weighted by the same mask and N^2 counts all of them.
template <typename T>
double mask_psnr(const Tensor<T>& sr, const Tensor<T>& hr, const Mask& mask, double i_max = 255.0) {
  require_same_shape(sr.shape(), hr.shape(), "mask_psnr");
  if (sr.h() != mask.side || sr.w() != mask.side)
    throw ShapeError("mask_psnr: mask side " + std::to_string(mask.side) + " does not match patch " +
                     sr.shape().str());
  double weighted = 0.0;
  for (int n = 0; n < sr.n(); ++n)
    for (int c = 0; c < sr.c(); ++c) {
      auto s = sr.plane(n, c);
      auto h = hr.plane(n, c);
      for (std::size_t i = 0; i < s.size(); ++i) {
        const double d = static_cast<double>(h[i]) - static_cast<double>(s[i]);
        weighted += mask.values[i] * d * d;
      }
    }
  if (weighted == 0.0) return kInfiniteDb;
  const double n2 = static_cast<double>(sr.size());
  return 10.0 * std::log10(n2 * i_max * i_max / weighted);
}

template <typename T>
double l1_loss(const Tensor<T>& sr, const Tensor<T>& hr) {
  require_same_shape(sr.shape(), hr.shape(), "l1_loss");
  auto s = sr.values();
  auto h = hr.values();
  double acc = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    acc += std::abs(static_cast<double>(s[i]) - static_cast<double>(h[i]));
  return acc / static_cast<double>(s.size());
}

struct BlockingStats {
  double boundary = 0.0;      // D_b: mean squared step across block edges
  double interior = 0.0;      // D_bc: mean squared step elsewhere
  double eta = 0.0;
  double bef = 0.0;
};

// Blocking effect factor on a block x block grid: adjacent pixel pairs whose
// shared edge lies on a multiple of block are boundary pairs.
template <typename T>
BlockingStats blocking_stats(const Tensor<T>& img, int block) {
  if (block < 2) throw std::invalid_argument("bef: block must be >= 2");
  if (block > img.h() || block > img.w()) throw std::invalid_argument("bef: block larger than image");
  double sb = 0.0, sc = 0.0;
  std::size_t nb = 0, nc = 0;
  for (int n = 0; n < img.n(); ++n)
    for (int c = 0; c < img.c(); ++c) {
      for (int y = 0; y < img.h(); ++y)
        for (int x = 0; x + 1 < img.w(); ++x) {
          const double d = static_cast<double>(img(n, c, y, x + 1)) - static_cast<double>(img(n, c, y, x));
          if ((x + 1) % block == 0) {
            sb += d * d;
            ++nb;
          } else {
            sc += d * d;
            ++nc;
          }
        }
      for (int y = 0; y + 1 < img.h(); ++y)
        for (int x = 0; x < img.w(); ++x) {
          const double d = static_cast<double>(img(n, c, y + 1, x)) - static_cast<double>(img(n, c, y, x));
          if ((y + 1) % block == 0) {
            sb += d * d;
            ++nb;
          } else {
            sc += d * d;
            ++nc;
          }
        }
    }
  BlockingStats s;
  s.boundary = nb ? sb / static_cast<double>(nb) : 0.0;
  s.interior = nc ? sc / static_cast<double>(nc) : 0.0;
  if (s.boundary > s.interior)
    s.eta = std::log2(static_cast<double>(block)) /
            std::log2(static_cast<double>(std::min(img.h(), img.w())));
  s.bef = s.eta * (s.boundary - s.interior);
  return s;
}

template <typename T>
double bef(const Tensor<T>& img, int block) {
  return blocking_stats(img, block).bef;
}

// PSNR-B of the test image b against reference a.
template <typename T>
double psnr_b(const Tensor<T>& a, const Tensor<T>& b, double i_max = 255.0, int block = 48) {
  return psnr_from_mse(mse(a, b) + bef(b, block), i_max);
}

namespace detail {

inline std::array<double, 11> gaussian_window() {
  std::array<double, 11> w{};
  double sum = 0.0;
  for (int i = 0; i < 11; ++i) {
    const double x = i - 5;
    w[static_cast<std::size_t>(i)] = std::exp(-x * x / (2.0 * 1.5 * 1.5));
    sum += w[static_cast<std::size_t>(i)];
  }
  for (auto& v : w) v /= sum;
  return w;
}

// Valid-region separable filtering of an h x w plane with the 11-tap window.
inline std::vector<double> filter_valid(const std::vector<double>& src, int h, int w) {
  const auto g = gaussian_window();
  const int oh = h - 10, ow = w - 10;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < 11; ++k) acc += g[static_cast<std::size_t>(k)] * src[static_cast<std::size_t>(y) * w + x + k];
      rows[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < 11; ++k) acc += g[static_cast<std::size_t>(k)] * rows[static_cast<std::size_t>(y + k) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  return out;
}

}  // namespace detail

// Mean SSIM over all fully-contained 11x11 Gaussian (sigma 1.5) windows.
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, double i_max = 255.0) {
  require_same_shape(a.shape(), b.shape(), "ssim");
  if (a.h() < 11 || a.w() < 11) throw std::invalid_argument("ssim: image smaller than 11x11 window");
  const double c1 = (0.01 * i_max) * (0.01 * i_max);
  const double c2 = (0.03 * i_max) * (0.03 * i_max);
  const int h = a.h(), w = a.w();
  double total = 0.0;
  std::size_t count = 0;
  for (int n = 0; n < a.n(); ++n)
    for (int c = 0; c < a.c(); ++c) {
      const std::size_t len = static_cast<std::size_t>(h) * w;
      std::vector<double> x(len), y(len), xx(len), yy(len), xy(len);
      auto ap = a.plane(n, c);
      auto bp = b.plane(n, c);
      for (std::size_t i = 0; i < len; ++i) {
        x[i] = static_cast<double>(ap[i]);
        y[i] = static_cast<double>(bp[i]);
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
      }
      const auto mx = detail::filter_valid(x, h, w);
      const auto my = detail::filter_valid(y, h, w);
      const auto sxx = detail::filter_valid(xx, h, w);
      const auto syy = detail::filter_valid(yy, h, w);
      const auto sxy = detail::filter_valid(xy, h, w);
      for (std::size_t i = 0; i < mx.size(); ++i) {
        const double vx = sxx[i] - mx[i] * mx[i];
        const double vy = syy[i] - my[i] * my[i];
        const double cov = sxy[i] - mx[i] * my[i];
        total += ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) /
                 ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
        ++count;
      }
    }
  return total / static_cast<double>(count);
}

struct MetricsReport {
  double psnr = 0.0;
  double psnrb = 0.0;
  double ssim = 0.0;
  double mse = 0.0;
  double bef = 0.0;

  static std::string csv_header() { return "image_id,psnr,psnrb,ssim,mse,bef"; }

  std::string csv_row(const std::string& image_id) const {
    std::ostringstream os;
    os << image_id << ',' << format_db(psnr) << ',' << format_db(psnrb) << ',' << std::fixed
       << std::setprecision(6) << ssim << ',' << mse << ',' << bef;
    return os.str();
  }
};

// Full report of test image b against reference a. SSIM is NaN when the
// image is smaller than its window.
template <typename T>
MetricsReport evaluate(const Tensor<T>& a, const Tensor<T>& b, double i_max = 255.0, int block = 48) {
  MetricsReport r;
  r.mse = mse(a, b);
  r.bef = bef(b, block);
  r.psnr = psnr_from_mse(r.mse, i_max);
  r.psnrb = psnr_from_mse(r.mse + r.bef, i_max);
  r.ssim = (a.h() >= 11 && a.w() >= 11) ? ssim(a, b, i_max) : std::numeric_limits<double>::quiet_NaN();
  return r;
}

}  // namespace orbitsr
