#pragma once

// Grayscale PGM IO, bicubic HR/LR degradation and synthetic datasets.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "orbitsr/bicubic.hpp"
#include "orbitsr/random.hpp"
#include "orbitsr/tensor.hpp"

namespace orbitsr {

class PgmError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GrayImage {
  int h = 0;
  int w = 0;
  int maxval = 255;
  std::vector<std::uint16_t> samples;  // row-major, each <= maxval

  GrayImage() = default;
  GrayImage(int h_, int w_, int maxval_ = 255, std::uint16_t fill = 0)
      : h(h_), w(w_), maxval(maxval_), samples(static_cast<std::size_t>(h_) * w_, fill) {}

  int depth() const { return maxval > 255 ? 16 : 8; }
  std::uint16_t& at(int y, int x) { return samples[static_cast<std::size_t>(y) * w + x]; }
  std::uint16_t at(int y, int x) const { return samples[static_cast<std::size_t>(y) * w + x]; }
  bool operator==(const GrayImage&) const = default;
};

namespace detail {

// Next whitespace-delimited header token, skipping '#' comments.
inline std::string pgm_token(std::istream& is, const std::string& path) {
  std::string tok;
  int ch;
  while ((ch = is.get()) != EOF) {
    if (ch == '#') {
      while ((ch = is.get()) != EOF && ch != '\n' && ch != '\r') {
      }
      if (!tok.empty()) break;
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  if (tok.empty()) throw PgmError("malformed PGM header: " + path);
  return tok;
}

inline int pgm_int(std::istream& is, const std::string& path, const char* what) {
  const std::string tok = pgm_token(is, path);
  std::size_t used = 0;
  long v = 0;
  try {
    v = std::stol(tok, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != tok.size() || v < 0 || v > 1'000'000'000)
    throw PgmError(std::string("malformed PGM header (") + what + "): " + path);
  return static_cast<int>(v);
}

}  // namespace detail

inline GrayImage read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw PgmError("cannot open image: " + path);
  char magic[2] = {0, 0};
  if (!is.read(magic, 2) || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '2'))
    throw PgmError("not a P5/P2 PGM file: " + path);
  const bool binary = magic[1] == '5';
  GrayImage img;
  img.w = detail::pgm_int(is, path, "width");
  img.h = detail::pgm_int(is, path, "height");
  img.maxval = detail::pgm_int(is, path, "maxval");
  if (img.w < 1 || img.h < 1) throw PgmError("malformed PGM header (zero size): " + path);
  if (img.maxval < 1 || img.maxval > 65535) throw PgmError("unsupported PGM maxval: " + path);
  const std::size_t count = static_cast<std::size_t>(img.h) * img.w;
  img.samples.resize(count);
  if (binary) {
    // pgm_token consumed exactly one whitespace byte after maxval
    const std::size_t bps = img.maxval > 255 ? 2 : 1;
    std::vector<unsigned char> raw(count * bps);
    if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
      throw PgmError("truncated PGM payload: " + path);
    for (std::size_t i = 0; i < count; ++i)
      img.samples[i] = bps == 2 ? static_cast<std::uint16_t>((raw[2 * i] << 8) | raw[2 * i + 1]) : raw[i];
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      int v = 0;
      try {
        v = detail::pgm_int(is, path, "sample");
      } catch (const PgmError&) {
        throw PgmError("truncated PGM payload: " + path);
      }
      img.samples[i] = static_cast<std::uint16_t>(v);
    }
  }
  for (auto s : img.samples)
    if (s > img.maxval) throw PgmError("PGM sample exceeds maxval: " + path);
  return img;
}

// Always writes binary P5.
inline void write_pgm(const GrayImage& img, const std::string& path) {
  if (img.maxval < 1 || img.maxval > 65535) throw PgmError("unsupported PGM maxval");
  if (img.samples.size() != static_cast<std::size_t>(img.h) * img.w)
    throw PgmError("image sample count does not match its size");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw PgmError("cannot open for writing: " + path);
  os << "P5\n" << img.w << " " << img.h << "\n" << img.maxval << "\n";
  std::vector<unsigned char> raw;
  raw.reserve(img.samples.size() * 2);
  for (auto s : img.samples) {
    if (img.maxval > 255) raw.push_back(static_cast<unsigned char>(s >> 8));
    raw.push_back(static_cast<unsigned char>(s & 0xff));
  }
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!os) throw PgmError("write failed: " + path);
}

// (1, 1, h, w) tensor of the samples, optionally divided by maxval.
template <typename T>
Tensor<T> to_tensor(const GrayImage& img, bool normalize = false) {
  Tensor<T> t(1, 1, img.h, img.w);
  const double k = normalize ? 1.0 / img.maxval : 1.0;
  for (std::size_t i = 0; i < img.samples.size(); ++i) t[i] = static_cast<T>(img.samples[i] * k);
  return t;
}

// Round half away from zero, then clamp to [0, maxval]. A normalized tensor
// is first scaled by maxval.
template <typename T>
GrayImage from_tensor(const Tensor<T>& t, int maxval = 255, bool normalized = false) {
  if (t.n() != 1 || t.c() != 1) throw ShapeError("from_tensor: expected (1,1,h,w), got " + t.shape().str());
  GrayImage img(t.h(), t.w(), maxval);
  const double k = normalized ? maxval : 1.0;
  for (std::size_t i = 0; i < img.samples.size(); ++i) {
    const double v = std::round(static_cast<double>(t[i]) * k);
    img.samples[i] = static_cast<std::uint16_t>(std::clamp(v, 0.0, static_cast<double>(maxval)));
  }
  return img;
}

struct ImagePair {
  GrayImage hr;
  GrayImage lr;
};

// HR and LR both resampled from the same source by integer downscale
// factors. The source is cropped (top-left anchored) to a multiple of
// lr_factor so that lr dims are exactly hr dims / (lr_factor / hr_factor).
inline ImagePair degrade_pair(const GrayImage& src, int hr_factor, int lr_factor) {
  if (hr_factor < 1 || lr_factor < 1 || lr_factor % hr_factor != 0 || lr_factor == hr_factor)
    throw std::invalid_argument("degrade_pair: lr_factor must be a proper multiple of hr_factor");
  const int ch = src.h / lr_factor * lr_factor;
  const int cw = src.w / lr_factor * lr_factor;
  if (ch < lr_factor || cw < lr_factor)
    throw std::invalid_argument("degrade_pair: image too small after cropping to a multiple of " +
                                std::to_string(lr_factor));
  Tensor<double> crop(1, 1, ch, cw);
  for (int y = 0; y < ch; ++y)
    for (int x = 0; x < cw; ++x) crop(0, 0, y, x) = src.at(y, x);
  ImagePair out;
  out.hr = from_tensor(bicubic_resize(crop, 1, hr_factor), src.maxval);
  out.lr = from_tensor(bicubic_resize(crop, 1, lr_factor), src.maxval);
  return out;
}

enum class SynthKind { craters, ramps, checkers };

inline SynthKind parse_synth_kind(const std::string& s) {
  if (s == "craters") return SynthKind::craters;
  if (s == "ramps") return SynthKind::ramps;
  if (s == "checkers") return SynthKind::checkers;
  throw std::invalid_argument("unknown synthetic dataset kind: " + s);
}

namespace detail {

inline GrayImage synth_source(SynthKind kind, int side, Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(side) * side);
  auto px = [&](int y, int x) -> double& { return v[static_cast<std::size_t>(y) * side + x]; };
  switch (kind) {
    case SynthKind::craters: {
      const double base = rng.uniform(90, 150);
      const double gy = rng.uniform(-0.3, 0.3), gx = rng.uniform(-0.3, 0.3);
      for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) px(y, x) = base + gy * (y - side / 2) + gx * (x - side / 2);
      const int discs = 4 + static_cast<int>(rng.below(6));
      for (int d = 0; d < discs; ++d) {
        const double cy = rng.uniform(0, side), cx = rng.uniform(0, side);
        const double r = rng.uniform(side * 0.06, side * 0.22);
        // sun from the upper left: shadowed floor on that side, lit rim opposite
        for (int y = 0; y < side; ++y)
          for (int x = 0; x < side; ++x) {
            const double dy = y - cy, dx = x - cx;
            const double rho = std::sqrt(dy * dy + dx * dx) / r;
            const double dir = (dx + dy) / (std::sqrt(dx * dx + dy * dy) + 1e-9);
            if (rho < 0.85)
              px(y, x) -= 70.0 * (1.0 - rho * rho) - 25.0 * dir;
            else if (rho < 1.15)
              px(y, x) += 85.0 * (1.0 - std::abs(rho - 1.0) / 0.15) * (0.6 + 0.4 * dir);
          }
      }
      for (auto& p : v) p += 6.0 * rng.normal();
      break;
    }
    case SynthKind::ramps: {
      const double angle = rng.uniform(0, 2 * std::numbers::pi);
      const double lo = rng.uniform(10, 80), hi = rng.uniform(170, 245);
      const double cy = std::sin(angle), cx = std::cos(angle);
      for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
          const double t = ((y - side / 2.0) * cy + (x - side / 2.0) * cx) / (side * 0.75) + 0.5;
          px(y, x) = lo + (hi - lo) * std::clamp(t, 0.0, 1.0);
        }
      break;
    }
    case SynthKind::checkers: {
      const int cell = 4 + static_cast<int>(rng.below(9));
      const double a = rng.uniform(20, 90), b = rng.uniform(160, 235);
      const int oy = static_cast<int>(rng.below(static_cast<std::uint64_t>(cell)));
      const int ox = static_cast<int>(rng.below(static_cast<std::uint64_t>(cell)));
      for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) px(y, x) = (((y + oy) / cell + (x + ox) / cell) % 2) ? b : a;
      break;
    }
  }
  GrayImage img(side, side, 255);
  for (std::size_t i = 0; i < v.size(); ++i)
    img.samples[i] = static_cast<std::uint16_t>(std::clamp(std::round(v[i]), 0.0, 255.0));
  return img;
}

}  // namespace detail

// count HR/LR pairs of 8-bit images; HR is hr_side square, LR hr_side/scale.
inline std::vector<ImagePair> synth_dataset(SynthKind kind, int count, std::uint64_t seed,
                                            int hr_side = 96, int scale = 2) {
  if (count < 0) throw std::invalid_argument("synth_dataset: negative count");
  if (hr_side < scale || hr_side % scale != 0)
    throw std::invalid_argument("synth_dataset: hr side must be a positive multiple of scale");
  std::vector<ImagePair> out;
  out.reserve(static_cast<std::size_t>(count));
  Rng rng(seed);
  for (int i = 0; i < count; ++i) out.push_back(degrade_pair(detail::synth_source(kind, hr_side, rng), 1, scale));
  return out;
}

// Manifest: one "hr_path<TAB>lr_path" line per pair.
inline void write_manifest(const std::vector<std::pair<std::string, std::string>>& entries,
                           const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& [hr, lr] : entries) os << hr << '\t' << lr << '\n';
}

inline std::vector<std::pair<std::string, std::string>> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open manifest: " + path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos)
      throw std::runtime_error("manifest line " + std::to_string(lineno) + ": expected hr<TAB>lr");
    out.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  return out;
}

}  // namespace orbitsr
