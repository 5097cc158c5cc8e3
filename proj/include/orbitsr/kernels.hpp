#pragma once

// Forward kernels (and the adjoint kernels autodiff needs) over Tensor.
// Every kernel is a pure function of its inputs; none allocates scratch
// memory besides its returned tensors, except attention() which holds one
// L x L matrix per batch item.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "orbitsr/tensor.hpp"

namespace orbitsr {

inline int conv_out_dim(int in, int k, int pad, int stride) {
  return (in + 2 * pad - k) / stride + 1;
}

namespace detail {
inline int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }
inline int ceil_div(int a, int b) { return -floor_div(-a, b); }
}  // namespace detail

// kernel is (c_out, c_in, kh, kw); bias holds c_out values.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias, int pad,
                 int stride = 1) {
  if (x.c() != kernel.c())
    throw ShapeError("conv2d: input has " + std::to_string(x.c()) +
                     " channels, weights expect " + std::to_string(kernel.c()));
  if (bias.size() != static_cast<std::size_t>(kernel.n()))
    throw ShapeError("conv2d: bias length does not match c_out");
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  const int kh = kernel.h(), kw = kernel.w();
  const int H = x.h(), W = x.w();
  if (H + 2 * pad - kh < 0 || W + 2 * pad - kw < 0)
    throw ShapeError("conv2d: non-positive output dims");
  const int OH = conv_out_dim(H, kh, pad, stride);
  const int OW = conv_out_dim(W, kw, pad, stride);
  Tensor<T> out(x.n(), kernel.n(), OH, OW);

  for (int n = 0; n < x.n(); ++n) {
    for (int co = 0; co < kernel.n(); ++co) {
      auto dst = out.plane(n, co);
      std::fill(dst.begin(), dst.end(), bias[co]);
      for (int ci = 0; ci < x.c(); ++ci) {
        auto src = x.plane(n, ci);
        for (int ky = 0; ky < kh; ++ky) {
          for (int kx = 0; kx < kw; ++kx) {
            const T wv = kernel(co, ci, ky, kx);
            // ox range whose input column lands inside the image
            const int ox0 = std::max(0, detail::ceil_div(pad - kx, stride));
            const int ox1 = std::min(OW, detail::floor_div(W - 1 + pad - kx, stride) + 1);
            if (ox0 >= ox1) continue;
            for (int oy = 0; oy < OH; ++oy) {
              const int iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= H) continue;
              T* o = dst.data() + static_cast<std::size_t>(oy) * OW;
              const T* s = src.data() + static_cast<std::size_t>(iy) * W;
              if (stride == 1) {
                const int off = kx - pad;
                for (int ox = ox0; ox < ox1; ++ox) o[ox] += wv * s[ox + off];
              } else {
                for (int ox = ox0; ox < ox1; ++ox)
                  o[ox] += wv * s[ox * stride - pad + kx];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvWeights<T>& w, int pad, int stride = 1) {
  return conv2d(x, w.kernel, w.bias, pad, stride);
}

// Accumulates the gradients of conv2d into gx / gk / gb (each optional).
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& kernel, int pad, int stride,
                     const Tensor<T>& gout, Tensor<T>* gx, Tensor<T>* gk, Tensor<T>* gb) {
  const int kh = kernel.h(), kw = kernel.w();
  const int H = x.h(), W = x.w();
  const int OH = gout.h(), OW = gout.w();
  for (int n = 0; n < x.n(); ++n) {
    for (int co = 0; co < kernel.n(); ++co) {
      auto g = gout.plane(n, co);
      if (gb) {
        T acc = 0;
        for (T v : g) acc += v;
        (*gb)[co] += acc;
      }
      for (int ci = 0; ci < x.c(); ++ci) {
        auto src = x.plane(n, ci);
        for (int ky = 0; ky < kh; ++ky) {
          for (int kx = 0; kx < kw; ++kx) {
            const int ox0 = std::max(0, detail::ceil_div(pad - kx, stride));
            const int ox1 = std::min(OW, detail::floor_div(W - 1 + pad - kx, stride) + 1);
            if (ox0 >= ox1) continue;
            const T wv = kernel(co, ci, ky, kx);
            T wacc = 0;
            for (int oy = 0; oy < OH; ++oy) {
              const int iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= H) continue;
              const T* go = g.data() + static_cast<std::size_t>(oy) * OW;
              const T* s = src.data() + static_cast<std::size_t>(iy) * W;
              T* gi = gx ? gx->plane(n, ci).data() + static_cast<std::size_t>(iy) * W : nullptr;
              for (int ox = ox0; ox < ox1; ++ox) {
                const int ix = ox * stride - pad + kx;
                wacc += go[ox] * s[ix];
                if (gi) gi[ix] += go[ox] * wv;
              }
            }
            if (gk) (*gk)(co, ci, ky, kx) += wacc;
          }
        }
      }
    }
  }
}

// Transposed convolution. Only geometries whose output is exactly
// stride x input are accepted (k - 2*pad == stride).
// kernel is (c_out, c_in, kh, kw) like conv2d; each input pixel scatters
// kernel-weighted copies into a stride-spaced output grid.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,
                           int stride, int pad) {
  if (x.c() != kernel.c())
    throw ShapeError("conv_transpose2d: channel mismatch");
  if (bias.size() != static_cast<std::size_t>(kernel.n()))
    throw ShapeError("conv_transpose2d: bias length does not match c_out");
  if (stride < 1 || kernel.h() - 2 * pad != stride || kernel.w() - 2 * pad != stride)
    throw ShapeError("conv_transpose2d: kernel/stride/pad combination does not scale dims by stride");
  const int kh = kernel.h(), kw = kernel.w();
  const int H = x.h(), W = x.w();
  const int OH = (H - 1) * stride - 2 * pad + kh;
  const int OW = (W - 1) * stride - 2 * pad + kw;
  Tensor<T> out(x.n(), kernel.n(), OH, OW);
  for (int n = 0; n < x.n(); ++n) {
    for (int co = 0; co < kernel.n(); ++co) {
      auto dst = out.plane(n, co);
      std::fill(dst.begin(), dst.end(), bias[co]);
      for (int ci = 0; ci < x.c(); ++ci) {
        auto src = x.plane(n, ci);
        for (int ky = 0; ky < kh; ++ky) {
          for (int kx = 0; kx < kw; ++kx) {
            const T wv = kernel(co, ci, ky, kx);
            for (int iy = 0; iy < H; ++iy) {
              const int oy = iy * stride - pad + ky;
              if (oy < 0 || oy >= OH) continue;
              T* o = dst.data() + static_cast<std::size_t>(oy) * OW;
              const T* s = src.data() + static_cast<std::size_t>(iy) * W;
              for (int ix = 0; ix < W; ++ix) {
                const int ox = ix * stride - pad + kx;
                if (ox >= 0 && ox < OW) o[ox] += wv * s[ix];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const ConvWeights<T>& w, int stride, int pad) {
  return conv_transpose2d(x, w.kernel, w.bias, stride, pad);
}

template <typename T>
void conv_transpose2d_backward(const Tensor<T>& x, const Tensor<T>& kernel, int stride,
                               int pad, const Tensor<T>& gout, Tensor<T>* gx, Tensor<T>* gk,
                               Tensor<T>* gb) {
  const int kh = kernel.h(), kw = kernel.w();
  const int H = x.h(), W = x.w();
  const int OH = gout.h(), OW = gout.w();
  for (int n = 0; n < x.n(); ++n) {
    for (int co = 0; co < kernel.n(); ++co) {
      auto g = gout.plane(n, co);
      if (gb) {
        T acc = 0;
        for (T v : g) acc += v;
        (*gb)[co] += acc;
      }
      for (int ci = 0; ci < x.c(); ++ci) {
        auto src = x.plane(n, ci);
        for (int ky = 0; ky < kh; ++ky) {
          for (int kx = 0; kx < kw; ++kx) {
            const T wv = kernel(co, ci, ky, kx);
            T wacc = 0;
            for (int iy = 0; iy < H; ++iy) {
              const int oy = iy * stride - pad + ky;
              if (oy < 0 || oy >= OH) continue;
              const T* go = g.data() + static_cast<std::size_t>(oy) * OW;
              const T* s = src.data() + static_cast<std::size_t>(iy) * W;
              T* gi = gx ? gx->plane(n, ci).data() + static_cast<std::size_t>(iy) * W : nullptr;
              for (int ix = 0; ix < W; ++ix) {
                const int ox = ix * stride - pad + kx;
                if (ox < 0 || ox >= OW) continue;
                wacc += go[ox] * s[ix];
                if (gi) gi[ix] += go[ox] * wv;
              }
            }
            if (gk) (*gk)(co, ci, ky, kx) += wacc;
          }
        }
      }
    }
  }
}

template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, int s) {
  if (s < 1 || x.c() % (s * s) != 0)
    throw ShapeError("pixel_shuffle: channels not divisible by s^2");
  const int C = x.c() / (s * s);
  Tensor<T> out(x.n(), C, x.h() * s, x.w() * s);
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < C; ++c)
      for (int a = 0; a < s; ++a)
        for (int b = 0; b < s; ++b)
          for (int y = 0; y < x.h(); ++y)
            for (int xx = 0; xx < x.w(); ++xx)
              out(n, c, y * s + a, xx * s + b) = x(n, c * s * s + a * s + b, y, xx);
  return out;
}

// Inverse of pixel_shuffle (space-to-depth).
template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, int s) {
  if (s < 1 || x.h() % s != 0 || x.w() % s != 0)
    throw ShapeError("pixel_unshuffle: spatial dims not divisible by s");
  const int h = x.h() / s, w = x.w() / s;
  Tensor<T> out(x.n(), x.c() * s * s, h, w);
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c)
      for (int a = 0; a < s; ++a)
        for (int b = 0; b < s; ++b)
          for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx)
              out(n, c * s * s + a * s + b, y, xx) = x(n, c, y * s + a, xx * s + b);
  return out;
}

template <typename T>
void relu_inplace(Tensor<T>& x) {
  for (T& v : x.values()) v = v > T(0) ? v : T(0);
}

template <typename T>
Tensor<T> relu(Tensor<T> x) {
  relu_inplace(x);
  return x;
}

template <typename T>
T sigmoid_scalar(T v) {
  if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

template <typename T>
void sigmoid_inplace(Tensor<T>& x) {
  for (T& v : x.values()) v = sigmoid_scalar(v);
}

template <typename T>
Tensor<T> sigmoid(Tensor<T> x) {
  sigmoid_inplace(x);
  return x;
}

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>* const> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape s0 = parts[0]->shape();
  int c = 0;
  for (const auto* p : parts) {
    const Shape& s = p->shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w)
      throw ShapeError("concat_channels: batch/spatial mismatch " + s0.str() + " vs " + s.str());
    c += s.c;
  }
  Tensor<T> out(s0.n, c, s0.h, s0.w);
  for (int n = 0; n < s0.n; ++n) {
    int co = 0;
    for (const auto* p : parts) {
      for (int ci = 0; ci < p->c(); ++ci, ++co) {
        auto src = p->plane(n, ci);
        std::copy(src.begin(), src.end(), out.plane(n, co).begin());
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> concat_channels(std::initializer_list<const Tensor<T>*> parts) {
  std::vector<const Tensor<T>*> v(parts);
  return concat_channels<T>(std::span<const Tensor<T>* const>(v));
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int begin, int count) {
  if (begin < 0 || count < 1 || begin + count > x.c())
    throw ShapeError("slice_channels: range out of bounds");
  Tensor<T> out(x.n(), count, x.h(), x.w());
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < count; ++c) {
      auto src = x.plane(n, begin + c);
      std::copy(src.begin(), src.end(), out.plane(n, c).begin());
    }
  return out;
}

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "ew_add");
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) av[i] += bv[i];
}

template <typename T>
void mul_inplace(Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "ew_mul");
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) av[i] *= bv[i];
}

template <typename T>
Tensor<T> ew_add(Tensor<T> a, const Tensor<T>& b) {
  add_inplace(a, b);
  return a;
}

template <typename T>
Tensor<T> ew_mul(Tensor<T> a, const Tensor<T>& b) {
  mul_inplace(a, b);
  return a;
}

// Matrices are tensors of shape (1, 1, rows, cols).
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.n() != 1 || a.c() != 1 || b.n() != 1 || b.c() != 1)
    throw ShapeError("matmul: operands must be (1,1,r,c) matrices");
  if (a.w() != b.h()) throw ShapeError("matmul: inner dimension mismatch");
  const int M = a.h(), K = a.w(), N = b.w();
  Tensor<T> out(1, 1, M, N);
  for (int i = 0; i < M; ++i) {
    T* o = &out(0, 0, i, 0);
    for (int k = 0; k < K; ++k) {
      const T av = a(0, 0, i, k);
      const T* br = &b(0, 0, k, 0);
      for (int j = 0; j < N; ++j) o[j] += av * br[j];
    }
  }
  return out;
}

template <typename T>
void softmax_row_inplace(std::span<T> row) {
  T mx = row[0];
  for (T v : row) mx = std::max(mx, v);
  T sum = 0;
  for (T& v : row) {
    v = std::exp(v - mx);
    sum += v;
  }
  const T inv = T(1) / sum;
  for (T& v : row) v *= inv;
}

template <typename T>
Tensor<T> softmax_rows(Tensor<T> m) {
  if (m.n() != 1 || m.c() != 1) throw ShapeError("softmax_rows: expects a (1,1,r,c) matrix");
  for (int i = 0; i < m.h(); ++i)
    softmax_row_inplace(m.values().subspan(static_cast<std::size_t>(i) * m.w(), m.w()));
  return m;
}

// Embedded-Gaussian attention over spatial positions. theta, phi and g are
// (n, C', h, w); each channel plane is a row of a C' x L matrix, L = h*w.
//   A = softmax_rows(theta^T phi)        (L x L)
//   out[c][i] = sum_j A[i][j] g[c][j]
// When `keep` is given the per-item attention matrices are moved into it.
template <typename T>
Tensor<T> attention(const Tensor<T>& theta, const Tensor<T>& phi, const Tensor<T>& g,
                    std::vector<Tensor<T>>* keep = nullptr) {
  require_same_shape(theta.shape(), phi.shape(), "attention");
  require_same_shape(theta.shape(), g.shape(), "attention");
  const int C = theta.c();
  const int L = theta.h() * theta.w();
  Tensor<T> out(theta.shape());
  for (int n = 0; n < theta.n(); ++n) {
    Tensor<T> A(1, 1, L, L);
    auto a = A.values();
    for (int c = 0; c < C; ++c) {
      auto th = theta.plane(n, c);
      auto ph = phi.plane(n, c);
      for (int i = 0; i < L; ++i) {
        const T t = th[i];
        T* row = a.data() + static_cast<std::size_t>(i) * L;
        for (int j = 0; j < L; ++j) row[j] += t * ph[j];
      }
    }
    for (int i = 0; i < L; ++i)
      softmax_row_inplace(a.subspan(static_cast<std::size_t>(i) * L, L));
    for (int c = 0; c < C; ++c) {
      auto gv = g.plane(n, c);
      auto ov = out.plane(n, c);
      for (int i = 0; i < L; ++i) {
        const T* row = a.data() + static_cast<std::size_t>(i) * L;
        T acc = 0;
        for (int j = 0; j < L; ++j) acc += row[j] * gv[j];
        ov[i] = acc;
      }
    }
    if (keep) keep->push_back(std::move(A));
  }
  return out;
}

// Accumulates gradients of attention() given the cached attention matrices.
template <typename T>
void attention_backward(const Tensor<T>& theta, const Tensor<T>& phi, const Tensor<T>& g,
                        const std::vector<Tensor<T>>& attn, const Tensor<T>& gout,
                        Tensor<T>& gtheta, Tensor<T>& gphi, Tensor<T>& gg) {
  const int C = theta.c();
  const int L = theta.h() * theta.w();
  std::vector<T> dA(static_cast<std::size_t>(L));
  for (int n = 0; n < theta.n(); ++n) {
    auto a = attn[static_cast<std::size_t>(n)].values();
    for (int i = 0; i < L; ++i) {
      const T* row = a.data() + static_cast<std::size_t>(i) * L;
      std::fill(dA.begin(), dA.end(), T(0));
      for (int c = 0; c < C; ++c) {
        const T d = gout.plane(n, c)[i];
        auto gv = g.plane(n, c);
        auto ggv = gg.plane(n, c);
        for (int j = 0; j < L; ++j) {
          dA[j] += d * gv[j];
          ggv[j] += d * row[j];
        }
      }
      T dot = 0;
      for (int j = 0; j < L; ++j) dot += row[j] * dA[j];
      for (int j = 0; j < L; ++j) dA[j] = row[j] * (dA[j] - dot);  // dS row
      for (int c = 0; c < C; ++c) {
        auto ph = phi.plane(n, c);
        auto th = theta.plane(n, c);
        auto gph = gphi.plane(n, c);
        const T t = th[i];
        T acc = 0;
        for (int j = 0; j < L; ++j) {
          acc += dA[j] * ph[j];
          gph[j] += dA[j] * t;
        }
        gtheta.plane(n, c)[i] += acc;
      }
    }
  }
}

}  // namespace orbitsr
