#pragma once

#include <array>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <new>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace orbitsr {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Process-wide accounting of bytes held by tensor storage. Used to check the
// analytic activation-memory model against a real forward pass.
class MemoryProbe {
 public:
  static void on_alloc(std::size_t bytes) {
    auto now = live_.fetch_add(bytes, std::memory_order_relaxed) + bytes;
    auto peak = peak_.load(std::memory_order_relaxed);
    while (now > peak &&
           !peak_.compare_exchange_weak(peak, now, std::memory_order_relaxed)) {
    }
  }
  static void on_free(std::size_t bytes) {
    live_.fetch_sub(bytes, std::memory_order_relaxed);
  }
  static std::size_t live() { return live_.load(std::memory_order_relaxed); }
  static std::size_t peak() { return peak_.load(std::memory_order_relaxed); }
  // Restart peak tracking from the current live size.
  static void reset_peak() { peak_.store(live(), std::memory_order_relaxed); }

 private:
  static inline std::atomic<std::size_t> live_{0};
  static inline std::atomic<std::size_t> peak_{0};
};

template <typename T>
struct CountingAllocator {
  using value_type = T;

  CountingAllocator() = default;
  template <typename U>
  CountingAllocator(const CountingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    MemoryProbe::on_alloc(n * sizeof(T));
    return std::allocator<T>{}.allocate(n);
  }
  void deallocate(T* p, std::size_t n) noexcept {
    MemoryProbe::on_free(n * sizeof(T));
    std::allocator<T>{}.deallocate(p, n);
  }
  template <typename U>
  bool operator==(const CountingAllocator<U>&) const noexcept { return true; }
};

struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    std::ostringstream os;
    os << '(' << n << ',' << c << ',' << h << ',' << w << ')';
    return os.str();
  }
};

// Dense rank-4 (n, c, h, w) row-major array. A default-constructed tensor is
// empty and only valid as a moved-from / released placeholder.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using Storage = std::vector<T, CountingAllocator<T>>;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape) {
    if (shape.n < 1 || shape.c < 1 || shape.h < 1 || shape.w < 1)
      throw ShapeError("tensor dimensions must be >= 1, got " + shape.str());
    data_.assign(shape.numel(), fill);
  }

  Tensor(int n, int c, int h, int w, T fill = T(0))
      : Tensor(Shape{n, c, h, w}, fill) {}

  static Tensor from(Shape shape, std::initializer_list<T> values) {
    Tensor t(shape);
    if (values.size() != t.size())
      throw ShapeError("value count does not match shape " + shape.str());
    std::copy(values.begin(), values.end(), t.data_.begin());
    return t;
  }

  template <typename U>
  static Tensor cast(const Tensor<U>& other) {
    Tensor t(other.shape());
    auto src = other.values();
    for (std::size_t i = 0; i < src.size(); ++i) t.data_[i] = static_cast<T>(src[i]);
    return t;
  }

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::size_t bytes() const { return data_.size() * sizeof(T); }

  std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) *
               shape_.w + x;
  }

  T& operator()(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  const T& operator()(int n, int c, int y, int x) const {
    return data_[index(n, c, y, x)];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  // Contiguous (h, w) plane of one channel.
  std::span<T> plane(int n, int c) {
    return std::span<T>(data_).subspan(index(n, c, 0, 0),
                                       static_cast<std::size_t>(shape_.h) * shape_.w);
  }
  std::span<const T> plane(int n, int c) const {
    return std::span<const T>(data_).subspan(
        index(n, c, 0, 0), static_cast<std::size_t>(shape_.h) * shape_.w);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  // Releases storage; the tensor becomes empty.
  void reset() {
    Storage().swap(data_);
    shape_ = Shape{};
  }

  // Same element count, new interpretation of the dims.
  Tensor reshaped(Shape s) const {
    if (s.numel() != data_.size())
      throw ShapeError("cannot reshape " + shape_.str() + " to " + s.str());
    Tensor t = *this;
    t.shape_ = s;
    return t;
  }

  bool operator==(const Tensor& o) const {
    return shape_ == o.shape_ && data_ == o.data_;
  }

 private:
  Shape shape_{};
  Storage data_;
};

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (!(a == b))
    throw ShapeError(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
}

// Weights of a 2-D convolution, kernel laid out (c_out, c_in, kh, kw).
template <typename T>
struct ConvWeights {
  Tensor<T> kernel;
  Tensor<T> bias;  // (1, c_out, 1, 1)

  ConvWeights() = default;
  ConvWeights(int c_out, int c_in, int k)
      : kernel(c_out, c_in, k, k), bias(1, c_out, 1, 1) {}

  int c_out() const { return kernel.n(); }
  int c_in() const { return kernel.c(); }
  int kh() const { return kernel.h(); }
  int kw() const { return kernel.w(); }
};

}  // namespace orbitsr
