#pragma once

// Analytic memory and compute model of one forward pass.
//
// ShapeOps runs Model::forward on shapes only. Each symbolic tensor charges
// its bytes (elements x 4) to a tracker while alive and refunds them when
// released, in exactly the order the eager executor allocates and frees, so
// the peak equals what an instrumented float forward observes. Attention
// additionally holds its L x L matrix for the duration of the op.

#include <cstdint>
#include <map>
#include <string>
#include <utility>

#include "orbitsr/model.hpp"

namespace orbitsr {

struct StageCost {
  std::uint64_t macs = 0;
  std::uint64_t peak_bytes = 0;  // highest live total observed while in this stage
};

struct ActivationTracker {
  std::uint64_t live = 0;
  std::uint64_t peak = 0;
  std::uint64_t macs = 0;
  std::string stage = "input";
  std::map<std::string, StageCost> stages;

  void charge(std::uint64_t bytes) {
    live += bytes;
    touch();
  }
  void refund(std::uint64_t bytes) { live -= bytes; }
  void add_macs(std::uint64_t n) {
    macs += n;
    stages[stage].macs += n;
  }
  void touch() {
    peak = std::max(peak, live);
    auto& s = stages[stage].peak_bytes;
    s = std::max(s, live);
  }
};

inline std::uint64_t activation_bytes(const Shape& s) {
  return static_cast<std::uint64_t>(s.numel()) * 4;
}

// Move-only stand-in for a float tensor.
class SymTensor {
 public:
  SymTensor() = default;
  SymTensor(Shape s, ActivationTracker* t) : shape_(s), tracker_(t) {
    if (tracker_) tracker_->charge(activation_bytes(shape_));
  }
  SymTensor(const SymTensor&) = delete;
  SymTensor& operator=(const SymTensor&) = delete;
  SymTensor(SymTensor&& o) noexcept : shape_(o.shape_), tracker_(std::exchange(o.tracker_, nullptr)) {}
  SymTensor& operator=(SymTensor&& o) noexcept {
    if (this != &o) {
      reset();
      shape_ = o.shape_;
      tracker_ = std::exchange(o.tracker_, nullptr);
    }
    return *this;
  }
  ~SymTensor() { reset(); }

  void reset() {
    if (tracker_) tracker_->refund(activation_bytes(shape_));
    tracker_ = nullptr;
  }
  const Shape& shape() const { return shape_; }
  bool live() const { return tracker_ != nullptr; }

 private:
  Shape shape_{};
  ActivationTracker* tracker_ = nullptr;
};

struct ShapeOps {
  using Value = SymTensor;
  ActivationTracker& tracker;

  explicit ShapeOps(ActivationTracker& t) : tracker(t) {}

  Shape shape(const Value& v) const { return v.shape(); }

  template <typename T>
  Value conv(const Value& x, const ConvLayer<T>& l) {
    const Shape in = x.shape();
    const auto dot = l.weight.name.find('.');
    tracker.stage = l.weight.name.substr(0, dot);
    if (tracker.stage.starts_with("block")) tracker.stage = "blocks";
    if (in.c != l.c_in()) throw ShapeError("conv: channel mismatch in shape walk");
    Shape out{in.n, l.c_out(), 0, 0};
    if (l.transposed) {
      out.h = (in.h - 1) * l.stride - 2 * l.pad + l.k();
      out.w = (in.w - 1) * l.stride - 2 * l.pad + l.k();
    } else {
      out.h = conv_out_dim(in.h, l.k(), l.pad, l.stride);
      out.w = conv_out_dim(in.w, l.k(), l.pad, l.stride);
    }
    tracker.add_macs(static_cast<std::uint64_t>(out.numel()) * l.k() * l.k() * in.c);
    return Value(out, &tracker);
  }
  Value shuffle(const Value& x, int s) {
    const Shape in = x.shape();
    return Value(Shape{in.n, in.c / (s * s), in.h * s, in.w * s}, &tracker);
  }
  Value relu(Value x) { return x; }
  Value sigmoid(Value x) { return x; }
  Value add(Value a, const Value&) { return a; }
  Value mul(Value a, const Value&) { return a; }
  Value concat(const std::vector<const Value*>& parts) {
    Shape s = parts.front()->shape();
    s.c = 0;
    for (const auto* p : parts) s.c += p->shape().c;
    return Value(s, &tracker);
  }
  Value attention(const Value& th, const Value&, const Value&) {
    const Shape s = th.shape();
    const std::uint64_t L = static_cast<std::uint64_t>(s.h) * s.w;
    Value out(s, &tracker);
    // one L x L matrix at a time, freed before the next batch item
    tracker.charge(L * L * 4);
    tracker.refund(L * L * 4);
    tracker.add_macs(2 * L * L * static_cast<std::uint64_t>(s.c) * s.n);
    return out;
  }
  void release(Value& v) { v.reset(); }
};

struct ResourceEstimate {
  std::uint64_t peak_bytes = 0;
  std::uint64_t macs = 0;
  std::map<std::string, StageCost> stages;
};

// One forward of a (1, in_channels, h, w) input, the input itself counted
// as live throughout and the output still live at the end.
inline ResourceEstimate estimate_forward(const ModelConfig& config, int h, int w, int batch = 1) {
  if (h < 1 || w < 1 || batch < 1) throw std::invalid_argument("estimate: dims must be >= 1");
  const auto model = Model<float>::skeleton(config);
  ActivationTracker tracker;
  ShapeOps ops(tracker);
  SymTensor x(Shape{batch, config.in_channels, h, w}, &tracker);
  {
    SymTensor y = model.forward(ops, x);
  }
  return {tracker.peak, tracker.macs, tracker.stages};
}

inline std::uint64_t estimate_peak_activation_bytes(const ModelConfig& config, int h, int w) {
  return estimate_forward(config, h, w).peak_bytes;
}

inline std::uint64_t estimate_macs(const ModelConfig& config, int h, int w) {
  return estimate_forward(config, h, w).macs;
}

}  // namespace orbitsr
