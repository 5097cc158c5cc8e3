#pragma once

// Residual dense network with non-local attention gates.
//
//   H-1 = SFE1(x), H0 = SFE2(H-1)
//   Hp  = block_p(Hp-1)                         p = 1..P
//   HGFB = Conv3x3(Conv1x1([H1..HP]))           (GFB on; else HGFB = HP)
//   HDFB = Conv3x3((HGFB + H-1) * sigmoid(NLB(H-1)))
//   out  = Conv3x3(Upsample(HDFB))
//
// Inside a block with coupled memory (CM) every conv layer sees the block
// input concatenated with all earlier layer outputs; LFB fuses them with a
// 1x1 conv, the block input is added back and, with LRA, the sum is gated by
// sigmoid(NLB(block input)).
//
// forward() is written once against an executor ("Ops") so the same graph
// runs eagerly on tensors, on an autodiff tape, or symbolically on shapes.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "orbitsr/autodiff.hpp"
#include "orbitsr/kernels.hpp"
#include "orbitsr/random.hpp"

namespace orbitsr {

enum class Upsampler : int { deconv = 0, subpixel = 1 };

inline const char* to_string(Upsampler u) { return u == Upsampler::deconv ? "deconv" : "subpixel"; }

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  int blocks = 16;        // P
  int layers = 6;         // D, conv layers per block
  int growth = 32;        // G
  int base_channels = 64; // G_b
  int scale = 2;
  Upsampler upsampler = Upsampler::deconv;
  bool cm = true;
  bool lra = true;
  bool gfb = true;
  int in_channels = 1;

  static ModelConfig full() { return {}; }

  static ModelConfig toy() {
    ModelConfig c;
    c.blocks = 2;
    c.layers = 2;
    c.growth = 4;
    c.base_channels = 8;
    return c;
  }

  // Non-local blocks split channels in half; a single channel is kept as is.
  static int nonlocal_width(int channels) { return channels == 1 ? 1 : channels / 2; }

  void validate() const {
    if (blocks < 1 || layers < 1 || growth < 1 || base_channels < 1 || in_channels < 1)
      throw ConfigError("model config: P, D, G, G_b and in_channels must be >= 1");
    if (scale < 2 || scale > 4) throw ConfigError("model config: scale must be 2, 3 or 4");
    if (upsampler == Upsampler::deconv && scale == 3)
      throw ConfigError("model config: deconv upsampler supports scale 2 or 4 only");
    if (base_channels > 1 && base_channels % 2 != 0)
      throw ConfigError("model config: G_b must be 1 or even (non-local block halves it)");
  }

  std::string toggles() const {
    return std::string("CM") + (cm ? '1' : '0') + "LRA" + (lra ? '1' : '0') + "GFB" +
           (gfb ? '1' : '0');
  }

  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct ConvLayer {
  Parameter<T> weight;  // (c_out, c_in, k, k)
  Parameter<T> bias;    // (1, c_out, 1, 1)
  int stride = 1;
  int pad = 0;
  bool transposed = false;

  ConvLayer() = default;
  ConvLayer(const std::string& name, int c_in, int c_out, int k, int stride_ = 1,
            int pad_ = -1, bool transposed_ = false)
      : weight(name + ".weight", Shape{c_out, c_in, k, k}),
        bias(name + ".bias", Shape{1, c_out, 1, 1}),
        stride(stride_),
        pad(pad_ < 0 ? (k - 1) / 2 : pad_),
        transposed(transposed_) {}

  int c_in() const { return weight.value.c(); }
  int c_out() const { return weight.value.n(); }
  int k() const { return weight.value.h(); }
};

template <typename T>
struct NonLocalBlock {
  ConvLayer<T> theta, phi, g, out;

  NonLocalBlock() = default;
  NonLocalBlock(const std::string& name, int channels) {
    if (channels > 1 && channels % 2 != 0)
      throw ShapeError("non-local block needs an even channel count, got " + std::to_string(channels));
    const int inner = ModelConfig::nonlocal_width(channels);
    theta = ConvLayer<T>(name + ".theta", channels, inner, 1);
    phi = ConvLayer<T>(name + ".phi", channels, inner, 1);
    g = ConvLayer<T>(name + ".g", channels, inner, 1);
    out = ConvLayer<T>(name + ".out", inner, channels, 1);
  }
};

template <typename T>
struct DenseBlock {
  std::vector<ConvLayer<T>> layers;
  ConvLayer<T> fuse;       // LFB 1x1
  NonLocalBlock<T> gate;   // used when LRA is on
};

// Executor over concrete tensors. Values are released as soon as the graph
// no longer needs them, so MemoryProbe sees the true activation footprint.
template <typename T>
struct EagerOps {
  using Value = Tensor<T>;

  Shape shape(const Value& v) const { return v.shape(); }
  Value conv(const Value& x, const ConvLayer<T>& l) {
    return l.transposed
               ? conv_transpose2d(x, l.weight.value, l.bias.value, l.stride, l.pad)
               : conv2d(x, l.weight.value, l.bias.value, l.pad, l.stride);
  }
  Value shuffle(const Value& x, int s) { return pixel_shuffle(x, s); }
  Value relu(Value x) { relu_inplace(x); return x; }
  Value sigmoid(Value x) { sigmoid_inplace(x); return x; }
  Value add(Value a, const Value& b) { add_inplace(a, b); return a; }
  Value mul(Value a, const Value& b) { mul_inplace(a, b); return a; }
  Value concat(const std::vector<const Value*>& parts) {
    return concat_channels<T>(std::span<const Value* const>(parts));
  }
  Value attention(const Value& th, const Value& ph, const Value& g) {
    return orbitsr::attention(th, ph, g);
  }
  void release(Value& v) { v.reset(); }
};

// Executor recording onto an autodiff tape.
template <typename T>
struct TapeOps {
  using Value = Var;
  Graph<T>& graph;

  explicit TapeOps(Graph<T>& g) : graph(g) {}

  Shape shape(Value v) const { return graph.value(v).shape(); }
  Value conv(Value x, const ConvLayer<T>& l) {
    const Var k = graph.param(l.weight);
    const Var b = graph.param(l.bias);
    return l.transposed ? ad::conv_transpose2d(graph, x, k, b, l.stride, l.pad)
                        : ad::conv2d(graph, x, k, b, l.pad, l.stride);
  }
  Value shuffle(Value x, int s) { return ad::pixel_shuffle(graph, x, s); }
  Value relu(Value x) { return ad::relu(graph, x); }
  Value sigmoid(Value x) { return ad::sigmoid(graph, x); }
  Value add(Value a, Value b) { return ad::add(graph, a, b); }
  Value mul(Value a, Value b) { return ad::mul(graph, a, b); }
  Value concat(const std::vector<const Value*>& parts) {
    std::vector<Var> vars;
    for (const auto* p : parts) vars.push_back(*p);
    return ad::concat_channels(graph, vars);
  }
  Value attention(Value th, Value ph, Value g) { return ad::attention(graph, th, ph, g); }
  void release(Value&) {}
};

template <typename T>
class Model {
 public:
  Model() = default;

  // Builds the layer registry for config; weights are He-normal (std
  // sqrt(2 / fan_in)) drawn from seed, biases zero.
  static Model build(const ModelConfig& config, std::uint64_t seed) {
    Model m = skeleton(config);
    Rng rng(seed);
    for (auto* p : m.parameters()) {
      if (p->name.ends_with(".bias")) continue;
      const Shape s = p->value.shape();
      const double std = std::sqrt(2.0 / (static_cast<double>(s.c) * s.h * s.w));
      for (T& v : p->value.values()) v = static_cast<T>(std * rng.normal());
    }
    return m;
  }

  // All-zero weights with the registry of config.
  static Model skeleton(const ModelConfig& config) {
    config.validate();
    Model m;
    m.config_ = config;
    const int gb = config.base_channels;
    const int g = config.growth;
    m.sfe1_ = ConvLayer<T>("sfe1", config.in_channels, gb, 3);
    m.sfe2_ = ConvLayer<T>("sfe2", gb, gb, 3);
    for (int p = 0; p < config.blocks; ++p) {
      const std::string name = "block" + std::to_string(p + 1);
      DenseBlock<T> b;
      for (int d = 0; d < config.layers; ++d) {
        // Without CM only the first layer sees the block input.
        const int c_in = config.cm ? gb + d * g : (d == 0 ? gb : d * g);
        b.layers.emplace_back(name + ".conv" + std::to_string(d + 1), c_in, g, 3);
      }
      const int fuse_in = config.cm ? gb + config.layers * g : config.layers * g;
      b.fuse = ConvLayer<T>(name + ".lfb", fuse_in, gb, 1);
      if (config.lra) b.gate = NonLocalBlock<T>(name + ".nlb", gb);
      m.blocks_.push_back(std::move(b));
    }
    if (config.gfb) {
      m.gfb_fuse_ = ConvLayer<T>("gfb.fuse", config.blocks * gb, gb, 1);
      m.gfb_conv_ = ConvLayer<T>("gfb.conv", gb, gb, 3);
    }
    m.gra_gate_ = NonLocalBlock<T>("gra.nlb", gb);
    m.gra_conv_ = ConvLayer<T>("gra.conv", gb, gb, 3);
    if (config.upsampler == Upsampler::deconv) {
      for (int s = config.scale; s > 1; s /= 2)
        m.up_.emplace_back("up.deconv" + std::to_string(m.up_.size() + 1), gb, gb, 4, 2, 1, true);
    } else {
      const int s = config.scale;
      m.up_.emplace_back("up.subpixel", gb, gb * s * s, 3);
    }
    m.out_ = ConvLayer<T>("out", gb, config.in_channels, 3);
    std::size_t id = 0;
    for (auto* p : m.parameters()) p->id = id++;
    return m;
  }

  const ModelConfig& config() const { return config_; }

  // Registry order: sfe1, sfe2, blocks (layers, lfb, nlb), gfb, gra, up, out.
  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    auto add = [&](ConvLayer<T>& l) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    };
    auto add_nl = [&](NonLocalBlock<T>& n) {
      add(n.theta);
      add(n.phi);
      add(n.g);
      add(n.out);
    };
    add(sfe1_);
    add(sfe2_);
    for (auto& b : blocks_) {
      for (auto& l : b.layers) add(l);
      add(b.fuse);
      if (config_.lra) add_nl(b.gate);
    }
    if (config_.gfb) {
      add(gfb_fuse_);
      add(gfb_conv_);
    }
    add_nl(gra_gate_);
    add(gra_conv_);
    for (auto& l : up_) add(l);
    add(out_);
    return out;
  }

  std::vector<const Parameter<T>*> parameters() const {
    auto ps = const_cast<Model*>(this)->parameters();
    return {ps.begin(), ps.end()};
  }

  Parameter<T>& parameter(const std::string& name) {
    for (auto* p : parameters())
      if (p->name == name) return *p;
    throw std::out_of_range("no parameter named " + name);
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto* p : parameters()) n += p->value.size();
    return n;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  // Copies tape gradients into Parameter::grad; unreached parameters get 0.
  void load_gradients(const GradientMap<T>& grads) {
    for (auto* p : parameters()) {
      if (auto it = grads.find(p->id); it != grads.end())
        p->grad = it->second;
      else
        p->zero_grad();
    }
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    EagerOps<T> ops;
    return forward(ops, x);
  }

  template <class Ops>
  typename Ops::Value forward(Ops& ops, const typename Ops::Value& x) const {
    using V = typename Ops::Value;
    if (ops.shape(x).c != config_.in_channels)
      throw ShapeError("model forward: expected " + std::to_string(config_.in_channels) +
                       " input channels, got " + std::to_string(ops.shape(x).c));
    V h_m1 = ops.conv(x, sfe1_);
    V cur = ops.conv(h_m1, sfe2_);
    std::vector<V> kept;
    kept.reserve(blocks_.size());
    for (std::size_t p = 0; p < blocks_.size(); ++p) {
      V next = block_forward(ops, blocks_[p], cur);
      if (config_.gfb && p > 0)
        kept.push_back(std::move(cur));
      else
        ops.release(cur);
      cur = std::move(next);
    }

    V h_gfb;
    if (config_.gfb) {
      std::vector<const V*> parts;
      for (const auto& k : kept) parts.push_back(&k);
      parts.push_back(&cur);
      V fused = conv_concat(ops, parts, gfb_fuse_);
      for (auto& k : kept) ops.release(k);
      ops.release(cur);
      h_gfb = ops.conv(fused, gfb_conv_);
      ops.release(fused);
    } else {
      h_gfb = std::move(cur);
    }

    V up = gra_forward(ops, h_m1, std::move(h_gfb));
    ops.release(h_m1);

    if (config_.upsampler == Upsampler::deconv) {
      for (const auto& stage : up_) {
        V next = ops.conv(up, stage);
        ops.release(up);
        up = std::move(next);
      }
    } else {
      V wide = ops.conv(up, up_.front());
      ops.release(up);
      up = ops.shuffle(wide, config_.scale);
      ops.release(wide);
    }
    V out = ops.conv(up, out_);
    ops.release(up);
    return out;
  }

  // One residual dense block; exposed for testing.
  template <class Ops>
  typename Ops::Value block_forward(Ops& ops, const DenseBlock<T>& b,
                                    const typename Ops::Value& in) const {
    using V = typename Ops::Value;
    std::vector<V> outs;
    outs.reserve(b.layers.size());
    for (std::size_t d = 0; d < b.layers.size(); ++d) {
      std::vector<const V*> parts;
      if (config_.cm || d == 0) parts.push_back(&in);
      for (const auto& o : outs) parts.push_back(&o);
      outs.push_back(ops.relu(conv_concat(ops, parts, b.layers[d])));
    }
    std::vector<const V*> parts;
    if (config_.cm) parts.push_back(&in);
    for (const auto& o : outs) parts.push_back(&o);
    V lf = conv_concat(ops, parts, b.fuse);
    for (auto& o : outs) ops.release(o);
    V lr = ops.add(std::move(lf), in);
    if (!config_.lra) return lr;
    V gate = ops.sigmoid(nonlocal(ops, b.gate, in));
    lr = ops.mul(std::move(lr), gate);
    ops.release(gate);
    return lr;
  }

  // Global residual attention: Conv3x3((H_GFB + H_-1) * sigmoid(NLB(H_-1))).
  template <class Ops>
  typename Ops::Value gra_forward(Ops& ops, const typename Ops::Value& h_m1,
                                  typename Ops::Value h_gfb) const {
    using V = typename Ops::Value;
    V t = ops.add(std::move(h_gfb), h_m1);
    V gate = ops.sigmoid(nonlocal(ops, gra_gate_, h_m1));
    t = ops.mul(std::move(t), gate);
    ops.release(gate);
    V out = ops.conv(t, gra_conv_);
    ops.release(t);
    return out;
  }

  // theta/phi/g 1x1 projections, attention over positions, 1x1 back to the
  // input width, plus the input.
  template <class Ops>
  typename Ops::Value nonlocal(Ops& ops, const NonLocalBlock<T>& nl,
                               const typename Ops::Value& x) const {
    using V = typename Ops::Value;
    V th = ops.conv(x, nl.theta);
    V ph = ops.conv(x, nl.phi);
    V g = ops.conv(x, nl.g);
    V y = ops.attention(th, ph, g);
    ops.release(th);
    ops.release(ph);
    ops.release(g);
    V z = ops.conv(y, nl.out);
    ops.release(y);
    return ops.add(std::move(z), x);
  }

  const ConvLayer<T>& sfe1() const { return sfe1_; }
  const ConvLayer<T>& sfe2() const { return sfe2_; }
  const std::vector<DenseBlock<T>>& blocks() const { return blocks_; }
  std::vector<DenseBlock<T>>& blocks() { return blocks_; }
  const NonLocalBlock<T>& gra_gate() const { return gra_gate_; }
  NonLocalBlock<T>& gra_gate() { return gra_gate_; }
  const ConvLayer<T>& gra_conv() const { return gra_conv_; }
  const std::vector<ConvLayer<T>>& upsampler() const { return up_; }
  const ConvLayer<T>& output_conv() const { return out_; }

 private:
  template <class Ops>
  static typename Ops::Value conv_concat(Ops& ops,
                                         const std::vector<const typename Ops::Value*>& parts,
                                         const ConvLayer<T>& layer) {
    if (parts.size() == 1) return ops.conv(*parts.front(), layer);
    auto cat = ops.concat(parts);
    auto out = ops.conv(cat, layer);
    ops.release(cat);
    return out;
  }

  ModelConfig config_;
  ConvLayer<T> sfe1_, sfe2_;
  std::vector<DenseBlock<T>> blocks_;
  ConvLayer<T> gfb_fuse_, gfb_conv_;
  NonLocalBlock<T> gra_gate_;
  ConvLayer<T> gra_conv_;
  std::vector<ConvLayer<T>> up_;
  ConvLayer<T> out_;
};

inline std::size_t param_count(const ModelConfig& config) {
  return Model<float>::skeleton(config).param_count();
}

// k-th element of the dihedral group: horizontal flip when k >= 4, then
// (k % 4) counter-clockwise quarter turns.
template <typename T>
Tensor<T> dihedral(const Tensor<T>& x, int k) {
  Tensor<T> cur = x;
  if (k >= 4) {
    Tensor<T> f(cur.shape());
    for (int n = 0; n < cur.n(); ++n)
      for (int c = 0; c < cur.c(); ++c)
        for (int y = 0; y < cur.h(); ++y)
          for (int xx = 0; xx < cur.w(); ++xx) f(n, c, y, xx) = cur(n, c, y, cur.w() - 1 - xx);
    cur = std::move(f);
  }
  for (int r = 0; r < k % 4; ++r) {
    Tensor<T> t(cur.n(), cur.c(), cur.w(), cur.h());
    for (int n = 0; n < cur.n(); ++n)
      for (int c = 0; c < cur.c(); ++c)
        for (int y = 0; y < cur.h(); ++y)
          for (int xx = 0; xx < cur.w(); ++xx) t(n, c, cur.w() - 1 - xx, y) = cur(n, c, y, xx);
    cur = std::move(t);
  }
  return cur;
}

template <typename T>
Tensor<T> dihedral_inverse(const Tensor<T>& x, int k) {
  Tensor<T> cur = x;
  for (int r = 0; r < (4 - k % 4) % 4; ++r) cur = dihedral(cur, 1);
  if (k >= 4) cur = dihedral(cur, 4);
  return cur;
}

// Mean of the 8 dihedral-transformed predictions, each mapped back.
template <typename T>
Tensor<T> self_ensemble_forward(const Model<T>& model, const Tensor<T>& x) {
  Tensor<T> acc;
  for (int k = 0; k < 8; ++k) {
    Tensor<T> y = dihedral_inverse(model.forward(dihedral(x, k)), k);
    if (acc.empty())
      acc = std::move(y);
    else
      add_inplace(acc, y);
  }
  for (T& v : acc.values()) v /= T(8);
  return acc;
}

}  // namespace orbitsr
