#pragma once

// Reverse-mode differentiation over the tensor kernels.
//
// A Graph is a tape: nodes are appended in evaluation order, so node ids are
// a topological order and cycles cannot be expressed. backward() walks the
// tape once in reverse, summing gradients where a value fans out.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "orbitsr/kernels.hpp"

namespace orbitsr {

template <typename T>
struct Parameter {
  std::string name;
  std::size_t id = 0;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Shape s) : name(std::move(n)), value(s), grad(s) {}

  void zero_grad() { grad.fill(T(0)); }
};

// Gradients keyed by Parameter::id.
template <typename T>
using GradientMap = std::map<std::size_t, Tensor<T>>;

struct Var {
  int id = -1;
};

template <typename T>
class Graph {
 public:
  // self is the node being differentiated; its value is the cached output.
  using Backward = std::function<void(Graph&, Var self, const Tensor<T>& gout)>;

  Var constant(Tensor<T> v) { return push(std::move(v), {}, nullptr, false); }
  Var input(Tensor<T> v) { return push(std::move(v), {}, nullptr, true); }

  // Leaf bound to a parameter; binding the same parameter twice returns the
  // same node so its gradient is accumulated once.
  Var param(const Parameter<T>& p) {
    if (auto it = bound_.find(&p); it != bound_.end()) return Var{it->second};
    Var v = push(p.value, {}, nullptr, true);
    nodes_[static_cast<std::size_t>(v.id)].param = &p;
    bound_.emplace(&p, v.id);
    return v;
  }

  Var push(Tensor<T> value, std::vector<int> inputs, Backward fn, bool requires_grad) {
    for (int i : inputs) requires_grad = requires_grad || node(i).requires_grad;
    nodes_.push_back(Node{std::move(value), {}, std::move(inputs), std::move(fn), nullptr,
                          requires_grad});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  const Tensor<T>& value(Var v) const { return node(v.id).value; }
  bool requires_grad(Var v) const { return node(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient accumulator of a node, zero-initialized on first access.
  Tensor<T>& accum(int id) {
    auto& n = node(id);
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  // Gradient of the last backward() with respect to v (zeros if unreached).
  Tensor<T> grad(Var v) const {
    const auto& n = node(v.id);
    return n.grad.empty() ? Tensor<T>(n.value.shape()) : n.grad;
  }

  GradientMap<T> backward(Var loss) {
    if (value(loss).size() != 1) throw std::invalid_argument("backward: loss must be scalar");
    for (auto& n : nodes_) n.grad.reset();
    accum(loss.id).fill(T(1));
    for (int id = loss.id; id >= 0; --id) {
      auto& n = node(id);
      if (n.grad.empty() || !n.requires_grad || !n.backward) continue;
      n.backward(*this, Var{id}, n.grad);
    }
    GradientMap<T> out;
    for (auto& n : nodes_) {
      if (!n.param) continue;
      out[n.param->id] = n.grad.empty() ? Tensor<T>(n.value.shape()) : n.grad;
    }
    return out;
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<int> inputs;
    Backward backward;
    const Parameter<T>* param;
    bool requires_grad;
  };

  Node& node(int id) { return nodes_.at(static_cast<std::size_t>(id)); }
  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, int> bound_;
};

namespace ad {

template <typename T>
Var conv2d(Graph<T>& g, Var x, Var kernel, Var bias, int pad, int stride = 1) {
  auto out = orbitsr::conv2d(g.value(x), g.value(kernel), g.value(bias), pad, stride);
  return g.push(std::move(out), {x.id, kernel.id, bias.id},
                [=](Graph<T>& gr, Var, const Tensor<T>& gout) {
                  Tensor<T>* gx = gr.requires_grad(x) ? &gr.accum(x.id) : nullptr;
                  Tensor<T>* gk = gr.requires_grad(kernel) ? &gr.accum(kernel.id) : nullptr;
                  Tensor<T>* gb = gr.requires_grad(bias) ? &gr.accum(bias.id) : nullptr;
                  conv2d_backward(gr.value(x), gr.value(kernel), pad, stride, gout, gx, gk, gb);
                },
                false);
}

template <typename T>
Var conv_transpose2d(Graph<T>& g, Var x, Var kernel, Var bias, int stride, int pad) {
  auto out = orbitsr::conv_transpose2d(g.value(x), g.value(kernel), g.value(bias), stride, pad);
  return g.push(std::move(out), {x.id, kernel.id, bias.id},
                [=](Graph<T>& gr, Var, const Tensor<T>& gout) {
                  Tensor<T>* gx = gr.requires_grad(x) ? &gr.accum(x.id) : nullptr;
                  Tensor<T>* gk = gr.requires_grad(kernel) ? &gr.accum(kernel.id) : nullptr;
                  Tensor<T>* gb = gr.requires_grad(bias) ? &gr.accum(bias.id) : nullptr;
                  conv_transpose2d_backward(gr.value(x), gr.value(kernel), stride, pad, gout, gx,
                                            gk, gb);
                },
                false);
}

template <typename T>
Var pixel_shuffle(Graph<T>& g, Var x, int s) {
  return g.push(orbitsr::pixel_shuffle(g.value(x), s), {x.id},
                [=](Graph<T>& gr, Var, const Tensor<T>& gout) {
                  add_inplace(gr.accum(x.id), pixel_unshuffle(gout, s));
                },
                false);
}

// Subgradient at 0 is taken as 0.
template <typename T>
Var relu(Graph<T>& g, Var x) {
  return g.push(orbitsr::relu(g.value(x)), {x.id},
                [=](Graph<T>& gr, Var self, const Tensor<T>& gout) {
                  auto y = gr.value(self).values();
                  auto gi = gr.accum(x.id).values();
                  auto go = gout.values();
                  for (std::size_t i = 0; i < gi.size(); ++i)
                    if (y[i] > T(0)) gi[i] += go[i];
                },
                false);
}

template <typename T>
Var sigmoid(Graph<T>& g, Var x) {
  return g.push(orbitsr::sigmoid(g.value(x)), {x.id},
                [=](Graph<T>& gr, Var self, const Tensor<T>& gout) {
                  auto y = gr.value(self).values();
                  auto gi = gr.accum(x.id).values();
                  auto go = gout.values();
                  for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[i] * y[i] * (T(1) - y[i]);
                },
                false);
}

template <typename T>
Var add(Graph<T>& g, Var a, Var b) {
  return g.push(ew_add(g.value(a), g.value(b)), {a.id, b.id},
                [=](Graph<T>& gr, Var, const Tensor<T>& gout) {
                  if (gr.requires_grad(a)) add_inplace(gr.accum(a.id), gout);
                  if (gr.requires_grad(b)) add_inplace(gr.accum(b.id), gout);
                },
                false);
}

template <typename T>
Var mul(Graph<T>& g, Var a, Var b) {
  return g.push(ew_mul(g.value(a), g.value(b)), {a.id, b.id},
                [=](Graph<T>& gr, Var, const Tensor<T>& gout) {
                  auto go = gout.values();
                  if (gr.requires_grad(a)) {
                    auto ga = gr.accum(a.id).values();
                    auto bv = gr.value(b).values();
                    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * bv[i];
                  }
                  if (gr.requires_grad(b)) {
                    auto gb = gr.accum(b.id).values();
                    auto av = gr.value(a).values();
                    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[i] * av[i];
                  }
                },
                false);
}

template <typename T>
Var concat_channels(Graph<T>& g, const std::vector<Var>& parts) {
  std::vector<const Tensor<T>*> values;
  std::vector<int> ids;
  for (Var v : parts) {
    values.push_back(&g.value(v));
    ids.push_back(v.id);
  }
  auto out = orbitsr::concat_channels<T>(std::span<const Tensor<T>* const>(values));
  return g.push(std::move(out), ids,
                [parts](Graph<T>& gr, Var, const Tensor<T>& gout) {
                  int begin = 0;
                  for (Var v : parts) {
                    const int c = gr.value(v).c();
                    if (gr.requires_grad(v)) add_inplace(gr.accum(v.id), slice_channels(gout, begin, c));
                    begin += c;
                  }
                },
                false);
}

template <typename T>
Var attention(Graph<T>& g, Var theta, Var phi, Var gval) {
  auto cache = std::make_shared<std::vector<Tensor<T>>>();
  auto out = orbitsr::attention(g.value(theta), g.value(phi), g.value(gval), cache.get());
  return g.push(std::move(out), {theta.id, phi.id, gval.id},
                [=](Graph<T>& gr, Var, const Tensor<T>& gout) {
                  // Inputs of attention are always conv outputs; allocate all three.
                  attention_backward(gr.value(theta), gr.value(phi), gr.value(gval), *cache, gout,
                                     gr.accum(theta.id), gr.accum(phi.id), gr.accum(gval.id));
                },
                false);
}

template <typename T>
Var sum(Graph<T>& g, Var x) {
  T acc = 0;
  for (T v : g.value(x).values()) acc += v;
  return g.push(Tensor<T>(Shape{1, 1, 1, 1}, acc), {x.id},
                [=](Graph<T>& gr, Var, const Tensor<T>& gout) {
                  const T d = gout[0];
                  for (T& v : gr.accum(x.id).values()) v += d;
                },
                false);
}

template <typename T>
Var scale(Graph<T>& g, Var x, T factor) {
  auto out = g.value(x);
  for (T& v : out.values()) v *= factor;
  return g.push(std::move(out), {x.id},
                [=](Graph<T>& gr, Var, const Tensor<T>& gout) {
                  auto gi = gr.accum(x.id).values();
                  auto go = gout.values();
                  for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += factor * go[i];
                },
                false);
}

// Mean absolute difference against a fixed target.
template <typename T>
Var l1_loss(Graph<T>& g, Var sr, const Tensor<T>& hr) {
  require_same_shape(g.value(sr).shape(), hr.shape(), "l1_loss");
  auto s = g.value(sr).values();
  auto h = hr.values();
  T acc = 0;
  for (std::size_t i = 0; i < s.size(); ++i) acc += std::abs(s[i] - h[i]);
  const T inv = T(1) / static_cast<T>(s.size());
  auto target = std::make_shared<Tensor<T>>(hr);
  return g.push(Tensor<T>(Shape{1, 1, 1, 1}, acc * inv), {sr.id},
                [=](Graph<T>& gr, Var, const Tensor<T>& gout) {
                  auto sv = gr.value(sr).values();
                  auto hv = target->values();
                  auto gi = gr.accum(sr.id).values();
                  const T d = gout[0] * inv;
                  for (std::size_t i = 0; i < gi.size(); ++i) {
                    const T diff = sv[i] - hv[i];
                    gi[i] += diff > T(0) ? d : (diff < T(0) ? -d : T(0));
                  }
                },
                false);
}

// Batch-mean mask-PSNR in dB. Each (n, c) plane is an N x N patch weighted
// by mask (1, 1, N, N):  10 log10(N^2 imax^2 / sum M (hr - sr)^2).
template <typename T>
Var mask_psnr(Graph<T>& g, Var sr, const Tensor<T>& hr, const Tensor<T>& mask, T i_max) {
  const Tensor<T>& s = g.value(sr);
  require_same_shape(s.shape(), hr.shape(), "mask_psnr");
  if (mask.h() != s.h() || mask.w() != s.w() || mask.size() != static_cast<std::size_t>(s.h()) * s.w())
    throw ShapeError("mask_psnr: mask does not match patch size");
  const int planes = s.n() * s.c();
  const T N2 = static_cast<T>(s.h()) * static_cast<T>(s.w());
  auto sums = std::make_shared<std::vector<T>>(static_cast<std::size_t>(planes), T(0));
  auto m = mask.values();
  T total = 0;
  for (int n = 0; n < s.n(); ++n)
    for (int c = 0; c < s.c(); ++c) {
      auto sv = s.plane(n, c);
      auto hv = hr.plane(n, c);
      T acc = 0;
      for (std::size_t i = 0; i < sv.size(); ++i) {
        const T d = hv[i] - sv[i];
        acc += m[i] * d * d;
      }
      (*sums)[static_cast<std::size_t>(n * s.c() + c)] = acc;
      total += T(10) * std::log10(N2 * i_max * i_max / acc);
    }
  auto target = std::make_shared<Tensor<T>>(hr);
  auto weights = std::make_shared<Tensor<T>>(mask);
  return g.push(Tensor<T>(Shape{1, 1, 1, 1}, total / static_cast<T>(planes)), {sr.id},
                [=](Graph<T>& gr, Var, const Tensor<T>& gout) {
                  const Tensor<T>& sv_t = gr.value(sr);
                  Tensor<T>& gi_t = gr.accum(sr.id);
                  auto mv = weights->values();
                  const T ln10 = std::log(T(10));
                  for (int n = 0; n < sv_t.n(); ++n)
                    for (int c = 0; c < sv_t.c(); ++c) {
                      const T S = (*sums)[static_cast<std::size_t>(n * sv_t.c() + c)];
                      // d/dsr of -10 log10(S) / planes, with dS/dsr = -2 M (hr - sr)
                      const T k = gout[0] * T(10) / (ln10 * S * static_cast<T>(planes));
                      auto sv = sv_t.plane(n, c);
                      auto hv = target->plane(n, c);
                      auto gi = gi_t.plane(n, c);
                      for (std::size_t i = 0; i < sv.size(); ++i)
                        gi[i] += k * T(2) * mv[i] * (hv[i] - sv[i]);
                    }
                },
                false);
}

}  // namespace ad

// Largest relative error between Parameter::grad (analytic) and a central
// difference of f over sampled coordinates:
//   |a - cd| / max(|a|, |cd|, floor)
// Up to max_coords coordinates per parameter are checked (all when the
// parameter is smaller).
template <typename T>
double finite_diff_check(const std::function<T()>& f, std::span<Parameter<T>* const> params,
                         T eps, std::size_t max_coords = 16, std::uint64_t seed = 0,
                         double floor = 1e-12) {
  if (!(eps > T(0))) throw std::invalid_argument("finite_diff_check: eps must be positive");
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (Parameter<T>* p : params) {
    const std::size_t size = p->value.size();
    std::vector<std::size_t> coords;
    if (size <= max_coords) {
      for (std::size_t i = 0; i < size; ++i) coords.push_back(i);
    } else {
      for (std::size_t i = 0; i < max_coords; ++i) coords.push_back(rng() % size);
    }
    for (std::size_t i : coords) {
      const T orig = p->value[i];
      p->value[i] = orig + eps;
      const T fp = f();
      p->value[i] = orig - eps;
      const T fm = f();
      p->value[i] = orig;
      if (!std::isfinite(static_cast<double>(fp)) || !std::isfinite(static_cast<double>(fm)))
        throw std::runtime_error("finite_diff_check: non-finite loss for " + p->name);
      const double cd = (static_cast<double>(fp) - static_cast<double>(fm)) / (2.0 * eps);
      const double a = static_cast<double>(p->grad[i]);
      const double denom = std::max({std::abs(a), std::abs(cd), floor});
      worst = std::max(worst, std::abs(a - cd) / denom);
    }
  }
  return worst;
}

// Denominator floor at which a central difference of a loss near f0 is
// resolvable to relative tolerance tol: below it the difference is rounding
// noise (about 16 ulp of f0 over 2 eps), so coordinates whose true
// gradient is zero are compared in absolute terms instead.
inline double fd_noise_floor(double f0, double eps, double tol = 1e-4) {
  const double noise = 16.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(f0)) / eps;
  return std::max(1e-12, noise / tol);
}

}  // namespace orbitsr
