#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "orbitsr/autodiff.hpp"

namespace orbitsr {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  long t = 0;
};

// One bias-corrected Adam update of every parameter from Parameter::grad.
template <typename T>
void adam_step(std::span<Parameter<T>* const> params, AdamState<T>& state,
               const AdamOptions& opt = {}) {
  if (opt.lr < 0.0) throw std::invalid_argument("adam_step: negative learning rate");
  if (state.m.empty()) {
    for (auto* p : params) {
      state.m.emplace_back(p->value.shape());
      state.v.emplace_back(p->value.shape());
    }
  }
  if (state.m.size() != params.size())
    throw std::invalid_argument("adam_step: state does not match parameter list");
  state.t += 1;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto* p = params[k];
    require_same_shape(p->value.shape(), p->grad.shape(), "adam_step");
    require_same_shape(p->value.shape(), state.m[k].shape(), "adam_step");
    auto w = p->value.values();
    auto g = p->grad.values();
    auto m = state.m[k].values();
    auto v = state.v[k].values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = opt.beta1 * static_cast<double>(m[i]) + (1.0 - opt.beta1) * gi;
      const double vi = opt.beta2 * static_cast<double>(v[i]) + (1.0 - opt.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double step = opt.lr * (mi / c1) / (std::sqrt(vi / c2) + opt.eps);
      w[i] = static_cast<T>(static_cast<double>(w[i]) - step);
    }
  }
}

}  // namespace orbitsr
