#pragma once

// Desk-scale training on synthetic pairs: L1 or mask-PSNR objective, Adam,
// random aligned LR/HR crops.

#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "orbitsr/dataio.hpp"
#include "orbitsr/metrics.hpp"
#include "orbitsr/model.hpp"
#include "orbitsr/optim.hpp"
#include "orbitsr/pipeline.hpp"
#include "orbitsr/tiling.hpp"

namespace orbitsr {

enum class LossKind { l1, mask_psnr };

inline const char* to_string(LossKind k) { return k == LossKind::l1 ? "l1" : "mask_psnr"; }

inline LossKind parse_loss(const std::string& s) {
  if (s == "l1") return LossKind::l1;
  if (s == "mask_psnr") return LossKind::mask_psnr;
  throw std::invalid_argument("unknown loss: " + s + " (expected l1 or mask_psnr)");
}

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, int step_) : std::runtime_error(what), step(step_) {}
  int step;
};

struct TrainConfig {
  int steps = 100;
  double lr = 1e-4;
  LossKind loss = LossKind::l1;
  int mask_k = 54;      // flat-region side on the HR grid
  int batch = 1;
  std::uint64_t seed = 0;
  int crop = 24;        // LR crop side; 0 trains on whole images

  void validate() const {
    if (steps < 1) throw std::invalid_argument("train: steps must be >= 1");
    if (!(lr >= 0.0)) throw std::invalid_argument("train: lr must be >= 0");
    if (batch < 1) throw std::invalid_argument("train: batch must be >= 1");
    if (crop < 0) throw std::invalid_argument("train: crop must be >= 0");
    if (loss == LossKind::mask_psnr && mask_k < 1) throw std::invalid_argument("train: mask k must be >= 1");
  }
};

// Intensities scaled to [0, 1].
struct TrainPair {
  Tensor<float> hr;
  Tensor<float> lr;
};

inline std::vector<TrainPair> to_train_pairs(const std::vector<ImagePair>& pairs) {
  std::vector<TrainPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back({to_tensor<float>(p.hr, true), to_tensor<float>(p.lr, true)});
  return out;
}

struct StepRecord {
  int step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
};

struct TrainHistory {
  std::vector<StepRecord> steps;
  double final_psnr = 0.0;  // mean over the training pairs, whole-image forward

  static std::string csv_header() { return "step,loss,grad_norm"; }
  std::string to_csv() const {
    std::ostringstream os;
    os << csv_header() << "\n" << std::setprecision(9);
    for (const auto& s : steps) os << s.step << ',' << s.loss << ',' << s.grad_norm << "\n";
    return os.str();
  }
};

// Mean whole-image PSNR (peak 1) of the model over pairs.
inline double mean_psnr(const Model<float>& model, const std::vector<TrainPair>& pairs) {
  if (pairs.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& p : pairs) {
    auto sr = model.forward(p.lr);
    for (float& v : sr.values()) v = std::clamp(v, 0.0f, 1.0f);
    acc += psnr(sr, p.hr, 1.0);
  }
  return acc / static_cast<double>(pairs.size());
}

namespace detail {

// (batch, 1, c, c) LR crops and the aligned (batch, 1, c*s, c*s) HR crops.
inline std::pair<Tensor<float>, Tensor<float>> sample_batch(const std::vector<TrainPair>& data,
                                                            int batch, int crop, int scale, Rng& rng) {
  const auto& first = data.front().lr;
  const int ch = crop > 0 ? crop : first.h();
  const int cw = crop > 0 ? crop : first.w();
  Tensor<float> lr(batch, 1, ch, cw);
  Tensor<float> hr(batch, 1, ch * scale, cw * scale);
  for (int b = 0; b < batch; ++b) {
    const auto& p = data[rng.below(data.size())];
    if (p.lr.h() < ch || p.lr.w() < cw || p.hr.h() != p.lr.h() * scale || p.hr.w() != p.lr.w() * scale)
      throw ShapeError("train: pair " + p.lr.shape().str() + "/" + p.hr.shape().str() +
                       " does not fit crop and scale");
    const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(p.lr.h() - ch + 1)));
    const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(p.lr.w() - cw + 1)));
    for (int y = 0; y < ch; ++y)
      for (int x = 0; x < cw; ++x) lr(b, 0, y, x) = p.lr(0, 0, y0 + y, x0 + x);
    for (int y = 0; y < ch * scale; ++y)
      for (int x = 0; x < cw * scale; ++x) hr(b, 0, y, x) = p.hr(0, 0, y0 * scale + y, x0 * scale + x);
  }
  return {std::move(lr), std::move(hr)};
}

}  // namespace detail

// Trains model in place. The minimized objective is the L1 loss or the
// negated mask-PSNR (peak 1). Throws TrainingError on a non-finite loss.
inline TrainHistory train_toy(Model<float>& model, const std::vector<TrainPair>& data,
                              const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  const int scale = model.config().scale;
  Rng rng(cfg.seed);
  AdamState<float> adam;
  AdamOptions opt;
  opt.lr = cfg.lr;
  auto params = model.parameters();
  TrainHistory hist;
  Tensor<float> mask;
  for (int step = 0; step < cfg.steps; ++step) {
    auto [lr, hr] = detail::sample_batch(data, cfg.batch, cfg.crop, scale, rng);
    Graph<float> g;
    TapeOps<float> ops(g);
    const Var x = g.constant(std::move(lr));
    const Var y = model.forward(ops, x);
    Var loss;
    if (cfg.loss == LossKind::l1) {
      loss = ad::l1_loss(g, y, hr);
    } else {
      if (mask.empty() || mask.h() != hr.h()) mask = make_mask(hr.h(), cfg.mask_k).tensor<float>();
      loss = ad::scale(g, ad::mask_psnr(g, y, hr, mask, 1.0f), -1.0f);
    }
    const double value = g.value(loss)[0];
    if (!std::isfinite(value))
      throw TrainingError("train: non-finite loss at step " + std::to_string(step), step);
    model.load_gradients(g.backward(loss));
    double sq = 0.0;
    for (const auto* p : params)
      for (float v : p->grad.values()) sq += static_cast<double>(v) * v;
    hist.steps.push_back({step, value, std::sqrt(sq)});
    adam_step<float>(params, adam, opt);
  }
  hist.final_psnr = mean_psnr(model, data);
  return hist;
}

// Largest relative error between backpropagated and central-difference
// gradients of the full model at 64-bit, on a random side x side input.
// Up to max_coords entries of every parameter are probed.
inline double model_gradcheck(const ModelConfig& config, LossKind loss, double eps = 1e-5,
                              std::uint64_t seed = 0, int side = 8, std::size_t max_coords = 8) {
  auto model = Model<double>::build(config, seed);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  Tensor<double> x(1, config.in_channels, side, side);
  for (double& v : x.values()) v = rng.uniform();
  const int hr_side = side * config.scale;
  Tensor<double> hr(1, config.in_channels, hr_side, hr_side);
  for (double& v : hr.values()) v = rng.uniform();
  const auto mask = make_mask(hr_side, std::max(1, hr_side / 2)).tensor<double>();
  auto build = [&](Graph<double>& g) {
    TapeOps<double> ops(g);
    const Var y = model.forward(ops, g.constant(x));
    return loss == LossKind::l1 ? ad::l1_loss(g, y, hr) : ad::mask_psnr(g, y, hr, mask, 1.0);
  };
  {
    Graph<double> g;
    const Var l = build(g);
    model.load_gradients(g.backward(l));
  }
  std::function<double()> f = [&] {
    Graph<double> g;
    return g.value(build(g))[0];
  };
  auto params = model.parameters();
  const double floor = fd_noise_floor(f(), eps);
  return finite_diff_check<double>(f, std::span<Parameter<double>* const>(params), eps, max_coords, seed,
                                   floor);
}

struct AblationRow {
  ModelConfig config;
  std::size_t params = 0;
  double final_loss = 0.0;
  double heldout_psnr = 0.0;
};

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "config,cm,lra,gfb,params,final_loss,heldout_psnr\n" << std::setprecision(9);
  for (const auto& r : rows)
    os << r.config.toggles() << ',' << r.config.cm << ',' << r.config.lra << ',' << r.config.gfb << ','
       << r.params << ',' << r.final_loss << ',' << r.heldout_psnr << "\n";
  return os.str();
}

// Every config trained from the same seed on the same data, then scored on
// held-out pairs.
inline std::vector<AblationRow> ablate(const std::vector<ModelConfig>& configs,
                                       const std::vector<TrainPair>& train,
                                       const std::vector<TrainPair>& heldout, const TrainConfig& cfg,
                                       std::uint64_t model_seed, int jobs = 1) {
  if (configs.size() < 2) throw std::invalid_argument("ablate: need at least two configs");
  std::vector<AblationRow> rows(configs.size());
  parallel_for(configs.size(), jobs, [&](std::size_t i) {
    auto model = Model<float>::build(configs[i], model_seed);
    const auto hist = train_toy(model, train, cfg);
    rows[i] = {configs[i], model.param_count(), hist.steps.back().loss, mean_psnr(model, heldout)};
  });
  return rows;
}

// The 2^k lattice over the named toggles (subset of cm, lra, gfb); toggles
// not named stay as in base. Ordered from all-off to all-on.
inline std::vector<ModelConfig> toggle_lattice(const ModelConfig& base, const std::vector<std::string>& names) {
  for (const auto& n : names)
    if (n != "cm" && n != "lra" && n != "gfb") throw std::invalid_argument("unknown toggle: " + n);
  std::vector<ModelConfig> out;
  const std::size_t combos = std::size_t{1} << names.size();
  for (std::size_t mask = 0; mask < combos; ++mask) {
    ModelConfig c = base;
    for (std::size_t b = 0; b < names.size(); ++b) {
      const bool on = (mask >> (names.size() - 1 - b)) & 1;
      if (names[b] == "cm") c.cm = on;
      if (names[b] == "lra") c.lra = on;
      if (names[b] == "gfb") c.gfb = on;
    }
    out.push_back(c);
  }
  return out;
}

}  // namespace orbitsr
