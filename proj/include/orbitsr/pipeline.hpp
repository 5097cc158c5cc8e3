#pragma once

// Selective data transmission: super-resolve an acquired LR image, score the
// result with an inference stage and decide whether to downlink it.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "orbitsr/model.hpp"
#include "orbitsr/resources.hpp"
#include "orbitsr/tiling.hpp"

namespace orbitsr {

enum class SrMode { whole, nonoverlap, overlap };

inline const char* to_string(SrMode m) {
  switch (m) {
    case SrMode::whole: return "whole";
    case SrMode::nonoverlap: return "nonoverlap";
    case SrMode::overlap: return "overlap";
  }
  return "?";
}

inline SrMode parse_sr_mode(const std::string& s) {
  if (s == "whole") return SrMode::whole;
  if (s == "nonoverlap" || s == "patch-nonoverlap") return SrMode::nonoverlap;
  if (s == "overlap" || s == "patch-overlap") return SrMode::overlap;
  throw std::invalid_argument("unknown mode: " + s + " (expected whole, nonoverlap or overlap)");
}

enum class Verdict { transmit, discard };

inline const char* to_string(Verdict v) { return v == Verdict::transmit ? "transmit" : "discard"; }

struct ResourceLedger {
  std::uint64_t patch_count = 0;
  std::uint64_t peak_activation_bytes = 0;  // of one forward
  std::uint64_t total_macs = 0;             // over all forwards
  std::map<std::string, StageCost> stages;  // MACs summed over forwards

  // Merge of ledgers from independent workers; order does not matter.
  void merge(const ResourceLedger& o) {
    patch_count += o.patch_count;
    peak_activation_bytes = std::max(peak_activation_bytes, o.peak_activation_bytes);
    total_macs += o.total_macs;
    for (const auto& [name, c] : o.stages) {
      auto& s = stages[name];
      s.macs += c.macs;
      s.peak_bytes = std::max(s.peak_bytes, c.peak_bytes);
    }
  }
};

struct Decision {
  Verdict verdict = Verdict::discard;
  double score = 0.0;
  ResourceLedger resources;
};

inline Verdict decide(double score, double threshold) {
  return score >= threshold ? Verdict::transmit : Verdict::discard;
}

using InferenceFn = std::function<double(const Tensor<float>&)>;

// Placeholder scorers standing in for on-board detection.
inline InferenceFn constant_score(double value) {
  return [value](const Tensor<float>&) { return value; };
}

// E / (E + ref) with E the mean squared forward difference of the image
// (intensities in [0, 1]); textured scenes score high, flat ones low.
inline InferenceFn gradient_energy_score(double ref = 0.01) {
  return [ref](const Tensor<float>& img) {
    double acc = 0.0;
    std::size_t n = 0;
    for (int b = 0; b < img.n(); ++b)
      for (int c = 0; c < img.c(); ++c)
        for (int y = 0; y < img.h(); ++y)
          for (int x = 0; x < img.w(); ++x) {
            const double v = img(b, c, y, x);
            const double dx = x + 1 < img.w() ? img(b, c, y, x + 1) - v : 0.0;
            const double dy = y + 1 < img.h() ? img(b, c, y + 1, x) - v : 0.0;
            acc += dx * dx + dy * dy;
            ++n;
          }
    const double e = acc / static_cast<double>(n);
    return e / (e + ref);
  };
}

struct SrResult {
  Tensor<float> sr;
  ResourceLedger resources;
  TilePlan plan;  // empty grid in whole mode
};

// Runs fn(i) for i in [0, count) on `jobs` workers.
template <class Fn>
void parallel_for(std::size_t count, int jobs, Fn fn) {
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < count && !failed.load();) {
        try {
          fn(i);
        } catch (...) {
          if (!failed.exchange(true)) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// Super-resolves img (n, in_channels, h, w) whole or tile by tile. forward
// defaults to the model's plain forward; pass a self-ensemble wrapper etc.
inline SrResult super_resolve(const Model<float>& model, const Tensor<float>& img, SrMode mode,
                              int patch = 48, int jobs = 1,
                              std::function<Tensor<float>(const Tensor<float>&)> forward = {}) {
  if (img.c() != model.config().in_channels)
    throw ShapeError("pipeline: image has " + std::to_string(img.c()) + " channels, model expects " +
                     std::to_string(model.config().in_channels));
  if (!forward) forward = [&model](const Tensor<float>& x) { return model.forward(x); };
  const int scale = model.config().scale;
  SrResult r;
  auto charge = [&](int h, int w, std::uint64_t forwards) {
    const auto est = estimate_forward(model.config(), h, w, img.n());
    r.resources.patch_count = forwards;
    r.resources.peak_activation_bytes = est.peak_bytes;
    r.resources.total_macs = est.macs * forwards;
    for (auto [name, c] : est.stages) {
      c.macs *= forwards;
      r.resources.stages[name] = c;
    }
  };
  if (mode == SrMode::whole) {
    r.sr = forward(img);
    charge(img.h(), img.w(), 1);
    return r;
  }
  r.plan = plan_tiles(img.h(), img.w(), patch, mode == SrMode::overlap);
  const auto patches = extract_patches(img, r.plan);
  std::vector<Tensor<float>> out(patches.size());
  parallel_for(patches.size(), jobs, [&](std::size_t i) { out[i] = forward(patches[i]); });
  r.sr = mode == SrMode::overlap ? stitch_overlap_center(out, r.plan, scale)
                                 : stitch_nonoverlap(out, r.plan, scale);
  charge(patch, patch, patches.size());
  return r;
}

struct PipelineResult {
  Tensor<float> sr;
  Decision decision;
};

inline PipelineResult run_pipeline(const Tensor<float>& lr, const Model<float>& model, SrMode mode,
                                   const InferenceFn& inference, double threshold, int patch = 48,
                                   int jobs = 1,
                                   std::function<Tensor<float>(const Tensor<float>&)> forward = {}) {
  auto r = super_resolve(model, lr, mode, patch, jobs, std::move(forward));
  PipelineResult out;
  out.decision.score = inference(r.sr);
  out.decision.verdict = decide(out.decision.score, threshold);
  out.decision.resources = std::move(r.resources);
  out.sr = std::move(r.sr);
  return out;
}

inline std::string pipeline_csv_header() { return "mode,patch_count,peak_bytes,macs,score,verdict"; }

inline std::string pipeline_csv_row(SrMode mode, const Decision& d) {
  std::ostringstream os;
  os << to_string(mode) << ',' << d.resources.patch_count << ',' << d.resources.peak_activation_bytes
     << ',' << d.resources.total_macs << ',' << std::fixed << std::setprecision(6) << d.score << ','
     << to_string(d.verdict);
  return os.str();
}

}  // namespace orbitsr
