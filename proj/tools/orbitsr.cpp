// orbitsr command-line driver.

#include <CLI11.hpp>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "orbitsr/orbitsr.hpp"

using namespace orbitsr;

namespace {

// Exit codes; every failure, including a bad flag, is kError.
constexpr int kOk = 0;
constexpr int kError = 1;
constexpr int kDiscard = 2;

std::uint64_t env_seed() {
  const char* s = std::getenv("ORBITSR_SEED");
  if (!s || !*s) return 0;
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    throw std::invalid_argument(std::string("ORBITSR_SEED is not an unsigned integer: ") + s);
  }
}

void require_file(const std::string& path, const char* what) {
  if (!std::filesystem::is_regular_file(path))
    throw std::runtime_error(std::string("missing ") + what + " file: " + path);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << text;
}

ModelConfig preset(const std::string& name) {
  if (name == "toy") return ModelConfig::toy();
  if (name == "full") return ModelConfig::full();
  if (name == "minimal") {
    ModelConfig c;
    c.blocks = c.layers = c.growth = c.base_channels = 1;
    return c;
  }
  throw std::invalid_argument("unknown preset: " + name + " (expected toy, full or minimal)");
}

Upsampler parse_upsampler(const std::string& s) {
  if (s == "deconv") return Upsampler::deconv;
  if (s == "subpixel") return Upsampler::subpixel;
  throw std::invalid_argument("unknown upsampler: " + s);
}

// "synth:<kind>" or "manifest:<path>".
std::vector<ImagePair> load_dataset(const std::string& source, int count, int hr_side, int scale,
                                    std::uint64_t seed) {
  const auto colon = source.find(':');
  const std::string kind = source.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : source.substr(colon + 1);
  if (kind == "synth") return synth_dataset(parse_synth_kind(arg.empty() ? "craters" : arg), count, seed, hr_side, scale);
  if (kind == "manifest") {
    require_file(arg, "manifest");
    const auto base = std::filesystem::path(arg).parent_path();
    std::vector<ImagePair> out;
    for (const auto& [hr, lr] : read_manifest(arg)) {
      auto resolve = [&](const std::string& p) {
        const std::filesystem::path q(p);
        return (q.is_absolute() ? q : base / q).string();
      };
      out.push_back({read_pgm(resolve(hr)), read_pgm(resolve(lr))});
    }
    return out;
  }
  throw std::invalid_argument("unknown dataset: " + source + " (expected synth:<kind> or manifest:<path>)");
}

struct SrInputs {
  std::string in, weights, mode = "overlap", expect;
  int patch = 48;
  int jobs = 1;
  bool ensemble = false;
};

void add_sr_flags(CLI::App* cmd, SrInputs& o) {
  cmd->add_option("--in", o.in, "LR input image (PGM)")->required();
  cmd->add_option("--weights", o.weights, "model weight file")->required();
  cmd->add_option("--mode", o.mode, "whole, nonoverlap or overlap")
      ->check(CLI::IsMember({"whole", "nonoverlap", "overlap", "patch-nonoverlap", "patch-overlap"}));
  cmd->add_option("--patch", o.patch, "LR patch side for tiled modes")->check(CLI::PositiveNumber);
  cmd->add_option("--jobs", o.jobs, "tile workers")->check(CLI::PositiveNumber);
  cmd->add_flag("--ensemble", o.ensemble, "average the 8 dihedral predictions");
  cmd->add_option("--preset", o.expect, "reject weights whose config differs from this preset (toy, full, minimal)");
}

struct SrRun {
  GrayImage input;
  SrResult result;
};

SrRun run_sr(const SrInputs& o) {
  require_file(o.in, "input image");
  require_file(o.weights, "weights");
  SrRun r;
  r.input = read_pgm(o.in);
  const auto model = o.expect.empty() ? load_weights<float>(o.weights) : load_weights<float>(o.weights, preset(o.expect));
  std::function<Tensor<float>(const Tensor<float>&)> fwd;
  if (o.ensemble) fwd = [&model](const Tensor<float>& x) { return self_ensemble_forward(model, x); };
  r.result = super_resolve(model, to_tensor<float>(r.input, true), parse_sr_mode(o.mode), o.patch, o.jobs, fwd);
  return r;
}

std::string ledger_text(const ResourceLedger& l) {
  std::ostringstream os;
  os << "patch_count: " << l.patch_count << "\n"
     << "peak_activation_bytes: " << l.peak_activation_bytes << "\n"
     << "total_macs: " << l.total_macs << "\n";
  return os.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"orbitsr: lunar image super-resolution, tiling, metrics and transmit decisions"};
  app.require_subcommand(1);
  // -h is not used so that tile can take --h/--w
  app.set_help_flag("--help", "print this help and exit");
  app.set_help_all_flag("--help-all", "help for every subcommand");

  std::uint64_t seed = 0;
  int rc = kOk;

  // degrade
  std::string d_in, d_hr, d_lr;
  int d_scale = 2, d_hr_factor = 1;
  auto* degrade = app.add_subcommand("degrade", "make an HR/LR pair from one source image by bicubic downscaling");
  degrade->add_option("--in", d_in, "source image (PGM)")->required();
  degrade->add_option("--scale", d_scale, "SR factor between HR and LR")->check(CLI::Range(2, 16));
  degrade->add_option("--hr-factor", d_hr_factor, "downscale of the source giving HR")->check(CLI::PositiveNumber);
  degrade->add_option("--out-hr", d_hr, "HR output (PGM)")->required();
  degrade->add_option("--out-lr", d_lr, "LR output (PGM)")->required();
  degrade->callback([&] {
    require_file(d_in, "input image");
    const auto pair = degrade_pair(read_pgm(d_in), d_hr_factor, d_hr_factor * d_scale);
    write_pgm(pair.hr, d_hr);
    write_pgm(pair.lr, d_lr);
    std::cout << "hr: " << pair.hr.h << "x" << pair.hr.w << "\nlr: " << pair.lr.h << "x" << pair.lr.w << "\n";
  });

  // sr
  SrInputs s_opt;
  std::string s_out;
  auto* sr = app.add_subcommand("sr", "super-resolve an image");
  add_sr_flags(sr, s_opt);
  sr->add_option("--out", s_out, "SR output (PGM)")->required();
  sr->callback([&] {
    const auto r = run_sr(s_opt);
    write_pgm(from_tensor(r.result.sr, r.input.maxval, true), s_out);
    std::cout << "sr: " << r.result.sr.h() << "x" << r.result.sr.w() << "\n" << ledger_text(r.result.resources);
  });

  // metrics
  std::string m_a, m_b, m_csv;
  std::optional<double> m_imax;
  int m_block = 48;
  auto* metrics = app.add_subcommand("metrics", "PSNR, PSNR-B, SSIM, MSE and BEF of --b against reference --a");
  metrics->add_option("--a", m_a, "reference image (PGM)")->required();
  metrics->add_option("--b", m_b, "test image (PGM)")->required();
  metrics->add_option("--imax", m_imax, "peak intensity (default: maxval of --a)")->check(CLI::PositiveNumber);
  metrics->add_option("--block", m_block, "PSNR-B block size")->check(CLI::Range(2, 1 << 20));
  metrics->add_option("--csv", m_csv, "write a CSV report here");
  metrics->callback([&] {
    require_file(m_a, "image");
    require_file(m_b, "image");
    const auto a = read_pgm(m_a), b = read_pgm(m_b);
    if (a.h != b.h || a.w != b.w)
      throw std::runtime_error("image sizes differ: " + std::to_string(a.h) + "x" + std::to_string(a.w) + " vs " +
                               std::to_string(b.h) + "x" + std::to_string(b.w));
    const auto r = evaluate(to_tensor<double>(a), to_tensor<double>(b), m_imax.value_or(a.maxval), m_block);
    std::cout << "psnr: " << format_db(r.psnr) << "\npsnrb: " << format_db(r.psnrb) << "\nssim: " << r.ssim
              << "\nmse: " << r.mse << "\nbef: " << r.bef << "\n";
    if (!m_csv.empty())
      write_text(m_csv, MetricsReport::csv_header() + "\n" +
                            r.csv_row(std::filesystem::path(m_b).filename().string()) + "\n");
  });

  // tile
  int t_h = 0, t_w = 0, t_patch = 48;
  bool t_overlap = false, t_print = false;
  auto* tile = app.add_subcommand("tile", "count and list the tiles of an image");
  tile->add_option("--h", t_h, "image height")->required()->check(CLI::PositiveNumber);
  tile->add_option("--w", t_w, "image width")->required()->check(CLI::PositiveNumber);
  tile->add_option("--patch", t_patch, "LR patch side (even)");
  tile->add_flag("--overlap", t_overlap, "50% overlapping tiles");
  tile->add_flag("--print-plan", t_print, "print every tile origin");
  tile->callback([&] {
    const auto plan = plan_tiles(t_h, t_w, t_patch, t_overlap);
    if (t_print)
      std::cout << plan.to_text();
    else
      std::cout << "grid: " << plan.rows() << "x" << plan.cols() << "\ntiles: " << plan.count() << "\n";
  });

  // gradcheck
  std::string g_preset = "toy", g_loss = "both";
  double g_eps = 1e-5, g_tol = 1e-4;
  int g_side = 8;
  auto* gradcheck = app.add_subcommand("gradcheck", "compare backprop against central differences at 64-bit");
  gradcheck->add_option("--config-preset", g_preset, "toy or minimal")->check(CLI::IsMember({"toy", "minimal"}));
  gradcheck->add_option("--eps", g_eps, "finite-difference step")->check(CLI::PositiveNumber);
  gradcheck->add_option("--loss", g_loss, "l1, mask_psnr or both")->check(CLI::IsMember({"l1", "mask_psnr", "both"}));
  gradcheck->add_option("--side", g_side, "input side")->check(CLI::PositiveNumber);
  gradcheck->add_option("--tol", g_tol, "pass threshold on max relative error")->check(CLI::PositiveNumber);
  gradcheck->add_option("--seed", seed, "seed (default ORBITSR_SEED or 0)");
  gradcheck->callback([&] {
    std::vector<LossKind> losses;
    if (g_loss != "mask_psnr") losses.push_back(LossKind::l1);
    if (g_loss != "l1") losses.push_back(LossKind::mask_psnr);
    bool ok = true;
    for (auto l : losses) {
      const double err = model_gradcheck(preset(g_preset), l, g_eps, seed, g_side);
      const bool pass = err < g_tol;
      ok = ok && pass;
      std::cout << to_string(l) << ": max_rel_err " << err << (pass ? " PASS" : " FAIL") << "\n";
    }
    if (!ok) rc = kError;
  });

  // train
  std::string tr_dataset = "synth:craters", tr_loss = "l1", tr_weights, tr_history, tr_preset = "toy",
              tr_up = "deconv";
  int tr_k = 54, tr_steps = 100, tr_count = 8, tr_side = 96, tr_batch = 1, tr_crop = 24, tr_scale = 2;
  double tr_lr = 1e-4;
  auto* train = app.add_subcommand("train", "train a model on synthetic or listed pairs");
  train->add_option("--dataset", tr_dataset, "synth:<craters|ramps|checkers> or manifest:<path>");
  train->add_option("--count", tr_count, "synthetic pair count")->check(CLI::PositiveNumber);
  train->add_option("--hr-side", tr_side, "synthetic HR side")->check(CLI::PositiveNumber);
  train->add_option("--loss", tr_loss, "l1 or mask_psnr")->check(CLI::IsMember({"l1", "mask_psnr"}));
  train->add_option("--k", tr_k, "mask flat-region side on the HR grid")->check(CLI::PositiveNumber);
  train->add_option("--steps", tr_steps, "optimizer steps")->check(CLI::PositiveNumber);
  train->add_option("--lr", tr_lr, "Adam learning rate")->check(CLI::NonNegativeNumber);
  train->add_option("--batch", tr_batch, "batch size")->check(CLI::PositiveNumber);
  train->add_option("--crop", tr_crop, "LR crop side, 0 for whole images")->check(CLI::NonNegativeNumber);
  train->add_option("--preset", tr_preset, "toy, full or minimal")->check(CLI::IsMember({"toy", "full", "minimal"}));
  train->add_option("--scale", tr_scale, "SR factor")->check(CLI::Range(2, 4));
  train->add_option("--upsampler", tr_up, "deconv or subpixel")->check(CLI::IsMember({"deconv", "subpixel"}));
  train->add_option("--seed", seed, "seed (default ORBITSR_SEED or 0)");
  train->add_option("--weights-out", tr_weights, "save trained weights here");
  train->add_option("--history", tr_history, "write the loss history CSV here");
  train->callback([&] {
    ModelConfig cfg = preset(tr_preset);
    cfg.scale = tr_scale;
    cfg.upsampler = parse_upsampler(tr_up);
    cfg.validate();
    TrainConfig tc;
    tc.steps = tr_steps;
    tc.lr = tr_lr;
    tc.loss = parse_loss(tr_loss);
    tc.mask_k = tr_k;
    tc.batch = tr_batch;
    tc.crop = tr_crop;
    tc.seed = seed;
    tc.validate();
    const auto data = to_train_pairs(load_dataset(tr_dataset, tr_count, tr_side, tr_scale, seed));
    auto model = Model<float>::build(cfg, seed);
    const auto hist = train_toy(model, data, tc);
    std::cout << "initial_loss: " << hist.steps.front().loss << "\nfinal_loss: " << hist.steps.back().loss
              << "\nfinal_psnr: " << format_db(hist.final_psnr) << "\n";
    if (!tr_weights.empty()) save_weights(model, tr_weights);
    if (!tr_history.empty()) write_text(tr_history, hist.to_csv());
  });

  // ablate
  std::string a_lattice = "cm,lra,gfb", a_csv, a_dataset = "synth:craters";
  int a_steps = 50, a_count = 6, a_heldout = 4, a_side = 48, a_jobs = 1, a_crop = 12;
  double a_lr = 1e-3;
  auto* ablate_cmd = app.add_subcommand("ablate", "train every toggle combination and compare held-out PSNR");
  ablate_cmd->add_option("--lattice", a_lattice, "comma-separated toggles from cm, lra, gfb");
  ablate_cmd->add_option("--csv", a_csv, "write the comparison CSV here");
  ablate_cmd->add_option("--dataset", a_dataset, "synth:<kind>");
  ablate_cmd->add_option("--steps", a_steps, "training steps per config")->check(CLI::PositiveNumber);
  ablate_cmd->add_option("--count", a_count, "training pairs")->check(CLI::PositiveNumber);
  ablate_cmd->add_option("--heldout", a_heldout, "held-out pairs")->check(CLI::PositiveNumber);
  ablate_cmd->add_option("--hr-side", a_side, "synthetic HR side")->check(CLI::PositiveNumber);
  ablate_cmd->add_option("--crop", a_crop, "LR crop side, 0 for whole images")->check(CLI::NonNegativeNumber);
  ablate_cmd->add_option("--lr", a_lr, "Adam learning rate")->check(CLI::NonNegativeNumber);
  ablate_cmd->add_option("--jobs", a_jobs, "configs trained concurrently")->check(CLI::PositiveNumber);
  ablate_cmd->add_option("--seed", seed, "seed (default ORBITSR_SEED or 0)");
  ablate_cmd->callback([&] {
    std::vector<std::string> names;
    std::stringstream ss(a_lattice);
    for (std::string t; std::getline(ss, t, ',');)
      if (!t.empty()) names.push_back(t);
    if (names.empty()) throw std::invalid_argument("ablate: empty --lattice");
    const auto configs = toggle_lattice(ModelConfig::toy(), names);
    TrainConfig tc;
    tc.steps = a_steps;
    tc.lr = a_lr;
    tc.crop = a_crop;
    tc.seed = seed;
    const auto train_set = to_train_pairs(load_dataset(a_dataset, a_count, a_side, 2, seed));
    const auto held = to_train_pairs(load_dataset(a_dataset, a_heldout, a_side, 2, seed + 1));
    const auto csv = ablation_csv(ablate(configs, train_set, held, tc, seed, a_jobs));
    std::cout << csv;
    if (!a_csv.empty()) write_text(a_csv, csv);
  });

  // pipeline
  SrInputs p_opt;
  std::string p_report, p_score = "gradient", p_out;
  double p_threshold = 0.5;
  auto* pipeline = app.add_subcommand("pipeline", "super-resolve, score and decide transmit (exit 0) or discard (exit 2)");
  add_sr_flags(pipeline, p_opt);
  pipeline->add_option("--threshold", p_threshold, "transmit when score >= threshold");
  pipeline->add_option("--score", p_score, "gradient or const:<value>");
  pipeline->add_option("--report", p_report, "write the CSV report here");
  pipeline->add_option("--out", p_out, "also write the SR image here");
  pipeline->callback([&] {
    InferenceFn inference;
    if (p_score == "gradient") {
      inference = gradient_energy_score();
    } else if (p_score.starts_with("const:")) {
      inference = constant_score(std::stod(p_score.substr(6)));
    } else {
      throw std::invalid_argument("unknown --score: " + p_score + " (expected gradient or const:<value>)");
    }
    const auto r = run_sr(p_opt);
    Decision d;
    d.score = inference(r.result.sr);
    d.verdict = decide(d.score, p_threshold);
    d.resources = r.result.resources;
    const auto mode = parse_sr_mode(p_opt.mode);
    std::cout << "verdict: " << to_string(d.verdict) << "\nscore: " << d.score << "\n" << ledger_text(d.resources);
    if (!p_report.empty()) write_text(p_report, pipeline_csv_header() + "\n" + pipeline_csv_row(mode, d) + "\n");
    if (!p_out.empty()) write_pgm(from_tensor(r.result.sr, r.input.maxval, true), p_out);
    if (d.verdict == Verdict::discard) rc = kDiscard;
  });

  try {
    seed = env_seed();
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kError;
  }
  return rc;
}
