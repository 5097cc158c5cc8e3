#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "orbitsr/orbitsr.hpp"

using namespace orbitsr;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

fs::path workdir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "orbitsr_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string at(const std::string& name) { return (workdir() / name).string(); }

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

Run run(const std::string& args, const std::string& env = "") {
  const auto log = at("log.txt");
  const std::string cmd = env + (env.empty() ? "" : " ") + ORBITSR_CLI_PATH + " " + args + " > " + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(log);
  return r;
}

bool contains(const std::string& s, const std::string& needle) { return s.find(needle) != std::string::npos; }

// Smooth 8-bit source, trained toy weights and an LR image, made once.
class CliFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    GrayImage src(72, 88);
    for (int y = 0; y < src.h; ++y)
      for (int x = 0; x < src.w; ++x)
        src.at(y, x) = static_cast<std::uint16_t>(128 + 90 * std::sin(x * 0.21) * std::cos(y * 0.17));
    write_pgm(src, at("src.pgm"));
    ASSERT_EQ(run("degrade --in " + at("src.pgm") + " --out-hr " + at("hr.pgm") + " --out-lr " + at("lr.pgm")).code, 0);
    ASSERT_EQ(run("train --steps 5 --count 2 --hr-side 32 --crop 0 --lr 1e-3 --seed 3 --weights-out " + at("w.bin"))
                  .code,
              0);
  }
};

}  // namespace

TEST(Cli, HelpForEverySubcommand) {
  for (const char* sub : {"degrade", "sr", "metrics", "tile", "gradcheck", "train", "ablate", "pipeline"}) {
    const auto r = run(std::string(sub) + " --help");
    EXPECT_EQ(r.code, 0) << sub;
    EXPECT_TRUE(contains(r.out, "Usage")) << sub;
  }
  EXPECT_EQ(run("--help").code, 0);
}

TEST(Cli, NoSubcommandOrUnknownFlagIsAnError) {
  EXPECT_EQ(run("").code, 1);
  const auto r = run("tile --h 8 --w 8 --bogus");
  EXPECT_EQ(r.code, 1);
  EXPECT_TRUE(contains(r.out, "--bogus"));
  EXPECT_EQ(run("tile --h 8 --w 8 --patch 7").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
}

TEST(Cli, TileCountsOn910Image) {
  const auto ov = run("tile --h 910 --w 910 --patch 48 --overlap");
  EXPECT_EQ(ov.code, 0);
  EXPECT_TRUE(contains(ov.out, "tiles: 1444\n")) << ov.out;
  EXPECT_TRUE(contains(run("tile --h 910 --w 910 --patch 48").out, "tiles: 361\n"));
  const auto plan = run("tile --h 910 --w 910 --patch 48 --overlap --print-plan");
  EXPECT_EQ(plan.out, plan_tiles(910, 910, 48, true).to_text());
}

TEST(Cli, EnvSeedIsValidated) {
  const auto r = run("tile --h 3 --w 3", "ORBITSR_SEED=abc");
  EXPECT_EQ(r.code, 1);
  EXPECT_TRUE(contains(r.out, "ORBITSR_SEED"));
}

TEST_F(CliFixture, DegradeHalvesTheSource) {
  const auto hr = read_pgm(at("hr.pgm")), lr = read_pgm(at("lr.pgm"));
  EXPECT_EQ(hr.h, 72);
  EXPECT_EQ(hr.w, 88);
  EXPECT_EQ(lr.h, 36);
  EXPECT_EQ(lr.w, 44);
  const auto lib = degrade_pair(read_pgm(at("src.pgm")), 1, 2);
  EXPECT_EQ(lib.lr, lr);
}

TEST_F(CliFixture, MetricsOfIdenticalImagesIsInfinite) {
  const auto r = run("metrics --a " + at("hr.pgm") + " --b " + at("hr.pgm") + " --csv " + at("m.csv"));
  EXPECT_EQ(r.code, 0);
  EXPECT_TRUE(contains(r.out, "psnr: inf\n")) << r.out;
  EXPECT_TRUE(contains(r.out, "mse: 0\n"));
  const auto csv = slurp(at("m.csv"));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), MetricsReport::csv_header());
  EXPECT_TRUE(contains(csv, "hr.pgm,inf,"));
}

TEST_F(CliFixture, MetricsRejectsSizeMismatch) {
  const auto r = run("metrics --a " + at("hr.pgm") + " --b " + at("lr.pgm"));
  EXPECT_EQ(r.code, 1);
  EXPECT_TRUE(contains(r.out, "sizes differ"));
}

TEST_F(CliFixture, OverlapSrMatchesLibraryStitch) {
  for (int jobs : {1, 3}) {
    ASSERT_EQ(run("sr --in " + at("lr.pgm") + " --weights " + at("w.bin") + " --mode overlap --patch 16 --jobs " +
                  std::to_string(jobs) + " --out " + at("sr.pgm"))
                  .code,
              0);
    const auto lr = read_pgm(at("lr.pgm"));
    const auto model = load_weights<float>(at("w.bin"));
    const auto img = to_tensor<float>(lr, true);
    const auto plan = plan_tiles(img.h(), img.w(), 16, true);
    std::vector<Tensor<float>> outs;
    for (const auto& p : extract_patches(img, plan)) outs.push_back(model.forward(p));
    const auto expect = from_tensor(stitch_overlap_center(outs, plan, 2), lr.maxval, true);
    EXPECT_EQ(read_pgm(at("sr.pgm")), expect) << jobs;
  }
}

TEST_F(CliFixture, WholeAndEnsembleModes) {
  const auto lr = read_pgm(at("lr.pgm"));
  const auto model = load_weights<float>(at("w.bin"));
  const auto x = to_tensor<float>(lr, true);
  ASSERT_EQ(run("sr --in " + at("lr.pgm") + " --weights " + at("w.bin") + " --mode whole --out " + at("w.pgm")).code,
            0);
  EXPECT_EQ(read_pgm(at("w.pgm")), from_tensor(model.forward(x), lr.maxval, true));
  ASSERT_EQ(run("sr --in " + at("lr.pgm") + " --weights " + at("w.bin") + " --mode whole --ensemble --out " +
                at("e.pgm"))
                .code,
            0);
  EXPECT_EQ(read_pgm(at("e.pgm")), from_tensor(self_ensemble_forward(model, x), lr.maxval, true));
}

TEST_F(CliFixture, PipelineExitCodesFollowVerdict) {
  const std::string base = "pipeline --in " + at("lr.pgm") + " --weights " + at("w.bin") + " --patch 16 ";
  const auto tx = run(base + "--score const:0.5 --threshold 0 --report " + at("r.csv"));
  EXPECT_EQ(tx.code, 0);
  EXPECT_TRUE(contains(tx.out, "verdict: transmit"));
  const auto rows = slurp(at("r.csv"));
  EXPECT_EQ(rows, pipeline_csv_header() + "\noverlap," + std::to_string(plan_tiles(36, 44, 16, true).count()) + "," +
                      std::to_string(estimate_peak_activation_bytes(ModelConfig::toy(), 16, 16)) + "," +
                      std::to_string(plan_tiles(36, 44, 16, true).count() *
                                     estimate_macs(ModelConfig::toy(), 16, 16)) +
                      ",0.500000,transmit\n");
  const auto dx = run(base + "--score const:0.5 --threshold 1");
  EXPECT_EQ(dx.code, 2);
  EXPECT_TRUE(contains(dx.out, "verdict: discard"));
  EXPECT_EQ(run(base + "--score gradient --threshold 0").code, 0);
  EXPECT_EQ(run(base + "--score gradient --threshold 2").code, 2);
  EXPECT_EQ(run(base + "--score nonsense").code, 1);
}

TEST_F(CliFixture, DistinctErrorMessages) {
  const auto missing = run("sr --in " + at("absent.pgm") + " --weights " + at("w.bin") + " --out " + at("x.pgm"));
  EXPECT_EQ(missing.code, 1);
  EXPECT_TRUE(contains(missing.out, "missing input image"));
  const auto noweights = run("pipeline --in " + at("lr.pgm") + " --weights " + at("absent.bin"));
  EXPECT_EQ(noweights.code, 1);
  EXPECT_TRUE(contains(noweights.out, "missing weights"));
  const auto mismatch =
      run("sr --in " + at("lr.pgm") + " --weights " + at("w.bin") + " --preset full --out " + at("x.pgm"));
  EXPECT_EQ(mismatch.code, 1);
  EXPECT_TRUE(contains(mismatch.out, "P file=2 expected=16")) << mismatch.out;
  EXPECT_EQ(run("sr --in " + at("lr.pgm") + " --weights " + at("w.bin") + " --preset toy --out " + at("x.pgm")).code,
            0);
  std::ofstream(at("junk.bin")) << "not weights";
  const auto junk = run("sr --in " + at("lr.pgm") + " --weights " + at("junk.bin") + " --out " + at("x.pgm"));
  EXPECT_EQ(junk.code, 1);
  EXPECT_FALSE(contains(junk.out, "missing"));
}

TEST(Cli, GradcheckPasses) {
  const auto r = run("gradcheck --config-preset toy --seed 2");
  EXPECT_EQ(r.code, 0);
  EXPECT_TRUE(contains(r.out, "l1: max_rel_err"));
  EXPECT_TRUE(contains(r.out, "mask_psnr: max_rel_err"));
  EXPECT_FALSE(contains(r.out, "FAIL"));
  EXPECT_EQ(run("gradcheck --tol 1e-30").code, 1);
}

TEST(Cli, TrainIsDeterministicAndHonoursEnvSeed) {
  const std::string args = "train --steps 6 --count 2 --hr-side 32 --crop 8 --batch 2 --lr 1e-3 ";
  ASSERT_EQ(run(args + "--seed 5 --weights-out " + at("a.bin") + " --history " + at("a.csv")).code, 0);
  ASSERT_EQ(run(args + "--seed 5 --weights-out " + at("b.bin") + " --history " + at("b.csv")).code, 0);
  ASSERT_EQ(run(args + "--weights-out " + at("c.bin") + " --history " + at("c.csv"), "ORBITSR_SEED=5").code, 0);
  ASSERT_EQ(run(args + "--seed 6 --weights-out " + at("d.bin")).code, 0);
  EXPECT_EQ(slurp(at("a.bin")), slurp(at("b.bin")));
  EXPECT_EQ(slurp(at("a.csv")), slurp(at("b.csv")));
  EXPECT_EQ(slurp(at("a.bin")), slurp(at("c.bin")));
  EXPECT_NE(slurp(at("a.bin")), slurp(at("d.bin")));
  EXPECT_EQ(slurp(at("a.csv")).substr(0, 19), "step,loss,grad_norm");
}

TEST(Cli, TrainFromManifest) {
  const auto pairs = synth_dataset(SynthKind::ramps, 2, 4, 32, 2);
  std::vector<std::pair<std::string, std::string>> entries;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto hr = "mhr" + std::to_string(i) + ".pgm", lr = "mlr" + std::to_string(i) + ".pgm";
    write_pgm(pairs[i].hr, at(hr));
    write_pgm(pairs[i].lr, at(lr));
    entries.emplace_back(hr, lr);
  }
  write_manifest(entries, at("manifest.txt"));
  const auto r = run("train --dataset manifest:" + at("manifest.txt") + " --steps 3 --crop 0");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(contains(r.out, "final_loss"));
  EXPECT_EQ(run("train --dataset sand:x --steps 1").code, 1);
}

TEST(Cli, AblateWritesEightRows) {
  const auto r = run("ablate --steps 2 --count 2 --heldout 1 --hr-side 32 --crop 8 --jobs 2 --csv " + at("abl.csv"));
  EXPECT_EQ(r.code, 0) << r.out;
  const auto csv = slurp(at("abl.csv"));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 9);
  EXPECT_EQ(csv, r.out);
  EXPECT_EQ(run("ablate --lattice cm,xyz --steps 1").code, 1);
}
