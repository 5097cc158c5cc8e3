#include <gtest/gtest.h>

#include <stdexcept>

#include "orbitsr/pipeline.hpp"
#include "test_util.hpp"

using namespace orbitsr;

namespace {

ModelConfig minimal() {
  ModelConfig c;
  c.blocks = c.layers = c.growth = c.base_channels = 1;
  return c;
}

// Pixel replication; stands in for the network where only geometry matters.
Tensor<float> replicate(const Tensor<float>& x, int s) {
  Tensor<float> y(x.n(), x.c(), x.h() * s, x.w() * s);
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c)
      for (int i = 0; i < y.h(); ++i)
        for (int j = 0; j < y.w(); ++j) y(n, c, i, j) = x(n, c, i / s, j / s);
  return y;
}

}  // namespace

TEST(Decide, VerdictIsThresholdComparison) {
  EXPECT_EQ(decide(0.0, 0.0), Verdict::transmit);
  EXPECT_EQ(decide(0.5, 0.5), Verdict::transmit);
  EXPECT_EQ(decide(0.49, 0.5), Verdict::discard);
  EXPECT_EQ(decide(0.5, 1.0), Verdict::discard);
}

TEST(Pipeline, ThresholdZeroAlwaysTransmits) {
  const auto m = Model<float>::build(ModelConfig::toy(), 1);
  for (auto mode : {SrMode::whole, SrMode::nonoverlap, SrMode::overlap})
    for (double s : {0.0, 0.3, 1.0}) {
      const auto r = run_pipeline(testutil::random_tensor<float>(Shape{1, 1, 12, 12}, 2, 0, 1), m, mode,
                                  constant_score(s), 0.0, 8);
      EXPECT_EQ(r.decision.verdict, Verdict::transmit);
      EXPECT_EQ(r.decision.score, s);
    }
}

TEST(Pipeline, ThresholdOneWithHalfScoreDiscardsButKeepsSr) {
  const auto m = Model<float>::build(ModelConfig::toy(), 1);
  const auto r = run_pipeline(testutil::random_tensor<float>(Shape{1, 1, 10, 10}, 3, 0, 1), m, SrMode::overlap,
                              constant_score(0.5), 1.0, 8);
  EXPECT_EQ(r.decision.verdict, Verdict::discard);
  EXPECT_EQ(r.sr.shape(), (Shape{1, 1, 20, 20}));
}

TEST(Pipeline, OverlapOn910RecordsFullPatchCount) {
  const auto m = Model<float>::build(minimal(), 0);
  const Tensor<float> img(1, 1, 910, 910, 0.25f);
  const auto fwd = [](const Tensor<float>& x) { return replicate(x, 2); };
  const auto ov = run_pipeline(img, m, SrMode::overlap, constant_score(1), 0.5, 48, 1, fwd);
  EXPECT_EQ(ov.decision.resources.patch_count, 1444u);
  EXPECT_EQ(ov.decision.resources.patch_count, plan_tiles(910, 910, 48, true).count());
  const auto non = run_pipeline(img, m, SrMode::nonoverlap, constant_score(1), 0.5, 48, 1, fwd);
  EXPECT_EQ(non.decision.resources.patch_count, 361u);
  EXPECT_EQ(ov.sr.shape(), (Shape{1, 1, 1820, 1820}));
  for (float v : ov.sr.values()) ASSERT_EQ(v, 0.25f);
}

TEST(Pipeline, LedgerMatchesEstimates) {
  const auto m = Model<float>::build(ModelConfig::toy(), 2);
  const auto img = testutil::random_tensor<float>(Shape{1, 1, 20, 20}, 4, 0, 1);
  const auto whole = super_resolve(m, img, SrMode::whole);
  EXPECT_EQ(whole.resources.patch_count, 1u);
  EXPECT_EQ(whole.resources.peak_activation_bytes, estimate_peak_activation_bytes(m.config(), 20, 20));
  EXPECT_EQ(whole.resources.total_macs, estimate_macs(m.config(), 20, 20));
  const auto tiled = super_resolve(m, img, SrMode::overlap, 8);
  const auto count = plan_tiles(20, 20, 8, true).count();
  EXPECT_EQ(tiled.resources.patch_count, count);
  EXPECT_EQ(tiled.resources.peak_activation_bytes, estimate_peak_activation_bytes(m.config(), 8, 8));
  EXPECT_EQ(tiled.resources.total_macs, count * estimate_macs(m.config(), 8, 8));
  EXPECT_LT(tiled.resources.peak_activation_bytes, whole.resources.peak_activation_bytes);
}

TEST(Pipeline, ChannelMismatchThrows) {
  const auto m = Model<float>::build(ModelConfig::toy(), 0);
  EXPECT_THROW(run_pipeline(Tensor<float>(1, 3, 8, 8), m, SrMode::whole, constant_score(1), 0), ShapeError);
}

TEST(Pipeline, WorkersGiveBitwiseSameResult) {
  const auto m = Model<float>::build(ModelConfig::toy(), 5);
  const auto img = testutil::random_tensor<float>(Shape{1, 1, 26, 19}, 6, 0, 1);
  for (auto mode : {SrMode::nonoverlap, SrMode::overlap}) {
    const auto one = super_resolve(m, img, mode, 8, 1);
    const auto four = super_resolve(m, img, mode, 8, 4);
    EXPECT_EQ(one.sr, four.sr);
    EXPECT_EQ(one.resources.total_macs, four.resources.total_macs);
  }
}

TEST(Pipeline, OverlapMatchesLibraryStitch) {
  const auto m = Model<float>::build(ModelConfig::toy(), 7);
  const auto img = testutil::random_tensor<float>(Shape{1, 1, 17, 13}, 8, 0, 1);
  const auto plan = plan_tiles(17, 13, 8, true);
  std::vector<Tensor<float>> outs;
  for (const auto& p : extract_patches(img, plan)) outs.push_back(m.forward(p));
  EXPECT_EQ(super_resolve(m, img, SrMode::overlap, 8).sr, stitch_overlap_center(outs, plan, 2));
}

TEST(Pipeline, WorkerErrorsPropagate) {
  const auto m = Model<float>::build(ModelConfig::toy(), 0);
  const auto boom = [](const Tensor<float>&) -> Tensor<float> { throw std::runtime_error("boom"); };
  EXPECT_THROW(super_resolve(m, Tensor<float>(1, 1, 16, 16), SrMode::overlap, 8, 3, boom), std::runtime_error);
}

TEST(Ledger, MergeIsOrderIndependent) {
  ResourceLedger a, b, c;
  a.patch_count = 3;
  a.peak_activation_bytes = 100;
  a.total_macs = 7;
  a.stages["x"] = {5, 100};
  b.patch_count = 1;
  b.peak_activation_bytes = 300;
  b.total_macs = 2;
  b.stages["x"] = {1, 50};
  b.stages["y"] = {9, 300};
  c.patch_count = 2;
  c.total_macs = 11;
  ResourceLedger ab = a;
  ab.merge(b);
  ab.merge(c);
  ResourceLedger cb = c;
  cb.merge(b);
  cb.merge(a);
  EXPECT_EQ(ab.patch_count, 6u);
  EXPECT_EQ(ab.patch_count, cb.patch_count);
  EXPECT_EQ(ab.peak_activation_bytes, 300u);
  EXPECT_EQ(ab.peak_activation_bytes, cb.peak_activation_bytes);
  EXPECT_EQ(ab.total_macs, cb.total_macs);
  EXPECT_EQ(ab.stages["x"].macs, 6u);
  EXPECT_EQ(cb.stages["x"].peak_bytes, 100u);
}

TEST(Scorers, GradientEnergy) {
  const auto score = gradient_energy_score(0.01);
  EXPECT_EQ(score(Tensor<float>(1, 1, 8, 8, 0.3f)), 0.0);
  Tensor<float> stripes(1, 1, 8, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) stripes(0, 0, y, x) = static_cast<float>(x % 2);
  const double s = score(stripes);
  EXPECT_GT(s, 0.9);
  EXPECT_LT(s, 1.0);
}

TEST(Report, CsvRow) {
  Decision d;
  d.verdict = Verdict::discard;
  d.score = 0.25;
  d.resources.patch_count = 1444;
  d.resources.peak_activation_bytes = 10;
  d.resources.total_macs = 99;
  EXPECT_EQ(pipeline_csv_header(), "mode,patch_count,peak_bytes,macs,score,verdict");
  EXPECT_EQ(pipeline_csv_row(SrMode::overlap, d), "overlap,1444,10,99,0.250000,discard");
  EXPECT_EQ(parse_sr_mode("patch-overlap"), SrMode::overlap);
  EXPECT_THROW(parse_sr_mode("tiles"), std::invalid_argument);
}
