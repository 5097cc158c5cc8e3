#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "orbitsr/autodiff.hpp"
#include "orbitsr/metrics.hpp"
#include "orbitsr/model.hpp"
#include "orbitsr/optim.hpp"
#include "orbitsr/tiling.hpp"
#include "orbitsr/trainer.hpp"
#include "test_util.hpp"

using namespace orbitsr;
using testutil::random_tensor;

namespace {

using Build = std::function<Var(Graph<double>&)>;

// Runs backward once, copies gradients into the parameters and compares them
// against central differences of the same graph.
double gradcheck(const std::vector<Parameter<double>*>& ps, const Build& build, double eps = 1e-6) {
  Graph<double> g;
  const auto grads = g.backward(build(g));
  for (auto* p : ps) {
    auto it = grads.find(p->id);
    if (it != grads.end()) p->grad = it->second;
    else p->zero_grad();
  }
  std::function<double()> f = [&] {
    Graph<double> h;
    return h.value(build(h))[0];
  };
  return finite_diff_check<double>(f, std::span<Parameter<double>* const>(ps), eps, 64);
}

Parameter<double> make_param(const std::string& name, Shape s, std::size_t id, std::uint64_t seed,
                             double lo = -1, double hi = 1) {
  Parameter<double> p(name, s);
  p.id = id;
  p.value = random_tensor<double>(s, seed, lo, hi);
  return p;
}

// sum(y * R) for a fixed random R, so every output element matters differently.
Var weighted_sum(Graph<double>& g, Var y, std::uint64_t seed) {
  const Var r = g.constant(random_tensor<double>(g.value(y).shape(), seed));
  return ad::sum(g, ad::mul(g, y, r));
}

}  // namespace

TEST(Backward, SumGivesOnes) {
  Graph<double> g;
  const Var x = g.input(random_tensor<double>(Shape{1, 2, 3, 3}, 1));
  g.backward(ad::sum(g, x));
  const auto gx = g.grad(x);
  for (double v : gx.values()) EXPECT_EQ(v, 1.0);
}

TEST(Backward, ReluSubgradient) {
  Graph<double> g;
  const Var x = g.input(Tensor<double>::from(Shape{1, 1, 1, 3}, {-1, 2, 0}));
  g.backward(ad::sum(g, ad::relu(g, x)));
  const auto gx = g.grad(x);
  EXPECT_EQ(gx[0], 0.0);
  EXPECT_EQ(gx[1], 1.0);
  EXPECT_EQ(gx[2], 0.0);
}

TEST(Backward, RejectsNonScalarLoss) {
  Graph<double> g;
  const Var x = g.input(Tensor<double>(1, 1, 2, 2));
  EXPECT_THROW(g.backward(x), std::invalid_argument);
}

TEST(Backward, FanOutAccumulates) {
  Graph<double> g;
  const Var x = g.input(random_tensor<double>(Shape{1, 1, 2, 2}, 2));
  g.backward(ad::sum(g, ad::add(g, x, ad::mul(g, x, x))));
  const auto gx = g.grad(x);
  for (std::size_t i = 0; i < gx.size(); ++i) EXPECT_DOUBLE_EQ(gx[i], 1.0 + 2.0 * g.value(x)[i]);
}

TEST(Backward, UnreachedParameterGetsZero) {
  auto a = make_param("a", Shape{1, 1, 2, 2}, 0, 3);
  auto b = make_param("b", Shape{1, 1, 2, 2}, 1, 4);
  Graph<double> g;
  const Var va = g.param(a);
  g.param(b);
  const auto grads = g.backward(ad::sum(g, va));
  ASSERT_TRUE(grads.count(1));
  for (double v : grads.at(1).values()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, ParamBoundTwiceSharesNode) {
  auto a = make_param("a", Shape{1, 1, 1, 2}, 0, 5);
  Graph<double> g;
  const Var v1 = g.param(a);
  const Var v2 = g.param(a);
  EXPECT_EQ(v1.id, v2.id);
  const auto grads = g.backward(ad::sum(g, ad::add(g, v1, v2)));
  for (double v : grads.at(0).values()) EXPECT_EQ(v, 2.0);
}

TEST(Backward, Deterministic) {
  auto w = make_param("w", Shape{3, 2, 3, 3}, 0, 6);
  auto b = make_param("b", Shape{1, 3, 1, 1}, 1, 7);
  const auto x = random_tensor<double>(Shape{1, 2, 5, 5}, 8);
  auto run = [&] {
    Graph<double> g;
    const Var y = ad::sigmoid(g, ad::conv2d(g, g.input(x), g.param(w), g.param(b), 1));
    return g.backward(weighted_sum(g, y, 9));
  };
  const auto g1 = run(), g2 = run();
  EXPECT_EQ(g1.at(0), g2.at(0));
  EXPECT_EQ(g1.at(1), g2.at(1));
}

TEST(GradCheck, Conv2d) {
  for (int stride : {1, 2}) {
    auto x = make_param("x", Shape{2, 3, 5, 6}, 0, 10);
    auto w = make_param("w", Shape{4, 3, 3, 3}, 1, 11);
    auto b = make_param("b", Shape{1, 4, 1, 1}, 2, 12);
    const double err = gradcheck({&x, &w, &b}, [&](Graph<double>& g) {
      return weighted_sum(g, ad::conv2d(g, g.param(x), g.param(w), g.param(b), 1, stride), 13);
    });
    EXPECT_LT(err, 1e-4) << "stride " << stride;
  }
}

TEST(GradCheck, ConvTranspose2d) {
  auto x = make_param("x", Shape{1, 3, 3, 4}, 0, 14);
  auto w = make_param("w", Shape{2, 3, 4, 4}, 1, 15);
  auto b = make_param("b", Shape{1, 2, 1, 1}, 2, 16);
  const double err = gradcheck({&x, &w, &b}, [&](Graph<double>& g) {
    return weighted_sum(g, ad::conv_transpose2d(g, g.param(x), g.param(w), g.param(b), 2, 1), 17);
  });
  EXPECT_LT(err, 1e-4);
}

TEST(GradCheck, ConvTransposeAdjointOfConv) {
  // <deconv(x), y> == <x, conv(y)> with the same kernel viewed from the
  // other side: the backward of one is the forward of the other.
  const auto x = random_tensor<double>(Shape{1, 2, 3, 3}, 18);
  const auto y = random_tensor<double>(Shape{1, 1, 6, 6}, 19);
  const auto k = random_tensor<double>(Shape{1, 2, 4, 4}, 20);
  const Tensor<double> zb1(1, 1, 1, 1), zb2(1, 2, 1, 1);
  const auto up = conv_transpose2d(x, k, zb1, 2, 1);
  // conv2d expects (c_out, c_in, k, k): swap the channel roles of k
  Tensor<double> kt(2, 1, 4, 4);
  for (int c = 0; c < 2; ++c)
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) kt(c, 0, a, b) = k(0, c, a, b);
  const auto down = conv2d(y, kt, zb2, 1, 2);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < up.size(); ++i) lhs += up[i] * y[i];
  for (std::size_t i = 0; i < down.size(); ++i) rhs += down[i] * x[i];
  EXPECT_NEAR(lhs, rhs, 1e-10);
}

TEST(GradCheck, ElementwiseAndActivations) {
  auto a = make_param("a", Shape{1, 2, 3, 3}, 0, 21, -3, 3);
  auto b = make_param("b", Shape{1, 2, 3, 3}, 1, 22, -3, 3);
  const double err = gradcheck({&a, &b}, [&](Graph<double>& g) {
    const Var va = g.param(a), vb = g.param(b);
    const Var y = ad::mul(g, ad::sigmoid(g, va), ad::add(g, ad::relu(g, vb), va));
    return weighted_sum(g, ad::scale(g, y, 1.5), 23);
  });
  EXPECT_LT(err, 1e-4);
}

TEST(GradCheck, ConcatSplitsByChannel) {
  auto a = make_param("a", Shape{2, 2, 3, 3}, 0, 24);
  auto b = make_param("b", Shape{2, 3, 3, 3}, 1, 25);
  Graph<double> g;
  const Var va = g.param(a), vb = g.param(b);
  const Var cat = ad::concat_channels(g, std::vector<Var>{va, vb});
  const auto r = random_tensor<double>(g.value(cat).shape(), 26);
  const Var loss = ad::sum(g, ad::mul(g, cat, g.constant(r)));
  const auto grads = g.backward(loss);
  // slice oracle: each part's gradient is its channel range of R
  EXPECT_EQ(grads.at(0), slice_channels(r, 0, 2));
  EXPECT_EQ(grads.at(1), slice_channels(r, 2, 3));
}

TEST(GradCheck, PixelShuffle) {
  auto x = make_param("x", Shape{1, 8, 2, 3}, 0, 27);
  const double err = gradcheck({&x}, [&](Graph<double>& g) {
    return weighted_sum(g, ad::pixel_shuffle(g, g.param(x), 2), 28);
  });
  EXPECT_LT(err, 1e-4);
}

TEST(GradCheck, Attention) {
  auto th = make_param("th", Shape{2, 2, 2, 3}, 0, 29);
  auto ph = make_param("ph", Shape{2, 2, 2, 3}, 1, 30);
  auto gv = make_param("g", Shape{2, 2, 2, 3}, 2, 31);
  const double err = gradcheck({&th, &ph, &gv}, [&](Graph<double>& g) {
    return weighted_sum(g, ad::attention(g, g.param(th), g.param(ph), g.param(gv)), 32);
  });
  EXPECT_LT(err, 1e-4);
}

TEST(GradCheck, L1Loss) {
  auto sr = make_param("sr", Shape{1, 1, 4, 4}, 0, 33);
  const auto hr = random_tensor<double>(Shape{1, 1, 4, 4}, 34);
  const double err = gradcheck({&sr}, [&](Graph<double>& g) { return ad::l1_loss(g, g.param(sr), hr); });
  EXPECT_LT(err, 1e-4);
  Graph<double> g;
  EXPECT_NEAR(g.value(ad::l1_loss(g, g.input(sr.value), hr))[0], l1_loss(sr.value, hr), 1e-12);
}

TEST(GradCheck, MaskPsnrWrtSr) {
  auto sr = make_param("sr", Shape{1, 1, 8, 8}, 0, 35);
  const auto hr = random_tensor<double>(Shape{1, 1, 8, 8}, 36);
  const auto mask = make_mask(8, 4);
  const auto mt = mask.tensor<double>();
  const double err = gradcheck({&sr}, [&](Graph<double>& g) { return ad::mask_psnr(g, g.param(sr), hr, mt, 1.0); });
  EXPECT_LT(err, 1e-5);
  Graph<double> g;
  EXPECT_NEAR(g.value(ad::mask_psnr(g, g.input(sr.value), hr, mt, 1.0))[0], mask_psnr(sr.value, hr, mask, 1.0),
              1e-9);
}

TEST(GradCheck, MaskPsnrOfOneConvLayer) {
  auto w = make_param("w", Shape{1, 1, 3, 3}, 0, 37);
  auto b = make_param("b", Shape{1, 1, 1, 1}, 1, 38);
  const auto x = random_tensor<double>(Shape{1, 1, 8, 8}, 39);
  const auto hr = random_tensor<double>(Shape{1, 1, 8, 8}, 40);
  const auto mt = make_mask(8, 6).tensor<double>();
  const double err = gradcheck({&w, &b}, [&](Graph<double>& g) {
    return ad::mask_psnr(g, ad::conv2d(g, g.input(x), g.param(w), g.param(b), 1), hr, mt, 255.0);
  });
  EXPECT_LT(err, 1e-5);
}

TEST(FiniteDiff, QuadraticIsExact) {
  auto p = make_param("p", Shape{1, 1, 1, 1}, 0, 41);
  p.value[0] = 0.7;
  p.grad[0] = 2 * 3.0 * 0.7;  // f = 3 p^2
  std::vector<Parameter<double>*> ps{&p};
  std::function<double()> f = [&] { return 3.0 * p.value[0] * p.value[0]; };
  EXPECT_LT(finite_diff_check<double>(f, ps, 1e-4), 1e-8);
}

TEST(FiniteDiff, ConstantFunction) {
  auto p = make_param("p", Shape{1, 1, 2, 2}, 0, 42);
  p.zero_grad();
  std::vector<Parameter<double>*> ps{&p};
  std::function<double()> f = [] { return 5.0; };
  EXPECT_EQ(finite_diff_check<double>(f, ps, 1e-5), 0.0);
}

TEST(FiniteDiff, NonFiniteLossThrows) {
  auto p = make_param("p", Shape{1, 1, 1, 1}, 0, 43);
  std::vector<Parameter<double>*> ps{&p};
  std::function<double()> f = [] { return std::nan(""); };
  EXPECT_THROW(finite_diff_check<double>(f, ps, 1e-5), std::runtime_error);
  std::function<double()> ok = [] { return 1.0; };
  EXPECT_THROW(finite_diff_check<double>(ok, ps, 0.0), std::invalid_argument);
}

TEST(GradCheck, FullToyModelBothLosses) {
  for (LossKind loss : {LossKind::l1, LossKind::mask_psnr}) {
    const double err = model_gradcheck(ModelConfig::toy(), loss, 1e-5, 7);
    EXPECT_LT(err, 1e-4) << to_string(loss);
  }
}

TEST(GradCheck, SubpixelAndAblatedVariants) {
  ModelConfig c = ModelConfig::toy();
  c.upsampler = Upsampler::subpixel;
  c.scale = 3;
  c.cm = false;
  c.gfb = false;
  EXPECT_LT(model_gradcheck(c, LossKind::l1, 1e-5, 8, 5), 1e-4);
}

// phi's bias shifts every score in an attention row by the same amount, which
// the softmax cancels, so its gradient vanishes identically.
TEST(GradCheck, AttentionPhiBiasGradientVanishes) {
  auto model = Model<double>::build(ModelConfig::toy(), 3);
  const auto x = testutil::random_tensor<double>(Shape{1, 1, 6, 6}, 31, 0.0, 1.0);
  const auto hr = testutil::random_tensor<double>(Shape{1, 1, 12, 12}, 32, 0.0, 1.0);
  Graph<double> g;
  TapeOps<double> ops(g);
  const Var l = ad::l1_loss(g, model.forward(ops, g.constant(x)), hr);
  model.load_gradients(g.backward(l));
  int seen = 0;
  double other = 0.0;
  for (auto* p : model.parameters()) {
    const bool phi_bias = p->name.find("nlb.phi.bias") != std::string::npos;
    for (double v : p->grad.values()) {
      if (phi_bias) EXPECT_LT(std::abs(v), 1e-14) << p->name;
      else other = std::max(other, std::abs(v));
    }
    seen += phi_bias;
  }
  EXPECT_GT(seen, 0);
  EXPECT_GT(other, 1e-6);
}

TEST(FiniteDiff, NoiseFloorScalesWithLossAndStep) {
  EXPECT_DOUBLE_EQ(fd_noise_floor(0.0, 1e-5), fd_noise_floor(1.0, 1e-5));
  EXPECT_NEAR(fd_noise_floor(10.0, 1e-5) / fd_noise_floor(1.0, 1e-5), 10.0, 1e-12);
  EXPECT_NEAR(fd_noise_floor(1.0, 1e-6) / fd_noise_floor(1.0, 1e-5), 10.0, 1e-12);
  EXPECT_LT(fd_noise_floor(1.0, 1e-5), 1e-5);
  EXPECT_GE(fd_noise_floor(0.0, 1.0), 1e-12);
}

TEST(Adam, ZeroGradientLeavesParameter) {
  auto p = make_param("p", Shape{1, 1, 2, 2}, 0, 44);
  const auto before = p.value;
  p.zero_grad();
  AdamState<double> st;
  std::vector<Parameter<double>*> ps{&p};
  adam_step<double>(ps, st, {});
  EXPECT_EQ(p.value, before);
  EXPECT_EQ(st.t, 1);
}

TEST(Adam, FirstStepClosedForm) {
  auto p = make_param("p", Shape{1, 1, 1, 3}, 0, 45);
  const auto before = p.value;
  p.grad = Tensor<double>::from(Shape{1, 1, 1, 3}, {0.5, -2.0, 1e-3});
  AdamOptions opt;
  opt.lr = 0.01;
  AdamState<double> st;
  std::vector<Parameter<double>*> ps{&p};
  adam_step<double>(ps, st, opt);
  for (std::size_t i = 0; i < 3; ++i) {
    const double g = p.grad[i];
    EXPECT_NEAR(p.value[i], before[i] - opt.lr * g / (std::abs(g) + opt.eps), 1e-12);
  }
}

TEST(Adam, DescendsScalarQuadratic) {
  Parameter<double> w("w", Shape{1, 1, 1, 1});
  w.value[0] = 1.0;
  AdamOptions opt;
  opt.lr = 0.1;
  AdamState<double> st;
  std::vector<Parameter<double>*> ps{&w};
  for (int i = 0; i < 100; ++i) {
    w.grad[0] = 2 * w.value[0];
    adam_step<double>(ps, st, opt);
  }
  EXPECT_LT(std::abs(w.value[0]), 0.5);
}

TEST(Adam, ShapeMismatchThrows) {
  Parameter<double> w("w", Shape{1, 1, 1, 2});
  w.grad = Tensor<double>(1, 1, 2, 1);
  AdamState<double> st;
  std::vector<Parameter<double>*> ps{&w};
  EXPECT_THROW(adam_step<double>(ps, st, {}), ShapeError);
}
