#include "mcfloat/optim.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "mcfloat/oracle.hpp"
#include "mcfloat/rng.hpp"

namespace mcf {
namespace {

template <class P>
MCTensor<P> scalar_param(double v, int nc) {
  return MCTensor<P>::from_float(NdArray::scalar(v), nc);
}

TEST(McSgd, ZeroLearningRateLeavesParamsBitwise) {
  auto p = scalar_param<B16>(1.0, 2);
  p.ensure_grad()[0] = 0.25;
  MCSGD<B16> opt({{"p", &p}}, {.lr = 0.0});
  const auto before = p.raw();
  opt.step();
  EXPECT_EQ(p.raw(), before);
}

TEST(McSgd, ZeroGradLeavesParamsBitwise) {
  auto p = scalar_param<B16>(0.875, 2);
  p.ensure_grad();
  MCSGD<B16> opt({{"p", &p}}, {.lr = 0.5});
  const auto before = p.raw();
  opt.step();
  EXPECT_EQ(p.raw(), before);
}

TEST(McSgd, MissingGradNamesParameter) {
  auto p = scalar_param<B16>(1.0, 2);
  MCSGD<B16> opt({{"theta", &p}}, {.lr = 0.1});
  try {
    opt.step();
    FAIL() << "expected error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("theta"), std::string::npos);
  }
}

// A 2^-20 update on a parameter at 1.0 vanishes in plain binary16 but lands
// exactly in the second component of a 2-MC parameter.
TEST(McSgd, TinyUpdateSurvivesInSecondComponent) {
  auto mc = scalar_param<B16>(1.0, 2);
  auto plain = scalar_param<B16>(1.0, 1);
  // lr = 1, grad = 2^-20 -> update is -2^-20
  mc.ensure_grad()[0] = 0x1p-20;
  plain.ensure_grad()[0] = 0x1p-20;
  MCSGD<B16> o1({{"p", &mc}}, {.lr = 1.0});
  MCSGD<B16> o2({{"p", &plain}}, {.lr = 1.0});
  o1.step();
  o2.step();
  EXPECT_EQ(value_of_scalar(mc), ExactScalar(1L) - ExactScalar::pow2(-20));
  EXPECT_EQ(plain.comps(0)[0], 1.0);
}

TEST(McSgd, MomentumZeroEqualsVanillaTrajectory) {
  Rng rng(1);
  auto a = scalar_param<B32>(0.5, 2);
  auto b = scalar_param<B32>(0.5, 2);
  MCSGD<B32> with_momentum({{"p", &a}}, {.lr = 0.125, .momentum = 0.0});
  MCSGD<B32> vanilla({{"p", &b}}, {.lr = 0.125});
  for (int i = 0; i < 50; ++i) {
    const double g = B32::round(rng.uniform(-1.0, 1.0));
    a.ensure_grad()[0] = g;
    b.ensure_grad()[0] = g;
    with_momentum.step();
    vanilla.step();
    ASSERT_EQ(a.raw(), b.raw());
    a.zero_grad();
    b.zero_grad();
  }
}

TEST(McSgd, UpdateConservation) {
  // value(after) - value(before) == -lr*u up to one ulp of the last kept
  // component.
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    auto p = mct_scalar_from_exact<B32>(sample_magnitude_exact(0, rng), 2);
    const double g = B32::round(rng.uniform(-1.0, 1.0));
    const double lr = 0.0625;
    const ExactScalar before = value_of_scalar(p);
    p.ensure_grad()[0] = g;
    MCSGD<B32> opt({{"p", &p}}, {.lr = lr});
    opt.step();
    const ExactScalar update(-fl_mul<B32>(B32::round(lr), g));
    const ExactScalar err = (value_of_scalar(p) - before - update).abs();
    const double last = p.comps(0)[1] != 0.0 ? p.comps(0)[1] : p.comps(0)[0];
    EXPECT_LE(err, ExactScalar(ulp<B32>(last)));
  }
}

// Accumulation study: 1000 updates of -2^-14 * delta. The 2-MC parameter
// tracks the exact sum to well below one plain-B16 ulp; plain B16 never
// moves (every update is below half an ulp of 1.0) and drifts by the whole
// accumulated sum.
TEST(McSgd, TinyUpdateRetentionStudy) {
  for (const double delta : {0.1, 0.25, 0.5, 1.0}) {
    const double upd = B16::round(0x1p-14 * delta);
    auto mc = scalar_param<B16>(1.0, 2);
    auto plain = scalar_param<B16>(1.0, 1);
    MCSGD<B16> o1({{"p", &mc}}, {.lr = 1.0});
    MCSGD<B16> o2({{"p", &plain}}, {.lr = 1.0});
    ExactScalar exact(1L);
    for (int step = 0; step < 1000; ++step) {
      mc.ensure_grad()[0] = upd;
      plain.ensure_grad()[0] = upd;
      o1.step();
      o2.step();
      mc.zero_grad();
      plain.zero_grad();
      exact = exact - ExactScalar(fl_mul<B16>(B16::round(1.0), upd));
    }
    const double mc_err = (value_of_scalar(mc) - exact).abs().to_double();
    const double plain_err = (value_of_scalar(plain) - exact).abs().to_double();
    EXPECT_EQ(plain.comps(0)[0], 1.0) << "plain B16 stalls at 1.0";
    EXPECT_LT(mc_err, 0x1p-20) << "delta=" << delta;
    EXPECT_GT(plain_err, 10.0 * std::max(mc_err, 0x1p-24)) << "delta=" << delta;
  }
}

TEST(McSgd, McStateMomentumAccumulatesTinyGradients) {
  // With momentum 1 the velocity is the gradient sum. Feeding gradients of
  // 2^-14 on top of a velocity of 1.0 stalls a plain binary16 buffer (each
  // increment is below half an ulp) while the 2-MC buffer keeps them all.
  const double g = 0x1p-14;
  auto p_std = scalar_param<B16>(8.0, 2);
  auto p_mc = scalar_param<B16>(8.0, 2);
  MCSGD<B16> std_state({{"p", &p_std}}, {.lr = 0.5, .momentum = 1.0});
  MCSGD<B16> mc_state({{"p", &p_mc}}, {.lr = 0.5, .momentum = 1.0, .mc_state = true});

  auto feed = [](MCTensor<B16>& p, MCSGD<B16>& opt, double grad) {
    p.ensure_grad()[0] = grad;
    opt.step();
    p.zero_grad();
  };
  feed(p_std, std_state, 1.0);
  feed(p_mc, mc_state, 1.0);
  for (int i = 0; i < 512; ++i) {
    feed(p_std, std_state, g);
    feed(p_mc, mc_state, g);
  }
  // Observe the final velocity through one zero-grad step: delta = lr * u.
  const ExactScalar before_std = value_of_scalar(p_std);
  const ExactScalar before_mc = value_of_scalar(p_mc);
  feed(p_std, std_state, 0.0);
  feed(p_mc, mc_state, 0.0);
  const double d_std = (before_std - value_of_scalar(p_std)).to_double();
  const double d_mc = (before_mc - value_of_scalar(p_mc)).to_double();
  EXPECT_NEAR(d_std, 0.5 * 1.0, 1e-6);           // plain buffer stalled at 1
  EXPECT_NEAR(d_mc, 0.5 * (1.0 + 512 * g), 1e-3);  // MC buffer kept the mass
}

TEST(McAdam, ZeroGradMeansZeroUpdate) {
  auto p = scalar_param<B32>(0.75, 2);
  p.ensure_grad();
  MCAdam<B32> opt({{"p", &p}}, {});
  const auto before = p.raw();
  opt.step();
  opt.step();
  EXPECT_EQ(p.raw(), before);
}

TEST(McAdam, FirstStepIsSignScaled) {
  for (const double g : {0.5, -2.0, 10.0}) {
    auto p = scalar_param<B64>(1.0, 2);
    p.ensure_grad()[0] = g;
    MCAdam<B64> opt({{"p", &p}}, {.lr = 0.01});
    opt.step();
    const double moved = 1.0 - p.approx()[0];
    EXPECT_NEAR(moved, 0.01 * (g > 0 ? 1.0 : -1.0), 1e-5);
  }
}

TEST(McAdam, MissingGradNamesParameter) {
  auto p = scalar_param<B32>(1.0, 2);
  MCAdam<B32> opt({{"w", &p}}, {});
  try {
    opt.step();
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("w"), std::string::npos);
  }
}

// B32 2-MC Adam follows a binary64 reference Adam on a quadratic bowl.
TEST(McAdam, TracksReferenceOnQuadratic) {
  const NdArray target(Shape{4}, {0.3, -0.7, 1.2, 0.05});
  auto p32 = MCTensor<B32>::from_float(NdArray(Shape{4}), 2);
  auto p64 = MCTensor<B64>::from_float(NdArray(Shape{4}), 1);
  MCAdam<B32> opt32({{"p", &p32}}, {.lr = 0.05});
  MCAdam<B64> opt64({{"p", &p64}}, {.lr = 0.05});
  for (int step = 0; step < 100; ++step) {
    const NdArray v32 = p32.approx();
    const NdArray v64 = p64.approx();
    NdArray& g32 = p32.ensure_grad();
    NdArray& g64 = p64.ensure_grad();
    for (std::size_t i = 0; i < 4; ++i) {
      g32[i] = B32::round(2.0 * (v32[i] - target[i]));
      g64[i] = 2.0 * (v64[i] - target[i]);
    }
    opt32.step();
    opt64.step();
    p32.zero_grad();
    p64.zero_grad();
  }
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(p32.approx()[i], p64.approx()[i], 1e-2);
  }
}

}  // namespace
}  // namespace mcf
