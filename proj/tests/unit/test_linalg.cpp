#include "mcfloat/linalg.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "mcfloat/oracle.hpp"
#include "mcfloat/rng.hpp"

namespace mcf {
namespace {

double median_of(std::vector<double> v) {
  std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
  return v[v.size() / 2];
}

template <class P>
MCTensor<P> random_mc_matrix(Rng& rng, Shape shape, int nc, int magnitude = 0) {
  std::vector<ExactScalar> vals;
  for (std::size_t i = 0; i < shape_numel(shape); ++i) {
    ExactScalar v = sample_magnitude_exact(magnitude, rng);
    if (rng.below(2)) v = -v;
    vals.push_back(std::move(v));
  }
  return mct_from_exact<P>(vals, shape, nc);
}

template <class P>
NdArray random_std(Rng& rng, Shape shape, double lo = -2.0, double hi = 2.0) {
  NdArray out(shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = P::round(rng.uniform(lo, hi));
  return out;
}

/// Cancelling pairs with a tiny residual: the reduction that destroys plain
/// low-precision accumulation.
template <class P>
std::pair<MCTensor<P>, double> ill_conditioned_vector(Rng& rng, int n_pairs, int nc) {
  std::vector<double> vals;
  for (int i = 0; i < n_pairs; ++i) {
    const double a = P::round(rng.uniform(100.0, 2000.0));
    vals.push_back(a);
    vals.push_back(-a);
  }
  const double residual = P::round(rng.uniform(0x1p-18, 0x1p-14));
  vals.push_back(residual);
  rng.shuffle(vals);
  // residual must come before its absorbers to actually get lost
  std::vector<ExactScalar> exact;
  for (double v : vals) exact.push_back(ExactScalar(v));
  return {mct_from_exact<P>(exact, Shape{vals.size()}, nc), residual};
}

TEST(DotMcn, CountingAndZeroOperand) {
  const auto x = MCTensor<B32>::from_float(NdArray(Shape{17}, std::vector<double>(17, 1.0)), 2);
  const NdArray ones(Shape{17}, std::vector<double>(17, 1.0));
  const auto d = dot_mcn(x, ones);
  EXPECT_EQ(d.shape(), Shape{});
  EXPECT_EQ(d.approx()[0], 17.0);
  const auto z = dot_mcn(x, NdArray(Shape{17}));
  EXPECT_EQ(z.approx()[0], 0.0);
  EXPECT_THROW(dot_mcn(x, NdArray(Shape{3})), std::invalid_argument);
}

TEST(DotMcn, IllConditionedBeatsPlainByTwoOrders) {
  Rng rng(41);
  std::vector<double> plain_err, mc_err;
  for (int inst = 0; inst < 60; ++inst) {
    const auto [x2, residual] = ill_conditioned_vector<B16>(rng, 4, 2);
    const NdArray ones(Shape{x2.numel()}, std::vector<double>(x2.numel(), 1.0));
    const ExactScalar truth = ExactScalar(residual);

    const auto mc = dot_mcn(x2, ones);
    mc_err.push_back(rel_error(value_of_scalar(mc), truth).to_double());

    MCTensor<B16> x1(Shape{x2.numel()}, 1);
    for (std::size_t e = 0; e < x2.numel(); ++e) x1.comps(e)[0] = x2.comps(e)[0];
    const auto p = dot_mcn(x1, ones);
    plain_err.push_back(rel_error(value_of_scalar(p), truth).to_double());
  }
  EXPECT_GE(median_of(plain_err), 1e2 * std::max(median_of(mc_err), 1e-300));
}

TEST(MvMcn, IdentityZeroAndRowConsistency) {
  Rng rng(42);
  // identity matrix embeds v
  MCTensor<B32> eye(Shape{3, 3}, 2);
  for (int i = 0; i < 3; ++i) eye.comps(i * 3 + i)[0] = 1.0;
  const NdArray v(Shape{3}, std::vector<double>{2.0, -1.5, 0.25});
  const auto out = mv_mcn(eye, v);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(out.approx()[i], v[i]);

  const auto zero_out = mv_mcn(MCTensor<B32>(Shape{3, 3}, 2), v);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(zero_out.approx()[i], 0.0);

  // each output row equals the dot product of that row, bitwise
  const auto x = random_mc_matrix<B32>(rng, Shape{4, 6}, 2);
  const NdArray w = random_std<B32>(rng, Shape{6});
  const auto mv = mv_mcn(x, w);
  for (std::size_t i = 0; i < 4; ++i) {
    MCTensor<B32> row(Shape{6}, 2);
    for (std::size_t j = 0; j < 6; ++j) {
      for (int c = 0; c < 2; ++c) row.comps(j)[c] = x.comps(i * 6 + j)[c];
    }
    const auto d = dot_mcn(row, w);
    for (int c = 0; c < 2; ++c) EXPECT_EQ(mv.comps(i)[c], d.comps(0)[c]);
  }
  EXPECT_THROW(mv_mcn(x, NdArray(Shape{5})), std::invalid_argument);
}

TEST(MmMcn, IdentityAndOracleAgreement) {
  Rng rng(43);
  const auto a = random_mc_matrix<B32>(rng, Shape{2, 2}, 2);
  NdArray eye(Shape{2, 2});
  eye.at(0, 0) = eye.at(1, 1) = 1.0;
  const auto ai = mm_mcn(a, eye);
  for (std::size_t e = 0; e < 4; ++e) {
    for (int c = 0; c < 2; ++c) EXPECT_EQ(ai.comps(e)[c], a.comps(e)[c]);
  }

  const NdArray w = random_std<B32>(rng, Shape{2, 2});
  const auto prod = mm_mcn(a, w);
  const auto va = value_of(a);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      const ExactScalar truth = va[i * 2 + 0] * ExactScalar(w.at(0, j)) +
                                va[i * 2 + 1] * ExactScalar(w.at(1, j));
      if (!truth.is_zero()) {
        EXPECT_LT(rel_error(value_of_scalar(prod, i * 2 + j), truth),
                  ExactScalar::pow2(-40));
      }
    }
  }
  EXPECT_THROW(mm_mcn(a, NdArray(Shape{3, 2})), std::invalid_argument);
}

TEST(MmMcn, McByMcIsUnsupported) {
  const MCTensor<B32> a(Shape{2, 2}, 2);
  EXPECT_THROW(mm_mcn(a, a), unsupported_operation);
}

TEST(BmmMcn, SingleBatchMatchesMmAndEmptyBatchWorks) {
  Rng rng(44);
  const auto x2 = random_mc_matrix<B32>(rng, Shape{3, 4}, 2);
  MCTensor<B32> x3(Shape{1, 3, 4}, 2);
  for (std::size_t e = 0; e < 12; ++e) {
    for (int c = 0; c < 2; ++c) x3.comps(e)[c] = x2.comps(e)[c];
  }
  const NdArray w2 = random_std<B32>(rng, Shape{4, 2});
  NdArray w3(Shape{1, 4, 2});
  for (std::size_t i = 0; i < 8; ++i) w3[i] = w2[i];

  const auto mm = mm_mcn(x2, w2);
  const auto bmm = bmm_mcn(x3, w3);
  ASSERT_EQ(bmm.shape(), (Shape{1, 3, 2}));
  for (std::size_t e = 0; e < mm.numel(); ++e) {
    for (int c = 0; c < 2; ++c) EXPECT_EQ(bmm.comps(e)[c], mm.comps(e)[c]);
  }

  const auto empty = bmm_mcn(MCTensor<B32>(Shape{0, 3, 4}, 2), NdArray(Shape{0, 4, 2}));
  EXPECT_EQ(empty.numel(), 0u);

  // batches are independent: each batch equals its own mm
  const auto xb = random_mc_matrix<B32>(rng, Shape{3, 2, 4}, 2);
  const NdArray wb = random_std<B32>(rng, Shape{3, 4, 2});
  const auto out = bmm_mcn(xb, wb);
  for (std::size_t b = 0; b < 3; ++b) {
    MCTensor<B32> xs(Shape{2, 4}, 2);
    NdArray ws(Shape{4, 2});
    for (std::size_t e = 0; e < 8; ++e) {
      for (int c = 0; c < 2; ++c) xs.comps(e)[c] = xb.comps(b * 8 + e)[c];
      ws[e] = wb[b * 8 + e];
    }
    const auto ref = mm_mcn(xs, ws);
    for (std::size_t e = 0; e < 4; ++e) {
      for (int c = 0; c < 2; ++c) {
        EXPECT_EQ(out.comps(b * 4 + e)[c], ref.comps(e)[c]);
      }
    }
  }
}

TEST(AddmmMcn, ScalarFactorsAndOracle) {
  Rng rng(45);
  const auto bias = random_mc_matrix<B32>(rng, Shape{3}, 2);
  const auto x = random_mc_matrix<B32>(rng, Shape{3, 3}, 2);
  const NdArray w = random_std<B32>(rng, Shape{3, 3});

  // alpha = 0 leaves beta * bias broadcast over rows
  const auto only_bias = addmm_mcn(bias, x, w, 0.0, 2.0);
  const auto vb = value_of(bias);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_LT(rel_error(value_of_scalar(only_bias, i * 3 + j),
                          vb[j] * ExactScalar(2L)),
                ExactScalar::pow2(-44));
    }
  }

  // alpha = beta = 1: the linear-layer composition against the oracle
  const auto out = addmm_mcn(bias, x, w);
  const auto vx = value_of(x);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      ExactScalar truth = vb[j];
      for (std::size_t k = 0; k < 3; ++k) {
        truth = truth + vx[i * 3 + k] * ExactScalar(w.at(k, j));
      }
      if (!truth.is_zero()) {
        EXPECT_LT(rel_error(value_of_scalar(out, i * 3 + j), truth),
                  ExactScalar::pow2(-38));
      }
    }
  }
}

TEST(MatmulMcn, DispatchesBitwiseToSpecializedOps) {
  Rng rng(46);
  const ReductionPlan plan{};
  const auto xv = random_mc_matrix<B32>(rng, Shape{5}, 2);
  const NdArray wv = random_std<B32>(rng, Shape{5});
  const auto d1 = matmul_mcn(xv, wv), d2 = dot_mcn(xv, wv, plan);
  EXPECT_EQ(d1.raw(), d2.raw());

  const auto xm = random_mc_matrix<B32>(rng, Shape{3, 5}, 2);
  const auto m1 = matmul_mcn(xm, wv), m2 = mv_mcn(xm, wv, plan);
  EXPECT_EQ(m1.raw(), m2.raw());

  const NdArray wm = random_std<B32>(rng, Shape{5, 4});
  const auto p1 = matmul_mcn(xm, wm), p2 = mm_mcn(xm, wm, plan);
  EXPECT_EQ(p1.raw(), p2.raw());

  // vector @ matrix
  const auto r1 = matmul_mcn(xv, wm);
  EXPECT_EQ(r1.shape(), Shape{4});
  MCTensor<B32> row(Shape{1, 5}, 2);
  for (std::size_t e = 0; e < 5; ++e) {
    for (int c = 0; c < 2; ++c) row.comps(e)[c] = xv.comps(e)[c];
  }
  const auto r2 = mm_mcn(row, wm, plan);
  EXPECT_EQ(r1.raw(), r2.raw());

  const auto xb = random_mc_matrix<B32>(rng, Shape{2, 3, 5}, 2);
  const NdArray wb = random_std<B32>(rng, Shape{2, 5, 4});
  EXPECT_EQ(matmul_mcn(xb, wb).raw(), bmm_mcn(xb, wb, plan).raw());

  EXPECT_THROW(matmul_mcn(xm, NdArray(Shape{3, 2})), std::invalid_argument);
  try {
    matmul_mcn(xm, NdArray(Shape{3, 2}));
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("(3,5)"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("(3,2)"), std::string::npos);
  }
}

TEST(MatmulMcn, Rank4MatchesLoopedMm) {
  Rng rng(47);
  const auto x = random_mc_matrix<B32>(rng, Shape{2, 2, 3, 4}, 2);
  const NdArray w = random_std<B32>(rng, Shape{2, 2, 4, 2});
  const auto out = matmul_mcn(x, w);
  ASSERT_EQ(out.shape(), (Shape{2, 2, 3, 2}));
  for (std::size_t b = 0; b < 4; ++b) {
    MCTensor<B32> xs(Shape{3, 4}, 2);
    NdArray ws(Shape{4, 2});
    for (std::size_t e = 0; e < 12; ++e) {
      for (int c = 0; c < 2; ++c) xs.comps(e)[c] = x.comps(b * 12 + e)[c];
    }
    for (std::size_t e = 0; e < 8; ++e) ws[e] = w[b * 8 + e];
    const auto ref = mm_mcn(xs, ws);
    for (std::size_t e = 0; e < 6; ++e) {
      for (int c = 0; c < 2; ++c) {
        ASSERT_EQ(out.comps(b * 6 + e)[c], ref.comps(e)[c]);
      }
    }
  }

  // unbatched working-precision operand broadcasts over batch dims
  const NdArray w2 = random_std<B32>(rng, Shape{4, 2});
  const auto bc = matmul_mcn(x, w2);
  for (std::size_t b = 0; b < 4; ++b) {
    MCTensor<B32> xs(Shape{3, 4}, 2);
    for (std::size_t e = 0; e < 12; ++e) {
      for (int c = 0; c < 2; ++c) xs.comps(e)[c] = x.comps(b * 12 + e)[c];
    }
    const auto ref = mm_mcn(xs, w2);
    for (std::size_t e = 0; e < 6; ++e) {
      for (int c = 0; c < 2; ++c) {
        ASSERT_EQ(bc.comps(b * 6 + e)[c], ref.comps(e)[c]);
      }
    }
  }
}

TEST(MatmulMcn, SingleComponentMatchesPlainMatmulBitwise) {
  Rng rng(48);
  auto check = [&]<class P>() {
    for (int i = 0; i < 40; ++i) {
      const NdArray a = random_std<P>(rng, Shape{4, 6});
      const NdArray b = random_std<P>(rng, Shape{6, 3});
      const auto a_mc = MCTensor<P>::from_float(a, 1);
      const auto mc = mm_mcn(a_mc, b);
      const NdArray plain = matmul2d<P>(a, b);
      for (std::size_t e = 0; e < plain.numel(); ++e) {
        ASSERT_EQ(mc.comps(e)[0], plain[e]) << P::name;
      }
    }
  };
  check.template operator()<B16>();
  check.template operator()<B32>();
  check.template operator()<B64>();
}

TEST(MatmulMcn, ScalarPullOutWithinTwoUlp) {
  Rng rng(49);
  const auto x = random_mc_matrix<B32>(rng, Shape{3, 4}, 2);
  const NdArray w = random_std<B32>(rng, Shape{4, 2});
  const double a = 0.8125;  // exactly representable
  NdArray aw(Shape{4, 2});
  for (std::size_t i = 0; i < 8; ++i) aw[i] = fl_mul<B32>(a, w[i]);
  const NdArray lhs = matmul_mcn(x, aw).approx();
  const NdArray rhs = matmul_mcn(x, w).approx();
  for (std::size_t e = 0; e < lhs.numel(); ++e) {
    const double scaled = fl_mul<B32>(a, rhs[e]);
    EXPECT_LE(std::fabs(lhs[e] - scaled), 2 * ulp<B32>(scaled));
  }
}

TEST(ReductionPlans, PairwiseTreeAgreesWithSequentialValues) {
  Rng rng(50);
  const auto x = random_mc_matrix<B32>(rng, Shape{64}, 2);
  const NdArray v = random_std<B32>(rng, Shape{64});
  const auto seq = dot_mcn(x, v, {ReduceStrategy::kSequential, 1});
  const auto tree = dot_mcn(x, v, {ReduceStrategy::kPairwiseTree, 1});
  const auto tree4 = dot_mcn(x, v, {ReduceStrategy::kPairwiseTree, 4});
  ExactScalar truth;
  const auto vx = value_of(x);
  for (std::size_t i = 0; i < 64; ++i) truth = truth + vx[i] * ExactScalar(v[i]);
  for (const auto* r : {&seq, &tree, &tree4}) {
    EXPECT_LT(rel_error(value_of_scalar(*r), truth), ExactScalar::pow2(-38));
  }
}

TEST(ErrorOrdering, TwoComponentsStrictlyImproveIllConditionedReductions) {
  Rng rng(51);
  std::vector<double> err1, err2;
  for (int inst = 0; inst < 100; ++inst) {
    const auto [x2, residual] = ill_conditioned_vector<B32>(rng, 6, 2);
    MCTensor<B32> x1(Shape{x2.numel()}, 1);
    for (std::size_t e = 0; e < x2.numel(); ++e) x1.comps(e)[0] = x2.comps(e)[0];
    const NdArray ones(Shape{x2.numel()}, std::vector<double>(x2.numel(), 1.0));
    const ExactScalar truth(residual);
    err1.push_back(rel_error(value_of_scalar(dot_mcn(x1, ones)), truth).to_double());
    err2.push_back(rel_error(value_of_scalar(dot_mcn(x2, ones)), truth).to_double());
  }
  EXPECT_LT(median_of(err2), median_of(err1));
}

TEST(McTranspose, RoundTrip) {
  Rng rng(52);
  const auto x = random_mc_matrix<B32>(rng, Shape{3, 5}, 2);
  const auto back = mc_transpose2d(mc_transpose2d(x));
  EXPECT_EQ(back.raw(), x.raw());
}

}  // namespace
}  // namespace mcf
