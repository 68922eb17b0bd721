#include "otafl/schedules.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace otafl {
namespace {

TEST(Diminishing, StartsAtA0) {
  EXPECT_DOUBLE_EQ(diminishing(0, 0.7, 0.5), 0.7);
}

TEST(Diminishing, MatchesExperimentCoefficients) {
  // alpha_k = 0.5 (1+k)^-0.50 at k=3, gamma_k = 2.5 (1+k)^-0.25 at k=15
  EXPECT_NEAR(diminishing(3, 0.5, 0.5), 0.25, 1e-15);
  EXPECT_NEAR(diminishing(15, 2.5, 0.25), 1.25, 1e-15);
}

TEST(Diminishing, StrictlyDecreasingToZero) {
  double prev = diminishing(0, 1.0, 0.3);
  for (std::size_t k = 1; k < 200; ++k) {
    double cur = diminishing(k, 1.0, 0.3);
    EXPECT_LT(cur, prev);
    prev = cur;
  }
  EXPECT_LT(diminishing(1000000000, 1.0, 0.3), 1e-2);
}

TEST(Assumption3, AcceptsExperimentExponents) {
  EXPECT_TRUE(validate_assumption3(0.5, 0.25).ok);
}

TEST(Assumption3, RejectsSlowDecay) {
  Assumption3Report r = validate_assumption3(0.1, 0.1);
  EXPECT_FALSE(r.ok);
  // u1+3u2 = 0.4 <= 1 and u1+u2 = 0.2 <= 0.5: two violations
  EXPECT_EQ(r.violations.size(), 2u);
}

TEST(Assumption3, RejectsZeroExponent) {
  EXPECT_FALSE(validate_assumption3(1.0, 0.0).ok);
}

TEST(Assumption3, GridAgreesWithDirectInequalities) {
  for (double u1 = -0.2; u1 <= 1.4; u1 += 0.1) {
    for (double u2 = -0.2; u2 <= 1.4; u2 += 0.1) {
      bool expected = u1 > 0.0 && u2 > 0.0 && u1 + u2 <= 1.0 &&
                      u1 + 3.0 * u2 > 1.0 && u1 + u2 > 0.5;
      EXPECT_EQ(validate_assumption3(u1, u2).ok, expected)
          << "u1=" << u1 << " u2=" << u2;
    }
  }
}

TEST(ScheduleKinds, ConstantStepsScaleWithHorizon) {
  Schedule zo;
  zo.kind = Schedule::Kind::ConstantZO;
  zo.eta0 = 2.0;
  zo.gamma0 = 4.0;
  zo.horizon = 16;
  EXPECT_DOUBLE_EQ(zo.eta(0), 1.0);    // 2 * 16^-1/4
  EXPECT_DOUBLE_EQ(zo.gamma(7), 2.0);  // 4 * 16^-1/4
  EXPECT_DOUBLE_EQ(zo.eta(15), zo.eta(0));

  Schedule fo;
  fo.kind = Schedule::Kind::ConstantFO;
  fo.eta0 = 2.0;
  fo.horizon = 16;
  EXPECT_DOUBLE_EQ(fo.eta(3), 0.5);  // 2 * 16^-1/2
}

TEST(Theorem2Iterations, UnitConstantsPlugIn) {
  // Dhat=1, eta0=gamma0=1, c1=2*b1 -> choose b1=1/2 to make c1=1,
  // c3=0 via hessian_bound=0, C=0, mu=1, eps=beta=0.1:
  // K = 1e4 * (2)^2 = 40000
  TheoryConstants tc;
  tc.b1 = 0.5;
  tc.hessian_bound = 0.0;
  tc.smoothness = 1.0;
  tc.delta_hat = 1.0;
  EXPECT_DOUBLE_EQ(theorem2_iterations(0.1, 0.1, tc, 1, 0.0, 1.0, 1.0), 40000.0);
}

TEST(Theorem2Iterations, QuadraticScalingInEps) {
  TheoryConstants tc;
  tc.delta_hat = 2.3;
  tc.hessian_bound = 0.4;
  tc.b2 = 2.0;
  double k1 = theorem2_iterations(0.05, 0.2, tc, 3, 1.5, 0.7, 0.9);
  double k2 = theorem2_iterations(0.10, 0.2, tc, 3, 1.5, 0.7, 0.9);
  EXPECT_NEAR(k1 / k2, 4.0, 1e-6);
}

TEST(Theorem2Iterations, BetaRoundTrips) {
  TheoryConstants tc;
  tc.delta_hat = 1.7;
  tc.hessian_bound = 0.2;
  double eps = 0.05, beta = 0.1;
  double k = theorem2_iterations(eps, beta, tc, 2, 0.8, 0.5, 1.5);
  double beta_back = theorem2_beta(eps, k, tc, 2, 0.8, 0.5, 1.5);
  EXPECT_LE(beta_back, beta);  // ceiling only shrinks the failure probability
  EXPECT_NEAR(beta_back, beta, beta * 1e-3);
}

TEST(Theorem4Iterations, UnitConstantsPlugIn) {
  // Dhat=1, b1=1, eta0=1, mu*C2=2 (mu=1, C2=2), eps=beta=0.1:
  // K = 1e4 * (1+1)^2 = 40000
  TheoryConstants tc;
  EXPECT_DOUBLE_EQ(theorem4_iterations(0.1, 0.1, tc, 2.0, 1.0), 40000.0);
}

TEST(Theorem4Iterations, InverseSquareBetaScaling) {
  TheoryConstants tc;
  tc.delta_hat = 0.9;
  double k1 = theorem4_iterations(0.1, 0.05, tc, 1.2, 0.4);
  double k2 = theorem4_iterations(0.1, 0.10, tc, 1.2, 0.4);
  EXPECT_NEAR(k1 / k2, 4.0, 1e-6);
}

TEST(Theorem4Iterations, AsyncBoundNeedsMoreIterations) {
  TheoryConstants tc;
  double c2 = 1.3, c2_async = 2.6;  // async moment bound dominates sync
  EXPECT_GE(theorem4_iterations(0.1, 0.1, tc, c2_async, 1.0),
            theorem4_iterations(0.1, 0.1, tc, c2, 1.0));
}

TEST(TheoremCalculators, RejectBadProbabilities) {
  TheoryConstants tc;
  EXPECT_THROW(theorem2_iterations(0.0, 0.1, tc, 1, 0.0, 1.0, 1.0),
               std::invalid_argument);
  EXPECT_THROW(theorem4_iterations(0.1, 0.0, tc, 1.0, 1.0),
               std::invalid_argument);
  EXPECT_THROW(theorem2_iterations(1.5, 0.1, tc, 1, 0.0, 1.0, 1.0),
               std::invalid_argument);
}

TEST(RateBound, HalvesWhenHorizonQuadruples) {
  TheoryConstants tc;
  tc.delta_hat = 1.4;
  tc.hessian_bound = 0.3;
  double b1 = rate_bound_thm2(100.0, 0.5, 1.5, tc, 2, 0.7);
  double b2 = rate_bound_thm2(400.0, 0.5, 1.5, tc, 2, 0.7);
  EXPECT_NEAR(b2 / b1, 0.5, 1e-12);
}

TEST(RateBound, UnitConstantsPlugIn) {
  // all constants 1 (c1 = 2*b1 = 1 via b1 = 1/2; c3 = 1 via b*b2^3*N/(2 b1)
  // with b=1, b2=1, N=1) at K=100: (2 + 1 + 1)/10 = 0.4
  TheoryConstants tc;
  tc.b1 = 0.5;
  tc.b2 = 1.0;
  tc.hessian_bound = 1.0;
  tc.smoothness = 1.0;
  tc.delta_hat = 1.0;
  EXPECT_DOUBLE_EQ(tc.c1(), 1.0);
  EXPECT_DOUBLE_EQ(tc.c3(1), 1.0);
  EXPECT_DOUBLE_EQ(rate_bound_thm2(100.0, 1.0, 1.0, tc, 1, 1.0), 0.4);
}

TEST(RateBound, MonotoneInDeltaHatAndBound) {
  TheoryConstants lo, hi;
  hi.delta_hat = lo.delta_hat * 2.0;
  EXPECT_GT(rate_bound_thm2(50.0, 1.0, 1.0, hi, 2, 1.0),
            rate_bound_thm2(50.0, 1.0, 1.0, lo, 2, 1.0));
  EXPECT_GT(rate_bound_thm4(50.0, 1.0, lo, 2.0), rate_bound_thm4(50.0, 1.0, lo, 1.0));
  EXPECT_GT(theorem2_iterations(0.1, 0.1, hi, 2, 1.0, 1.0, 1.0),
            theorem2_iterations(0.1, 0.1, lo, 2, 1.0, 1.0, 1.0));
}

}  // namespace
}  // namespace otafl
