#include "otafl/estimators.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "otafl/dataset.hpp"
#include "otafl/loss.hpp"

namespace otafl {
namespace {

const LossModel kQuad{LossKind::Quadratic};

Sample zero_target(Vec x) { return Sample{std::move(x), 0.0}; }

std::vector<Dataset> quad_shards(std::size_t n_devices, std::size_t d,
                                 uint64_t seed, std::size_t per_device = 8) {
  Dataset ds = synth_zero_target(n_devices * per_device, d, seed);
  return partition_equal(ds, n_devices, seed).shards;
}

RoundRandomness fixed_randomness(Vec phi, std::vector<ChannelDraw> draws,
                                 double n1 = 0.0, double n2 = 0.0,
                                 double n3 = 0.0) {
  RoundRandomness rr;
  rr.phi = std::move(phi);
  rr.draws = std::move(draws);
  rr.noise1 = {n1, 0.0};
  rr.noise2 = {n2, 0.0};
  rr.noise3 = {n3, 0.0};
  return rr;
}

ChannelDraw unit_draw(double re, double im = 0.0) {
  ChannelDraw d;
  d.h_complex = {re, im};
  d.h_real = re;
  return d;
}

TEST(TwoPointDelta, ZeroGammaIsZero) {
  Sample s = zero_target({1.0, 1.0});
  EXPECT_EQ(two_point_delta(kQuad, s, {1.0, 0.0}, 0.0, {1.0, 1.0}), 0.0);
}

TEST(TwoPointDelta, QuadraticClosedForm) {
  // 1/2(1.1^2 + 0.1^2) - 1/2(0.9^2 + 0.1^2) = 0.2
  Sample s = zero_target({0.0, 0.0});
  double delta = two_point_delta(kQuad, s, {1.0, 0.0}, 0.1, {1.0, 1.0});
  EXPECT_NEAR(delta, 0.2, 1e-15);
}

TEST(TwoPointDelta, LipschitzBoundHolds) {
  // |delta f| <= 2 L_xi gamma ||phi|| with L_xi from data norms
  Rng rng(5, Stream::Trial);
  std::size_t d = 6;
  double gamma = 0.3;
  Vec theta(d);
  for (auto& v : theta) v = rng.gaussian();
  std::vector<Dataset> shards = quad_shards(1, d, 17);
  TheoryConstants tc =
      compute_constants(kQuad, shards, theta, gamma, PerturbationKind::Rademacher);
  for (int trial = 0; trial < 1000; ++trial) {
    Vec phi = sample_perturbation(d, PerturbationKind::Rademacher, 5, trial);
    Rng pick(6, Stream::Sample, 0, trial);
    const Sample& s = shards[0].samples[pick.uniform_index(shards[0].size())];
    double delta = two_point_delta(kQuad, s, theta, gamma, phi);
    EXPECT_LE(std::abs(delta),
              2.0 * tc.lipschitz * gamma * std::sqrt(double(d)) + 1e-12);
  }
}

TEST(Perturbation, RademacherSignsAndNorm) {
  Vec phi = sample_perturbation(16, PerturbationKind::Rademacher, 3, 9);
  double nsq = 0.0;
  for (double v : phi) {
    EXPECT_TRUE(v == 1.0 || v == -1.0);
    nsq += v * v;
  }
  EXPECT_DOUBLE_EQ(nsq, 16.0);
}

TEST(Perturbation, SphereNormIsSqrtD) {
  Vec phi = sample_perturbation(9, PerturbationKind::Sphere, 3, 9);
  EXPECT_NEAR(norm_sq(phi), 9.0, 1e-12);
}

TEST(Perturbation, CoordinateMomentsMatchAssumption) {
  const std::size_t d = 8, rounds = 200000;
  double sum0 = 0.0, sq0 = 0.0, cross = 0.0;
  for (std::size_t k = 0; k < rounds; ++k) {
    Vec phi = sample_perturbation(d, PerturbationKind::Rademacher, 21, k);
    sum0 += phi[0];
    sq0 += phi[0] * phi[0];
    cross += phi[0] * phi[1];
  }
  EXPECT_NEAR(sum0 / rounds, 0.0, 0.01);
  EXPECT_NEAR(sq0 / rounds, 1.0, 1e-12);  // exactly 1 per draw
  EXPECT_NEAR(cross / rounds, 0.0, 0.01);
}

TEST(EzoflRound, SingleDeviceNoiselessClosedForm) {
  // delta f = 0.4 via theta=(1,0), gamma=0.2, phi=(1,-1)
  Dataset shard;
  shard.samples = {zero_target({0.0, 0.0})};
  DeviceBatches batches{{&shard.samples[0]}};
  RoundRandomness rr = fixed_randomness({1.0, -1.0}, {unit_draw(1.0, -2.5)});
  Precoder a{{1.0}};
  GradEstimate e = ezofl_round(kQuad, batches, {1.0, 0.0}, 0.2, rr, a);
  EXPECT_NEAR(e.slot2, 0.4, 1e-15);
  EXPECT_DOUBLE_EQ(e.slot1, 1.0);
  EXPECT_NEAR(e.g[0], 0.4, 1e-15);
  EXPECT_NEAR(e.g[1], -0.4, 1e-15);
  EXPECT_TRUE(std::isnan(e.slot3));
}

TEST(EzoflRound, ZeroGammaZeroNoiseGivesZeroVector) {
  Dataset shard;
  shard.samples = {zero_target({0.0, 0.0})};
  DeviceBatches batches{{&shard.samples[0]}};
  RoundRandomness rr = fixed_randomness({1.0, 1.0}, {unit_draw(0.7)});
  Precoder a{{1.0}};
  GradEstimate e = ezofl_round(kQuad, batches, {1.0, 0.0}, 0.0, rr, a);
  EXPECT_EQ(e.g[0], 0.0);
  EXPECT_EQ(e.g[1], 0.0);
}

TEST(EfoflRound, SingleDeviceNoiselessClosedForm) {
  Dataset shard;
  shard.samples = {zero_target({0.0, 0.0})};
  DeviceBatches batches{{&shard.samples[0]}};
  RoundRandomness rr = fixed_randomness({1.0, 1.0}, {unit_draw(1.0)});
  Precoder a{{1.0}};
  GradEstimate e = efofl_round(kQuad, batches, {2.0, 0.0}, rr, a);
  EXPECT_DOUBLE_EQ(e.g[0], 2.0);
  EXPECT_DOUBLE_EQ(e.g[1], 2.0);
}

TEST(EfoflRound, StationaryPointGivesZero) {
  Dataset shard;
  shard.samples = {zero_target({0.0, 0.0})};
  DeviceBatches batches{{&shard.samples[0]}};
  RoundRandomness rr = fixed_randomness({1.0, -1.0}, {unit_draw(0.9)});
  Precoder a{{1.0}};
  GradEstimate e = efofl_round(kQuad, batches, {0.0, 0.0}, rr, a);
  EXPECT_EQ(e.g[0], 0.0);
  EXPECT_EQ(e.g[1], 0.0);
}

TEST(RankOne, AllCoordinatesShareMagnitude) {
  std::vector<Dataset> shards = quad_shards(3, 5, 31);
  ChannelConfig cfg;
  cfg.sigma_n = 0.3;
  Precoder a = precoder_constants(cfg, 3);
  Vec theta{0.4, -0.2, 0.9, 0.0, 1.1};
  DeviceBatches batches;
  for (auto& shard : shards) batches.push_back({&shard.samples[0]});
  RoundRandomness rr = sample_round_randomness(
      3, 5, PerturbationKind::Rademacher, cfg, 77, 0);
  GradEstimate e = ezofl_round(kQuad, batches, theta, 0.1, rr, a);
  for (std::size_t j = 1; j < 5; ++j)
    EXPECT_DOUBLE_EQ(std::abs(e.g[j]), std::abs(e.g[0]));
  EXPECT_DOUBLE_EQ(std::abs(e.g[0]), std::abs(e.product));
}

TEST(AsyncRound, EmptyLateSetMatchesSyncBitExactly) {
  std::vector<Dataset> shards = quad_shards(4, 3, 41);
  ChannelConfig cfg;
  cfg.sigma_n = 0.4;
  Precoder a = precoder_constants(cfg, 4);
  Vec theta{0.5, -1.0, 0.25};
  DeviceBatches batches;
  for (auto& shard : shards) batches.push_back({&shard.samples[1]});
  RoundRandomness rr = sample_round_randomness(
      4, 3, PerturbationKind::Rademacher, cfg, 11, 5);
  rr.noise3 = {0.0, 0.0};
  DeviceSplit split = DeviceSplit::all_sync(4);

  GradEstimate sync = ezofl_round(kQuad, batches, theta, 0.2, rr, a);
  GradEstimate async =
      ezofl_async_round(kQuad, batches, theta, 0.2, rr, a, split);
  EXPECT_EQ(sync.g, async.g);
  EXPECT_EQ(sync.slot1, async.slot1);
  EXPECT_EQ(sync.slot2, async.slot2);
  EXPECT_EQ(async.slot3, 0.0);

  GradEstimate fsync = efofl_round(kQuad, batches, theta, rr, a);
  GradEstimate fasync = efofl_async_round(kQuad, batches, theta, rr, a, split);
  EXPECT_EQ(fsync.g, fasync.g);
}

TEST(AsyncRound, AllDevicesLateStructure) {
  // n1 empty: estimate = phi * [n1*slot2 + slot3*slot2]
  Dataset shard;
  shard.samples = {zero_target({0.0, 0.0})};
  DeviceBatches batches{{&shard.samples[0]}};
  Vec theta{1.0, 0.0};
  double gamma = 0.2;
  RoundRandomness rr =
      fixed_randomness({1.0, -1.0}, {unit_draw(0.8)}, 0.3, 0.5, 0.7);
  Precoder a{{2.0}};
  DeviceSplit split;
  split.n2 = {0};

  GradEstimate e = ezofl_async_round(kQuad, batches, theta, gamma, rr, a, split);
  double delta = two_point_delta(kQuad, shard.samples[0], theta, gamma, rr.phi);
  double slot1 = 0.3;
  double slot2 = 2.0 * 0.8 + 0.5;
  double slot3 = delta * 0.8 + 0.7;
  EXPECT_NEAR(e.product, slot1 * slot2 + slot3 * slot2, 1e-15);
  EXPECT_NEAR(e.g[0], rr.phi[0] * e.product, 1e-15);
}

TEST(AsyncRound, RejectsBadSplits) {
  std::vector<Dataset> shards = quad_shards(3, 2, 51);
  DeviceBatches batches;
  for (auto& shard : shards) batches.push_back({&shard.samples[0]});
  RoundRandomness rr = fixed_randomness(
      {1.0, 1.0}, {unit_draw(1.0), unit_draw(1.0), unit_draw(1.0)});
  Precoder a{{1.0, 1.0, 1.0}};
  DeviceSplit overlap;
  overlap.n1 = {0, 1, 2};
  overlap.n2 = {2};
  EXPECT_THROW(
      ezofl_async_round(kQuad, batches, {0.0, 0.0}, 0.1, rr, a, overlap),
      std::invalid_argument);
  DeviceSplit gap;
  gap.n1 = {0};
  gap.n2 = {2};
  EXPECT_THROW(efofl_async_round(kQuad, batches, {0.0, 0.0}, rr, a, gap),
               std::invalid_argument);
}

// --- Monte-Carlo moment oracles ------------------------------------------

TEST(MomentOracle, EzoflQuadraticMeanIsC1GammaGradF) {
  // constant Hessians: the bias term vanishes exactly
  const std::size_t d = 2, n = 3;
  std::vector<Dataset> shards = quad_shards(n, d, 61);
  Vec theta{1.0, 0.0};
  double gamma = 0.1;
  ChannelConfig cfg;  // sigma_h = 1, noiseless
  MomentConfig mc;
  mc.trials = 1000000;
  mc.seed = 17;
  MomentStats stats =
      estimator_moments_mc(Estimator::Ezofl, kQuad, shards, theta, gamma, cfg,
                           DeviceSplit::all_sync(n), mc);
  Vec grad = global_grad(kQuad, theta, shards);  // = n * theta
  double c1 = 2.0;
  for (std::size_t j = 0; j < d; ++j)
    EXPECT_NEAR(stats.mean[j], c1 * gamma * grad[j], 3.0 * stats.se[j] + 1e-12)
        << "coordinate " << j;
  EXPECT_NEAR(stats.mean[0], 0.2 * double(n), 3.0 * stats.se[0]);
}

TEST(MomentOracle, EfoflMeanIsB1GradF) {
  const std::size_t d = 4, n = 3;
  std::vector<Dataset> shards = quad_shards(n, d, 71);
  ChannelConfig cfg;
  cfg.sigma_n = 0.5;
  Rng rng(8, Stream::Trial);
  for (int rep = 0; rep < 2; ++rep) {
    Vec theta(d);
    for (auto& v : theta) v = rng.gaussian();
    MomentConfig mc;
    mc.trials = 100000;
    mc.seed = 100 + rep;
    MomentStats stats =
        estimator_moments_mc(Estimator::Efofl, kQuad, shards, theta, 0.0, cfg,
                             DeviceSplit::all_sync(n), mc);
    Vec grad = global_grad(kQuad, theta, shards);
    double err = 0.0;
    for (std::size_t j = 0; j < d; ++j)
      err += (stats.mean[j] - grad[j]) * (stats.mean[j] - grad[j]);
    EXPECT_LE(std::sqrt(err), 3.0 * stats.aggregated_se()) << "rep " << rep;
  }
}

TEST(MomentOracle, AsyncMeansMatchSyncTargets) {
  const std::size_t d = 3, n = 4;
  std::vector<Dataset> shards = quad_shards(n, d, 81);
  Vec theta{0.6, -0.4, 0.2};
  double gamma = 0.1;
  ChannelConfig cfg;
  cfg.sigma_n = 0.25;
  DeviceSplit split;
  split.n1 = {0, 2};
  split.n2 = {1, 3};
  MomentConfig mc;
  mc.trials = 400000;
  mc.seed = 5;
  Vec grad = global_grad(kQuad, theta, shards);

  MomentStats zo = estimator_moments_mc(Estimator::EzoflAsync, kQuad, shards,
                                        theta, gamma, cfg, split, mc);
  double err = 0.0;
  for (std::size_t j = 0; j < d; ++j)
    err += (zo.mean[j] - 2.0 * gamma * grad[j]) *
           (zo.mean[j] - 2.0 * gamma * grad[j]);
  EXPECT_LE(std::sqrt(err), 3.0 * zo.aggregated_se());

  MomentStats fo = estimator_moments_mc(Estimator::EfoflAsync, kQuad, shards,
                                        theta, 0.0, cfg, split, mc);
  err = 0.0;
  for (std::size_t j = 0; j < d; ++j)
    err += (fo.mean[j] - grad[j]) * (fo.mean[j] - grad[j]);
  EXPECT_LE(std::sqrt(err), 3.0 * fo.aggregated_se());
}

TEST(ExactEnumeration, QuadraticMeanExactlyC1GammaGradF) {
  const std::size_t d = 4, n = 2;
  std::vector<Dataset> shards = quad_shards(n, d, 91);
  Vec theta{0.3, -0.8, 0.1, 0.5};
  double gamma = 0.07;
  Vec mean = exact_conditional_mean(Estimator::Ezofl, kQuad, shards, theta, gamma);
  Vec grad = global_grad(kQuad, theta, shards);
  for (std::size_t j = 0; j < d; ++j)
    EXPECT_NEAR(mean[j], 2.0 * gamma * grad[j], 1e-12);

  Vec fo = exact_conditional_mean(Estimator::Efofl, kQuad, shards, theta, 0.0);
  for (std::size_t j = 0; j < d; ++j) EXPECT_NEAR(fo[j], grad[j], 1e-12);
}

// True two-point bias of a smooth loss scales as gamma^2 (the printed
// Lemma-1 bound c3*gamma is only an upper bound): it quarters under
// gamma -> gamma/2.
TEST(ExactEnumeration, LogisticBiasScalesQuadratically) {
  LossModel logi{LossKind::NonconvexLogistic, 0.5};
  const std::size_t d = 5, n = 2;
  Dataset ds = synth_dataset(12, d, 7);
  std::vector<Dataset> shards = partition_equal(ds, n, 7).shards;
  Vec theta{0.4, -0.3, 0.6, 0.2, -0.5};
  Vec grad = global_grad(logi, theta, shards);

  auto bias_norm = [&](double gamma) {
    Vec mean = exact_conditional_mean(Estimator::Ezofl, logi, shards, theta, gamma);
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      double delta = mean[j] / (2.0 * gamma) - grad[j];
      acc += delta * delta;
    }
    return std::sqrt(acc);
  };
  double b1 = bias_norm(0.05), b2 = bias_norm(0.025);
  EXPECT_GT(b1, 0.0);
  EXPECT_NEAR(b2 / b1, 0.25, 0.05);

  // the paper's bound ||delta_k|| <= c3 gamma_k still dominates
  TheoryConstants tc =
      compute_constants(logi, shards, theta, 0.05, PerturbationKind::Rademacher);
  EXPECT_LE(b1, tc.c3(n) * 0.05);
  EXPECT_LE(b2, tc.c3(n) * 0.025);
}

// --- Closed-form second-moment bounds -------------------------------------

TEST(SecondMomentBound, NoiselessSingleDeviceClosedForm) {
  // sigma's = 0, N = 1, a = 1, b2^2 = d: C = 8 d^2 L^2 gamma^2
  TheoryConstants tc;
  tc.lipschitz = 1.7;
  std::size_t d = 6;
  tc.b2 = std::sqrt(double(d));
  ChannelConfig cfg;  // sigma_h = 1, sigma_n = 0
  double gamma = 0.3;
  double c = second_moment_bound(Estimator::Ezofl, tc, cfg, gamma, 1,
                                 DeviceSplit::all_sync(1));
  double expected = 8.0 * double(d) * double(d) * tc.lipschitz * tc.lipschitz *
                    gamma * gamma;
  EXPECT_NEAR(c, expected, 1e-12 * expected);
}

TEST(SecondMomentBound, ZeroGammaZeroNoiseIsZero) {
  TheoryConstants tc;
  ChannelConfig cfg;
  EXPECT_EQ(second_moment_bound(Estimator::Ezofl, tc, cfg, 0.0, 3,
                                DeviceSplit::all_sync(3)),
            0.0);
}

TEST(SecondMomentBound, AsyncDominatesSyncOnCalculators) {
  Rng rng(13, Stream::Trial);
  for (int trial = 0; trial < 50; ++trial) {
    TheoryConstants tc;
    tc.lipschitz = rng.uniform(0.1, 3.0);
    tc.grad_bound = rng.uniform(0.1, 3.0);
    std::size_t d = 2 + rng.uniform_index(8);
    tc.b2 = std::sqrt(double(d));
    std::size_t n = 2 + rng.uniform_index(6);
    ChannelConfig cfg;
    cfg.sigma_h = rng.uniform(0.3, 2.0);
    cfg.sigma_n = rng.uniform(0.0, 1.0);
    double gamma = rng.uniform(0.0, 0.5);
    std::size_t late = 1 + rng.uniform_index(n - 1);
    DeviceSplit split;
    for (std::size_t i = 0; i < n; ++i)
      (i < late ? split.n2 : split.n1).push_back(i);

    double c = second_moment_bound(Estimator::Ezofl, tc, cfg, gamma, n,
                                   DeviceSplit::all_sync(n));
    double cp = second_moment_bound(Estimator::EzoflAsync, tc, cfg, gamma, n, split);
    EXPECT_GE(cp, c) << "trial " << trial;

    double c2 = second_moment_bound(Estimator::Efofl, tc, cfg, gamma, n,
                                    DeviceSplit::all_sync(n));
    double c2p =
        second_moment_bound(Estimator::EfoflAsync, tc, cfg, gamma, n, split);
    EXPECT_GE(c2p, c2) << "trial " << trial;
  }
}

TEST(SecondMomentBound, DominatesEmpiricalSecondMoment) {
  Rng rng(14, Stream::Trial);
  for (int trial = 0; trial < 4; ++trial) {
    std::size_t d = 2 + rng.uniform_index(4);
    std::size_t n = 1 + rng.uniform_index(3);
    ChannelConfig cfg;
    cfg.sigma_h = rng.uniform(0.5, 1.5);
    cfg.sigma_n = rng.uniform(0.0, 0.8);
    double gamma = rng.uniform(0.02, 0.3);
    bool logistic = trial % 2 == 1;
    LossModel loss = logistic ? LossModel{LossKind::NonconvexLogistic, 0.1}
                              : LossModel{LossKind::Quadratic};
    Dataset ds = logistic ? synth_dataset(6 * n, d, 100 + trial)
                          : synth_zero_target(6 * n, d, 100 + trial);
    std::vector<Dataset> shards = partition_equal(ds, n, 3).shards;
    Vec theta(d);
    for (auto& v : theta) v = rng.gaussian(0.0, 0.5);
    TheoryConstants tc =
        compute_constants(loss, shards, theta, gamma, PerturbationKind::Rademacher);

    MomentConfig mc;
    mc.trials = 20000;
    mc.seed = 1000 + trial;
    for (Estimator est : {Estimator::Ezofl, Estimator::Efofl}) {
      MomentStats stats = estimator_moments_mc(
          est, loss, shards, theta, gamma, cfg, DeviceSplit::all_sync(n), mc);
      double bound = second_moment_bound(est, tc, cfg, gamma, n,
                                         DeviceSplit::all_sync(n));
      EXPECT_LE(stats.sqnorm_mean, bound)
          << estimator_name(est) << " trial " << trial;
    }
  }
}

}  // namespace
}  // namespace otafl
