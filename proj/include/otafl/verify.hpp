// Monte-Carlo verification suites for the estimator moment claims: bias
// structure and second-moment bounds of the zero-order estimate, exact
// conditional mean of the first-order estimate, and the async variants'
// bound dominance. Each suite returns structured pass/fail results; the CLI
// prints them one line per check.

#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "otafl/dataset.hpp"
#include "otafl/estimators.hpp"
#include "otafl/loss.hpp"

namespace otafl {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

// One Monte-Carlo moment result, exportable as a CSV row.
struct MomentRow {
  Estimator est = Estimator::Ezofl;
  MomentStats stats;
  double bound = 0.0;
};

struct SuiteResult {
  std::string suite;
  std::vector<CheckResult> checks;
  std::vector<MomentRow> moments;

  bool all_pass() const {
    for (const auto& c : checks)
      if (!c.pass) return false;
    return true;
  }
};

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream out;
  out.precision(6);
  out << v;
  return out.str();
}

struct BiasMeasurement {
  double bias_norm = 0.0;  // || mean/(c1 gamma) - grad F ||
  double noise_scale = 0.0;  // aggregated SE of the same quantity
  MomentStats stats;
  double bound = 0.0;
};

inline BiasMeasurement measure_zo_bias(const LossModel& loss,
                                       const std::vector<Dataset>& shards,
                                       const Vec& theta, double gamma,
                                       const ChannelConfig& cfg,
                                       std::size_t trials, uint64_t seed) {
  MomentConfig mc;
  mc.trials = trials;
  mc.seed = seed;
  MomentStats stats = estimator_moments_mc(
      Estimator::Ezofl, loss, shards, theta, gamma, cfg,
      DeviceSplit::all_sync(shards.size()), mc);
  Vec grad = global_grad(loss, theta, shards);
  double c1_gamma = 2.0 * gamma;  // c1 = 2 b1, Rademacher b1 = 1
  double acc = 0.0;
  for (std::size_t j = 0; j < theta.size(); ++j) {
    double delta = stats.mean[j] / c1_gamma - grad[j];
    acc += delta * delta;
  }
  BiasMeasurement m;
  m.bias_norm = std::sqrt(acc);
  m.noise_scale = stats.aggregated_se() / c1_gamma;
  m.stats = stats;
  m.bound = second_moment_bound(
      Estimator::Ezofl,
      compute_constants(loss, shards, theta, gamma, PerturbationKind::Rademacher),
      cfg, gamma, shards.size(), DeviceSplit::all_sync(shards.size()));
  return m;
}

}  // namespace detail

// Suite "lemma3": the first-order estimate is conditionally unbiased,
// E[g' | theta] = b1 grad F(theta), checked at 10 random points on the
// quadratic task (d=4, N=3, sigma_h=1, sigma_n=0.5).
inline SuiteResult verify_fo_unbiased(std::size_t trials, uint64_t seed) {
  SuiteResult suite{"lemma3", {}};
  const std::size_t d = 4, n = 3;
  LossModel loss{LossKind::Quadratic};
  Dataset ds = synth_zero_target(30, d, seed);
  std::vector<Dataset> shards = partition_equal(ds, n, seed).shards;
  ChannelConfig cfg;
  cfg.sigma_n = 0.5;
  Rng rng(seed, Stream::Trial, 1);
  for (int rep = 0; rep < 10; ++rep) {
    Vec theta(d);
    for (auto& v : theta) v = rng.gaussian();
    MomentConfig mc;
    mc.trials = trials;
    mc.seed = seed + 1000 + rep;
    MomentStats stats =
        estimator_moments_mc(Estimator::Efofl, loss, shards, theta, 0.0, cfg,
                             DeviceSplit::all_sync(n), mc);
    suite.moments.push_back(
        {Estimator::Efofl, stats,
         second_moment_bound(Estimator::Efofl,
                             compute_constants(loss, shards, theta, 0.0,
                                               PerturbationKind::Rademacher),
                             cfg, 0.0, n, DeviceSplit::all_sync(n))});
    Vec grad = global_grad(loss, theta, shards);
    double err = 0.0;
    for (std::size_t j = 0; j < d; ++j)
      err += (stats.mean[j] - grad[j]) * (stats.mean[j] - grad[j]);
    err = std::sqrt(err);
    double limit = 3.0 * stats.aggregated_se();
    suite.checks.push_back(
        {"unbiased theta#" + std::to_string(rep), err <= limit,
         "|mean - grad F| = " + detail::fmt(err) + ", 3*SE = " +
             detail::fmt(limit)});
  }
  return suite;
}

// Suite "lemma1": bias structure of the zero-order estimate,
// E[g | theta] = c1 gamma (grad F + delta).
//  (a) quadratic task: constant Hessians make delta vanish; the measured
//      bias must be statistically indistinguishable from zero.
//  (b) nonconvex-logistic: the bound ||delta|| <= c3 gamma must dominate at
//      two probe values of gamma, and the measured bias-norm ratio between
//      gamma = 0.05 and gamma = 0.1 is checked against the halving window
//      [0.375, 0.625]. For smooth losses the true two-point bias scales as
//      gamma^2 (the exact sign-enumeration printed alongside shows it), so
//      the halving check documents a ratio near 0.25 instead and is
//      expected to fail; the bound checks are the lemma's actual claim.
inline SuiteResult verify_zo_bias(std::size_t trials, uint64_t seed) {
  SuiteResult suite{"lemma1", {}};
  // (a) quadratic
  {
    const std::size_t d = 4, n = 3;
    LossModel loss{LossKind::Quadratic};
    Dataset ds = synth_zero_target(30, d, seed);
    std::vector<Dataset> shards = partition_equal(ds, n, seed).shards;
    ChannelConfig cfg;
    cfg.sigma_n = 0.5;
    Rng rng(seed, Stream::Trial, 2);
    for (int rep = 0; rep < 3; ++rep) {
      Vec theta(d);
      for (auto& v : theta) v = rng.gaussian();
      detail::BiasMeasurement m = detail::measure_zo_bias(
          loss, shards, theta, 0.1, cfg, trials, seed + 2000 + rep);
      suite.moments.push_back({Estimator::Ezofl, m.stats, m.bound});
      suite.checks.push_back(
          {"quadratic bias==0 theta#" + std::to_string(rep),
           m.bias_norm <= 3.0 * m.noise_scale,
           "bias = " + detail::fmt(m.bias_norm) + ", 3*SE = " +
               detail::fmt(3.0 * m.noise_scale)});
    }
  }
  // (b) nonconvex-logistic. The fixture is pinned (only the Monte-Carlo
  // randomness follows the caller's seed) and its feature scale is chosen so
  // the true bias stands ~20x above the M=1e5 noise floor: the ratio
  // measurement reflects the bias, not the sampling error.
  {
    const std::size_t d = 4, n = 3;
    LossModel loss{LossKind::NonconvexLogistic, 0.5};
    Dataset ds = synth_dataset(n, d, 10);
    for (Sample& s : ds.samples)
      for (double& f : s.features) f *= 8.0;
    std::vector<Dataset> shards = partition_equal(ds, n, 10).shards;
    Vec theta(d);
    Rng theta_rng(3, Stream::Trial);
    for (double& v : theta) v = 0.2 * theta_rng.gaussian();
    ChannelConfig cfg;  // noiseless receiver: the bias is the only offset
    detail::BiasMeasurement hi = detail::measure_zo_bias(
        loss, shards, theta, 0.1, cfg, trials, seed + 3001);
    detail::BiasMeasurement lo = detail::measure_zo_bias(
        loss, shards, theta, 0.05, cfg, trials, seed + 3002);
    suite.moments.push_back({Estimator::Ezofl, hi.stats, hi.bound});
    suite.moments.push_back({Estimator::Ezofl, lo.stats, lo.bound});

    TheoryConstants tc = compute_constants(loss, shards, theta, 0.1,
                                           PerturbationKind::Rademacher);
    double cap_hi = tc.c3(n) * 0.1, cap_lo = tc.c3(n) * 0.05;
    suite.checks.push_back(
        {"logistic |delta| <= c3*gamma at gamma=0.1",
         hi.bias_norm <= cap_hi,
         "bias = " + detail::fmt(hi.bias_norm) + " (3*SE = " +
             detail::fmt(3.0 * hi.noise_scale) + "), c3*gamma = " +
             detail::fmt(cap_hi)});
    suite.checks.push_back(
        {"logistic |delta| <= c3*gamma at gamma=0.05",
         lo.bias_norm <= cap_lo,
         "bias = " + detail::fmt(lo.bias_norm) + " (3*SE = " +
             detail::fmt(3.0 * lo.noise_scale) + "), c3*gamma = " +
             detail::fmt(cap_lo)});

    // exact (noise-free) ratio for reference
    Vec grad = global_grad(loss, theta, shards);
    auto exact_bias = [&](double gamma) {
      Vec mean = exact_conditional_mean(Estimator::Ezofl, loss, shards, theta, gamma);
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        double delta = mean[j] / (2.0 * gamma) - grad[j];
        acc += delta * delta;
      }
      return std::sqrt(acc);
    };
    double exact_ratio = exact_bias(0.05) / exact_bias(0.1);
    double ratio = lo.bias_norm / hi.bias_norm;
    suite.checks.push_back(
        {"logistic bias halving ratio in [0.375, 0.625]",
         ratio >= 0.375 && ratio <= 0.625,
         "measured ratio = " + detail::fmt(ratio) + ", exact ratio = " +
             detail::fmt(exact_ratio) +
             " (smooth losses give ~0.25: bias scales as gamma^2)"});
  }
  return suite;
}

namespace detail {

// Random small task + channel + gamma, common sigma_h across devices.
struct RandomMomentCase {
  LossModel loss;
  std::vector<Dataset> shards;
  Vec theta;
  ChannelConfig cfg;
  double gamma = 0.1;
  TheoryConstants tc;
  DeviceSplit split;
};

inline RandomMomentCase make_random_case(uint64_t seed, int index, bool async) {
  Rng rng(seed, Stream::Trial, 100 + index);
  RandomMomentCase c;
  std::size_t d = 2 + rng.uniform_index(5);
  std::size_t n = (async ? 2 : 1) + rng.uniform_index(4);
  bool logistic = rng.sign() > 0;
  c.loss = logistic ? LossModel{LossKind::NonconvexLogistic, 0.1}
                    : LossModel{LossKind::Quadratic};
  Dataset ds = logistic ? synth_dataset(8 * n, d, seed + 50 + index)
                        : synth_zero_target(8 * n, d, seed + 50 + index);
  c.shards = partition_equal(ds, n, seed + index).shards;
  c.theta.resize(d);
  for (auto& v : c.theta) v = rng.gaussian(0.0, 0.5);
  c.cfg.sigma_h = rng.uniform(0.5, 1.5);
  c.cfg.sigma_n = rng.uniform(0.0, 0.8);
  c.gamma = rng.uniform(0.02, 0.3);
  c.tc = compute_constants(c.loss, c.shards, c.theta, c.gamma,
                           PerturbationKind::Rademacher);
  if (async) {
    std::size_t late = 1 + rng.uniform_index(n - 1);
    for (std::size_t i = 0; i < n; ++i)
      (i < late ? c.split.n2 : c.split.n1).push_back(i);
  } else {
    c.split = DeviceSplit::all_sync(n);
  }
  return c;
}

inline SuiteResult verify_second_moment(const std::string& suite_name,
                                        Estimator est, std::size_t trials,
                                        uint64_t seed) {
  SuiteResult suite{suite_name, {}};
  // degenerate case: gamma = 0 and silent channel gives a zero bound that
  // the (zero) empirical moment still satisfies
  if (is_zero_order(est)) {
    TheoryConstants tc;
    ChannelConfig quiet;
    double bound =
        second_moment_bound(est, tc, quiet, 0.0, 2, DeviceSplit::all_sync(2));
    suite.checks.push_back({"zero gamma, zero noise: bound is zero",
                            bound == 0.0, "bound = " + detail::fmt(bound)});
  }
  std::size_t per_case = std::max<std::size_t>(10000, trials / 10);
  for (int index = 0; index < 20; ++index) {
    RandomMomentCase c = make_random_case(seed, index, is_async(est));
    MomentConfig mc;
    mc.trials = per_case;
    mc.seed = seed + 7000 + index;
    MomentStats stats = estimator_moments_mc(est, c.loss, c.shards, c.theta,
                                             c.gamma, c.cfg, c.split, mc);
    double bound = second_moment_bound(est, c.tc, c.cfg, c.gamma,
                                       c.shards.size(), c.split);
    suite.moments.push_back({est, stats, bound});
    suite.checks.push_back(
        {"E||g||^2 <= bound, config#" + std::to_string(index),
         stats.sqnorm_mean <= bound,
         "empirical = " + detail::fmt(stats.sqnorm_mean) + " (SE " +
             detail::fmt(stats.sqnorm_se) + "), bound = " +
             detail::fmt(bound)});
  }
  return suite;
}

}  // namespace detail

// Suite "lemma2": empirical E||g||^2 of the zero-order estimate never
// exceeds the closed-form bound over randomized configurations.
inline SuiteResult verify_zo_second_moment(std::size_t trials, uint64_t seed) {
  return detail::verify_second_moment("lemma2", Estimator::Ezofl, trials, seed);
}

// Suite "lemma4": first-order counterpart.
inline SuiteResult verify_fo_second_moment(std::size_t trials, uint64_t seed) {
  return detail::verify_second_moment("lemma4", Estimator::Efofl, trials, seed);
}

// Suite "async-moments": three-slot estimators keep the sync conditional
// means, their empirical second moments respect the async bounds, and the
// async bounds dominate the sync ones on the calculators.
inline SuiteResult verify_async_moments(std::size_t trials, uint64_t seed) {
  SuiteResult suite{"async-moments", {}};
  const std::size_t d = 3, n = 4;
  LossModel loss{LossKind::Quadratic};
  Dataset ds = synth_zero_target(24, d, seed + 3);
  std::vector<Dataset> shards = partition_equal(ds, n, seed + 3).shards;
  Vec theta{0.7, -0.5, 0.3};
  double gamma = 0.1;
  ChannelConfig cfg;
  cfg.sigma_n = 0.25;
  DeviceSplit split;
  split.n1 = {0, 2};
  split.n2 = {1, 3};
  Vec grad = global_grad(loss, theta, shards);

  MomentConfig mc;
  mc.trials = trials;
  mc.seed = seed + 11;
  MomentStats zo = estimator_moments_mc(Estimator::EzoflAsync, loss, shards,
                                        theta, gamma, cfg, split, mc);
  TheoryConstants async_tc =
      compute_constants(loss, shards, theta, gamma, PerturbationKind::Rademacher);
  suite.moments.push_back(
      {Estimator::EzoflAsync, zo,
       second_moment_bound(Estimator::EzoflAsync, async_tc, cfg, gamma, n, split)});
  double err = 0.0;
  for (std::size_t j = 0; j < d; ++j)
    err += (zo.mean[j] - 2.0 * gamma * grad[j]) *
           (zo.mean[j] - 2.0 * gamma * grad[j]);
  err = std::sqrt(err);
  suite.checks.push_back({"async zero-order mean = c1 gamma grad F",
                          err <= 3.0 * zo.aggregated_se(),
                          "|mean - target| = " + detail::fmt(err) +
                              ", 3*SE = " + detail::fmt(3.0 * zo.aggregated_se())});

  mc.seed = seed + 12;
  MomentStats fo = estimator_moments_mc(Estimator::EfoflAsync, loss, shards,
                                        theta, 0.0, cfg, split, mc);
  suite.moments.push_back(
      {Estimator::EfoflAsync, fo,
       second_moment_bound(Estimator::EfoflAsync, async_tc, cfg, 0.0, n, split)});
  err = 0.0;
  for (std::size_t j = 0; j < d; ++j)
    err += (fo.mean[j] - grad[j]) * (fo.mean[j] - grad[j]);
  err = std::sqrt(err);
  suite.checks.push_back({"async first-order mean = b1 grad F",
                          err <= 3.0 * fo.aggregated_se(),
                          "|mean - target| = " + detail::fmt(err) +
                              ", 3*SE = " + detail::fmt(3.0 * fo.aggregated_se())});

  for (int index = 0; index < 10; ++index) {
    detail::RandomMomentCase c = detail::make_random_case(seed, index, true);
    MomentConfig cmc;
    cmc.trials = std::max<std::size_t>(10000, trials / 10);
    cmc.seed = seed + 9000 + index;
    for (Estimator est : {Estimator::EzoflAsync, Estimator::EfoflAsync}) {
      MomentStats stats = estimator_moments_mc(est, c.loss, c.shards, c.theta,
                                               c.gamma, c.cfg, c.split, cmc);
      double bound =
          second_moment_bound(est, c.tc, c.cfg, c.gamma, c.shards.size(), c.split);
      suite.moments.push_back({est, stats, bound});
      Estimator sync_est = est == Estimator::EzoflAsync ? Estimator::Ezofl
                                                        : Estimator::Efofl;
      double sync_bound =
          second_moment_bound(sync_est, c.tc, c.cfg, c.gamma, c.shards.size(),
                              DeviceSplit::all_sync(c.shards.size()));
      std::string tag = std::string(estimator_name(est)) + " config#" +
                        std::to_string(index);
      suite.checks.push_back(
          {"E||g||^2 <= async bound, " + tag, stats.sqnorm_mean <= bound,
           "empirical = " + detail::fmt(stats.sqnorm_mean) + ", bound = " +
               detail::fmt(bound)});
      suite.checks.push_back(
          {"async bound >= sync bound, " + tag, bound >= sync_bound,
           "async = " + detail::fmt(bound) + ", sync = " +
               detail::fmt(sync_bound)});
    }
  }
  return suite;
}

inline SuiteResult run_verify_suite(const std::string& suite,
                                    std::size_t trials, uint64_t seed) {
  if (trials < 10000)
    throw std::invalid_argument("verify: need at least 10^4 trials");
  if (suite == "lemma1") return verify_zo_bias(trials, seed);
  if (suite == "lemma2") return verify_zo_second_moment(trials, seed);
  if (suite == "lemma3") return verify_fo_unbiased(trials, seed);
  if (suite == "lemma4") return verify_fo_second_moment(trials, seed);
  if (suite == "async-moments") return verify_async_moments(trials, seed);
  throw std::invalid_argument("verify: unknown suite '" + suite + "'");
}

}  // namespace otafl
