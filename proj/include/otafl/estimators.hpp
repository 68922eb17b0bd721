// Gradient estimators reconstructed from over-the-air minislot products.
//
// Per round every device transmits scalars over the shared fading channel:
// a fixed precoder constant in one minislot and either a two-point loss
// difference (zero-order) or a gradient projection (first-order) in another.
// The server multiplies the received slot sums and broadcasts one scalar;
// devices rescale the shared perturbation direction by it. No CSI is
// estimated anywhere: the channel moments enter only through the precoder.
//
// Also here: Monte-Carlo moment oracles for the estimators' conditional mean
// and second moment, an exact sign-enumeration oracle for small dimensions,
// and calculators for the closed-form second-moment bounds of the sync and
// async variants.

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "otafl/channel.hpp"
#include "otafl/loss.hpp"
#include "otafl/rng.hpp"

namespace otafl {

enum class Estimator { Ezofl, Efofl, EzoflAsync, EfoflAsync };

inline const char* estimator_name(Estimator e) {
  switch (e) {
    case Estimator::Ezofl: return "ezofl";
    case Estimator::Efofl: return "efofl";
    case Estimator::EzoflAsync: return "ezofl-async";
    case Estimator::EfoflAsync: return "efofl-async";
  }
  return "?";
}

inline bool is_async(Estimator e) {
  return e == Estimator::EzoflAsync || e == Estimator::EfoflAsync;
}
inline bool is_zero_order(Estimator e) {
  return e == Estimator::Ezofl || e == Estimator::EzoflAsync;
}

// ---------------------------------------------------------------------------
// Perturbation directions

enum class PerturbationKind { Rademacher, Sphere };

// Shared direction for round k, reproducible from (seed, round) so devices
// and server agree without any exchange. Rademacher entries are i.i.d. +-1
// (second moment b1 = 1, norm b2 = sqrt(d)); the sphere variant is uniform
// on the radius-sqrt(d) sphere and has the same two moments.
inline Vec sample_perturbation(std::size_t d, PerturbationKind kind,
                               uint64_t seed, std::size_t round) {
  Rng rng(seed, Stream::Perturbation, round);
  Vec phi(d);
  if (kind == PerturbationKind::Rademacher) {
    for (double& v : phi) v = rng.sign();
    return phi;
  }
  double nsq = 0.0;
  for (double& v : phi) {
    v = rng.gaussian();
    nsq += v * v;
  }
  double scale = std::sqrt(static_cast<double>(d) / nsq);
  for (double& v : phi) v *= scale;
  return phi;
}

inline double perturbation_b1(PerturbationKind, std::size_t) { return 1.0; }
inline double perturbation_b2(PerturbationKind, std::size_t d) {
  return std::sqrt(static_cast<double>(d));
}

// ---------------------------------------------------------------------------
// Device payloads

// Two-point loss difference f(theta + gamma*phi) - f(theta - gamma*phi),
// both queries on the same local sample.
inline double two_point_delta(const LossModel& loss, const Sample& xi,
                              const Vec& theta, double gamma, const Vec& phi) {
  if (gamma < 0.0) throw std::invalid_argument("two_point_delta: gamma < 0");
  if (gamma == 0.0) return 0.0;
  Vec plus(theta.size()), minus(theta.size());
  for (std::size_t j = 0; j < theta.size(); ++j) {
    plus[j] = theta[j] + gamma * phi[j];
    minus[j] = theta[j] - gamma * phi[j];
  }
  return eval_loss(loss, plus, xi) - eval_loss(loss, minus, xi);
}

using DeviceBatch = std::vector<const Sample*>;

inline double ezofl_payload(const LossModel& loss, const DeviceBatch& batch,
                            const Vec& theta, double gamma, const Vec& phi) {
  double acc = 0.0;
  for (const Sample* s : batch) acc += two_point_delta(loss, *s, theta, gamma, phi);
  return acc / static_cast<double>(batch.size());
}

inline double efofl_payload(const LossModel& loss, const DeviceBatch& batch,
                            const Vec& theta, const Vec& phi) {
  double acc = 0.0;
  for (const Sample* s : batch) acc += dot(eval_grad(loss, theta, *s), phi);
  return acc / static_cast<double>(batch.size());
}

// ---------------------------------------------------------------------------
// Round aggregation

// Channel realization of one round: a block-fading draw per device (shared
// by all minislots of the round) and fresh noise per minislot.
struct RoundRandomness {
  Vec phi;
  std::vector<ChannelDraw> draws;
  std::complex<double> noise1{0.0, 0.0};
  std::complex<double> noise2{0.0, 0.0};
  std::complex<double> noise3{0.0, 0.0};
};

inline RoundRandomness sample_round_randomness(std::size_t n_devices,
                                               std::size_t d,
                                               PerturbationKind kind,
                                               const ChannelConfig& cfg,
                                               uint64_t seed,
                                               std::size_t round) {
  RoundRandomness rr;
  rr.phi = sample_perturbation(d, kind, seed, round);
  rr.draws.resize(n_devices);
  for (std::size_t i = 0; i < n_devices; ++i)
    rr.draws[i] = sample_channel(i, round, cfg, seed);
  rr.noise1 = sample_noise(round, 1, cfg, seed);
  rr.noise2 = sample_noise(round, 2, cfg, seed);
  rr.noise3 = sample_noise(round, 3, cfg, seed);
  return rr;
}

// Disjoint cover of the device set: n1 transmits on schedule, n2 one slot
// late. Sync rounds use all_sync (n2 empty).
struct DeviceSplit {
  std::vector<std::size_t> n1, n2;

  static DeviceSplit all_sync(std::size_t n_devices) {
    DeviceSplit s;
    s.n1.resize(n_devices);
    for (std::size_t i = 0; i < n_devices; ++i) s.n1[i] = i;
    return s;
  }

  void validate(std::size_t n_devices) const {
    std::vector<int> seen(n_devices, 0);
    for (std::size_t i : n1) seen.at(i)++;
    for (std::size_t i : n2) seen.at(i)++;
    for (std::size_t i = 0; i < n_devices; ++i) {
      if (seen[i] == 0)
        throw std::invalid_argument("device split: device " +
                                    std::to_string(i) + " unassigned");
      if (seen[i] > 1)
        throw std::invalid_argument("device split: device " +
                                    std::to_string(i) + " in both sets");
    }
  }
};

// The reconstructed rank-one estimate g = phi * product, with the received
// slot scalars kept for tracing. slot3 is NaN in sync rounds.
struct GradEstimate {
  Vec g;
  double slot1 = 0.0;
  double slot2 = 0.0;
  double slot3 = std::numeric_limits<double>::quiet_NaN();
  double product = 0.0;
};

namespace detail {

inline GradEstimate assemble(const Vec& phi, double slot1, double slot2,
                             double slot3, double product) {
  GradEstimate est;
  est.slot1 = slot1;
  est.slot2 = slot2;
  est.slot3 = slot3;
  est.product = product;
  est.g.resize(phi.size());
  for (std::size_t j = 0; j < phi.size(); ++j) est.g[j] = phi[j] * product;
  return est;
}

// Two-minislot protocol: precoder constants, then payloads; estimate is the
// slot product.
inline GradEstimate sync_estimate(const Vec& payloads,
                                  const RoundRandomness& rr,
                                  const Precoder& precoder) {
  double slot1 = ota_minislot(precoder.a, rr.draws, rr.noise1);
  double slot2 = ota_minislot(payloads, rr.draws, rr.noise2);
  return assemble(rr.phi, slot1, slot2,
                  std::numeric_limits<double>::quiet_NaN(), slot1 * slot2);
}

// Three-slot protocol for a late subset n2: slot 2 carries n1's payloads on
// top of n2's precoder symbols, slot 3 carries n2's payloads. The estimate
// sums both products against the interfered middle slot.
inline GradEstimate async_estimate(const Vec& payloads,
                                   const RoundRandomness& rr,
                                   const Precoder& precoder,
                                   const DeviceSplit& split) {
  std::size_t n = rr.draws.size();
  split.validate(n);
  Vec p1(n, 0.0), p2(n, 0.0), p3(n, 0.0);
  for (std::size_t i : split.n1) {
    p1[i] = precoder.a[i];
    p2[i] = payloads[i];
  }
  for (std::size_t j : split.n2) {
    p2[j] = precoder.a[j];
    p3[j] = payloads[j];
  }
  double slot1 = ota_minislot(p1, rr.draws, rr.noise1);
  double slot2 = ota_minislot(p2, rr.draws, rr.noise2);
  double slot3 = ota_minislot(p3, rr.draws, rr.noise3);
  return assemble(rr.phi, slot1, slot2, slot3,
                  slot1 * slot2 + slot3 * slot2);
}

}  // namespace detail

using DeviceBatches = std::vector<DeviceBatch>;

inline Vec collect_payloads(Estimator est, const LossModel& loss,
                            const DeviceBatches& batches, const Vec& theta,
                            double gamma, const Vec& phi) {
  Vec payloads(batches.size());
  for (std::size_t i = 0; i < batches.size(); ++i)
    payloads[i] = is_zero_order(est)
                      ? ezofl_payload(loss, batches[i], theta, gamma, phi)
                      : efofl_payload(loss, batches[i], theta, phi);
  return payloads;
}

inline GradEstimate ezofl_round(const LossModel& loss,
                                const DeviceBatches& batches, const Vec& theta,
                                double gamma, const RoundRandomness& rr,
                                const Precoder& precoder) {
  Vec payloads =
      collect_payloads(Estimator::Ezofl, loss, batches, theta, gamma, rr.phi);
  return detail::sync_estimate(payloads, rr, precoder);
}

inline GradEstimate efofl_round(const LossModel& loss,
                                const DeviceBatches& batches, const Vec& theta,
                                const RoundRandomness& rr,
                                const Precoder& precoder) {
  Vec payloads =
      collect_payloads(Estimator::Efofl, loss, batches, theta, 0.0, rr.phi);
  return detail::sync_estimate(payloads, rr, precoder);
}

inline GradEstimate ezofl_async_round(const LossModel& loss,
                                      const DeviceBatches& batches,
                                      const Vec& theta, double gamma,
                                      const RoundRandomness& rr,
                                      const Precoder& precoder,
                                      const DeviceSplit& split) {
  Vec payloads =
      collect_payloads(Estimator::Ezofl, loss, batches, theta, gamma, rr.phi);
  return detail::async_estimate(payloads, rr, precoder, split);
}

inline GradEstimate efofl_async_round(const LossModel& loss,
                                      const DeviceBatches& batches,
                                      const Vec& theta,
                                      const RoundRandomness& rr,
                                      const Precoder& precoder,
                                      const DeviceSplit& split) {
  Vec payloads =
      collect_payloads(Estimator::Efofl, loss, batches, theta, 0.0, rr.phi);
  return detail::async_estimate(payloads, rr, precoder, split);
}

inline GradEstimate run_estimator(Estimator est, const LossModel& loss,
                                  const DeviceBatches& batches,
                                  const Vec& theta, double gamma,
                                  const RoundRandomness& rr,
                                  const Precoder& precoder,
                                  const DeviceSplit& split) {
  switch (est) {
    case Estimator::Ezofl:
      return ezofl_round(loss, batches, theta, gamma, rr, precoder);
    case Estimator::Efofl:
      return efofl_round(loss, batches, theta, rr, precoder);
    case Estimator::EzoflAsync:
      return ezofl_async_round(loss, batches, theta, gamma, rr, precoder,
                               split);
    case Estimator::EfoflAsync:
      return efofl_async_round(loss, batches, theta, rr, precoder, split);
  }
  throw std::logic_error("unknown estimator");
}

// ---------------------------------------------------------------------------
// Monte-Carlo moment oracle

// Empirical conditional mean and second moment of an estimator at fixed
// theta, with fresh independent randomness per trial (keyed by trial index,
// so results do not depend on evaluation order).
struct MomentStats {
  Vec mean;         // per-coordinate empirical E[g_j | theta]
  Vec se;           // standard error of each mean coordinate
  double sqnorm_mean = 0.0;  // empirical E[||g||^2 | theta]
  double sqnorm_se = 0.0;
  std::size_t trials = 0;

  // sqrt(sum_j se_j^2): deviation scale of ||mean - target||
  double aggregated_se() const {
    double s = 0.0;
    for (double v : se) s += v * v;
    return std::sqrt(s);
  }
};

struct MomentConfig {
  std::size_t trials = 100000;
  uint64_t seed = 1;
  PerturbationKind perturbation = PerturbationKind::Rademacher;
};

inline MomentStats estimator_moments_mc(Estimator est, const LossModel& loss,
                                        const std::vector<Dataset>& shards,
                                        const Vec& theta, double gamma,
                                        const ChannelConfig& cfg,
                                        const DeviceSplit& split,
                                        const MomentConfig& mc) {
  cfg.validate();
  std::size_t n = shards.size();
  std::size_t d = theta.size();
  Precoder precoder = precoder_constants(cfg, n);
  Vec sum(d, 0.0), sum_sq(d, 0.0);
  double sum_nsq = 0.0, sum_nsq_sq = 0.0;
  DeviceBatches batches(n);
  for (std::size_t t = 0; t < mc.trials; ++t) {
    RoundRandomness rr =
        sample_round_randomness(n, d, mc.perturbation, cfg, mc.seed, t);
    for (std::size_t i = 0; i < n; ++i) {
      Rng pick(mc.seed, Stream::Sample, i, t);
      batches[i] = {&shards[i].samples[pick.uniform_index(shards[i].size())]};
    }
    GradEstimate e = run_estimator(est, loss, batches, theta, gamma, rr,
                                   precoder, split);
    double nsq = norm_sq(e.g);
    sum_nsq += nsq;
    sum_nsq_sq += nsq * nsq;
    for (std::size_t j = 0; j < d; ++j) {
      sum[j] += e.g[j];
      sum_sq[j] += e.g[j] * e.g[j];
    }
  }
  double m = static_cast<double>(mc.trials);
  MomentStats stats;
  stats.trials = mc.trials;
  stats.mean.resize(d);
  stats.se.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    stats.mean[j] = sum[j] / m;
    double var = std::max(0.0, sum_sq[j] / m - stats.mean[j] * stats.mean[j]);
    stats.se[j] = std::sqrt(var / m);
  }
  stats.sqnorm_mean = sum_nsq / m;
  double var = std::max(0.0, sum_nsq_sq / m - stats.sqnorm_mean * stats.sqnorm_mean);
  stats.sqnorm_se = std::sqrt(var / m);
  return stats;
}

// One moment-oracle result as a CSV row:
// variant,M,mean_0..mean_{d-1},se_0..se_{d-1},sqnorm,bound
inline std::string format_moments_csv_row(Estimator est,
                                          const MomentStats& stats,
                                          double bound) {
  std::ostringstream out;
  out.precision(17);
  out << estimator_name(est) << "," << stats.trials;
  for (double v : stats.mean) out << "," << v;
  for (double v : stats.se) out << "," << v;
  out << "," << stats.sqnorm_mean << "," << bound << "\n";
  return out.str();
}

inline std::string moments_csv_header(std::size_t d) {
  std::ostringstream out;
  out << "variant,M";
  for (std::size_t j = 0; j < d; ++j) out << ",mean_" << j;
  for (std::size_t j = 0; j < d; ++j) out << ",se_" << j;
  out << ",sqnorm,bound\n";
  return out.str();
}

// Exact conditional mean by enumerating all 2^d Rademacher directions and
// averaging over every sample of every shard. Uses E[h_i h_j] = 0 for i != j
// and a_i E[h_i^2] = 1, so only the per-device payload expectation survives.
// Noise-free alternative to the Monte-Carlo oracle; d must stay small.
inline Vec exact_conditional_mean(Estimator est, const LossModel& loss,
                                  const std::vector<Dataset>& shards,
                                  const Vec& theta, double gamma) {
  std::size_t d = theta.size();
  if (d > 20)
    throw std::invalid_argument("exact_conditional_mean: d too large to enumerate");
  Vec acc(d, 0.0);
  Vec phi(d);
  const std::size_t patterns = std::size_t(1) << d;
  for (std::size_t bits = 0; bits < patterns; ++bits) {
    for (std::size_t j = 0; j < d; ++j)
      phi[j] = (bits >> j) & 1 ? 1.0 : -1.0;
    for (const Dataset& shard : shards) {
      double payload_mean = 0.0;
      for (const Sample& s : shard.samples) {
        DeviceBatch batch{&s};
        payload_mean += is_zero_order(est)
                            ? ezofl_payload(loss, batch, theta, gamma, phi)
                            : efofl_payload(loss, batch, theta, phi);
      }
      payload_mean /= static_cast<double>(shard.size());
      for (std::size_t j = 0; j < d; ++j) acc[j] += phi[j] * payload_mean;
    }
  }
  for (double& v : acc) v /= static_cast<double>(patterns);
  return acc;
}

// ---------------------------------------------------------------------------
// Closed-form bound constants

// The scalar constants the convergence statements are written in. smoothness
// is the single constant referred to as both L and mu; lipschitz is the
// uniform Lipschitz constant of the per-sample losses entering the
// zero-order bound; grad_bound (A) caps per-sample gradient norms for the
// first-order bound.
struct TheoryConstants {
  double smoothness = 1.0;    // L = mu, smoothness of the global objective
  double hessian_bound = 1.0; // b, per-device Hessian norm bound
  double lipschitz = 1.0;     // max_xi L_xi
  double grad_bound = 1.0;    // A
  double b1 = 1.0;
  double b2 = 1.0;
  double delta_hat = 1.0;     // F(theta_0) - F(theta*)

  double c1() const { return 2.0 * b1; }
  double c3(std::size_t n_devices) const {
    return hessian_bound * b2 * b2 * b2 * static_cast<double>(n_devices) /
           (2.0 * b1);
  }
};

// Conservative constants measured on a concrete task at theta0. grad_bound
// and lipschitz take a 2x safety factor and are recorded in run manifests.
inline TheoryConstants compute_constants(const LossModel& loss,
                                         const std::vector<Dataset>& shards,
                                         const Vec& theta0, double gamma_ref,
                                         PerturbationKind kind) {
  std::size_t d = theta0.size();
  TheoryConstants tc;
  tc.b1 = perturbation_b1(kind, d);
  tc.b2 = perturbation_b2(kind, d);

  double max_grad = 0.0, max_hess = 0.0, max_lip = 0.0;
  for (const Dataset& shard : shards) {
    for (const Sample& s : shard.samples) {
      max_grad = std::max(max_grad, norm(eval_grad(loss, theta0, s)));
      if (loss.kind == LossKind::Quadratic) {
        max_hess = std::max(max_hess, 1.0);
        // grad norm anywhere on the +-gamma*phi probe segment
        Vec res(theta0.size());
        for (std::size_t j = 0; j < res.size(); ++j)
          res[j] = theta0[j] - s.label * s.features[j];
        max_lip = std::max(max_lip, norm(res) + gamma_ref * tc.b2);
      } else {
        double xsq = norm_sq(s.features);
        max_hess = std::max(max_hess, 0.25 * xsq + 2.0 * loss.lambda);
        // logistic grad <= ||x||; regularizer grad <= 0.6495*lambda per coord
        max_lip = std::max(max_lip, std::sqrt(xsq) + 0.6495 * loss.lambda *
                                                         std::sqrt(double(d)));
      }
    }
  }
  tc.hessian_bound = max_hess;
  tc.smoothness = max_hess * static_cast<double>(shards.size());
  tc.grad_bound = 2.0 * max_grad;
  tc.lipschitz = 2.0 * max_lip;
  tc.delta_hat = 1.0;  // task-specific; callers overwrite
  return tc;
}

namespace detail {

struct ChannelSums {
  double e = 0.0;    // sum E(h_i^2)
  double ae = 0.0;   // sum a_i E(h_i^2)
  double a2e = 0.0;  // sum a_i^2 E(h_i^2)
};

inline ChannelSums channel_sums(const ChannelConfig& cfg,
                                const std::vector<std::size_t>& devices) {
  ChannelSums s;
  for (std::size_t i : devices) {
    double sh = cfg.device_sigma_h(i);
    double E = sh * sh;
    double a = 1.0 / E;
    s.e += E;
    s.ae += a * E;
    s.a2e += a * a * E;
  }
  return s;
}

}  // namespace detail

// Evaluates the closed-form conditional second-moment bound of the chosen
// estimator: C and C2 for the two-slot protocols, their three-slot
// counterparts for async splits. gamma only enters the zero-order bounds.
inline double second_moment_bound(Estimator est, const TheoryConstants& tc,
                                  const ChannelConfig& cfg, double gamma,
                                  std::size_t n_devices,
                                  const DeviceSplit& split) {
  const double b2sq = tc.b2 * tc.b2;
  const double s1 = cfg.slot_sigma(1), s2 = cfg.slot_sigma(2),
               s3 = cfg.slot_sigma(3);
  const double s1sq = s1 * s1, s2sq = s2 * s2, s3sq = s3 * s3;
  // 4 b2^2 L^2 gamma^2 for zero-order, b2^2 A^2 for first-order
  const double zo = 4.0 * b2sq * tc.lipschitz * tc.lipschitz * gamma * gamma;
  const double fo = b2sq * tc.grad_bound * tc.grad_bound;

  if (!is_async(est)) {
    auto all = detail::channel_sums(cfg, DeviceSplit::all_sync(n_devices).n1);
    double q = is_zero_order(est) ? zo : fo;
    return b2sq * (s1sq * s2sq + q * s1sq * all.e + s2sq * all.a2e +
                   q * (all.a2e * all.e + all.ae * all.ae));
  }

  split.validate(n_devices);
  auto g1 = detail::channel_sums(cfg, split.n1);
  auto g2 = detail::channel_sums(cfg, split.n2);
  if (is_zero_order(est)) {
    return b2sq * (s1sq * s2sq + zo * s1sq * g1.e + s2sq * g1.a2e +
                   zo * (g1.a2e * g1.e + g1.ae * g1.ae) +
                   (g1.a2e + s1sq) * g2.a2e + zo * s2sq * g2.e +
                   s3sq * g2.a2e + s3sq * s2sq +
                   zo * (g2.a2e * g2.e + g2.ae * g2.ae) + zo * s3sq * g1.e +
                   zo * zo * g2.e * g1.e + 4.0 * zo * g2.ae * g1.ae);
  }
  return b2sq * (s1sq * s2sq + fo * s1sq * g1.e + s2sq * g1.a2e +
                 fo * (g1.a2e * g1.e + g1.ae * g1.ae) +
                 (g1.a2e + s1sq) * g2.a2e + s3sq * s2sq + fo * s2sq * g2.e +
                 s3sq * g2.a2e + fo * (g2.a2e * g2.e + g2.ae * g2.ae) +
                 fo * s3sq * g2.e + fo * fo * g1.e * g2.e +
                 4.0 * fo * g1.ae * g2.ae);
}

}  // namespace otafl
