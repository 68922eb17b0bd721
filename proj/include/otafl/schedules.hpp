// Step-size schedules, the sufficient conditions on their decay exponents,
// and the sample-path iteration-count / rate-bound calculators.

#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "otafl/estimators.hpp"

namespace otafl {

// a0 * (1+k)^(-upsilon); strictly decreasing to zero for upsilon > 0.
inline double diminishing(std::size_t k, double a0, double upsilon) {
  return a0 * std::pow(1.0 + static_cast<double>(k), -upsilon);
}

struct Assumption3Report {
  bool ok = false;
  std::vector<std::string> violations;
};

// Sufficient conditions for the diminishing pair (eta_k, gamma_k) with
// exponents (u1, u2): positivity, 0 < u1+u2 <= 1, u1+3u2 > 1, u1+u2 > 0.5.
inline Assumption3Report validate_assumption3(double u1, double u2) {
  Assumption3Report r;
  if (!(u1 > 0.0)) r.violations.push_back("upsilon1 must be > 0");
  if (!(u2 > 0.0)) r.violations.push_back("upsilon2 must be > 0");
  if (!(u1 + u2 <= 1.0)) r.violations.push_back("upsilon1 + upsilon2 must be <= 1");
  if (!(u1 + 3.0 * u2 > 1.0)) r.violations.push_back("upsilon1 + 3*upsilon2 must be > 1");
  if (!(u1 + u2 > 0.5)) r.violations.push_back("upsilon1 + upsilon2 must be > 0.5");
  r.ok = r.violations.empty();
  return r;
}

// Step-size schedule of a run. Diminishing uses eta_k = eta0*(1+k)^-u1,
// gamma_k = gamma0*(1+k)^-u2. The constant kinds are horizon-tuned:
// ConstantZO fixes eta = eta0*K^-1/4 and gamma = gamma0*K^-1/4, ConstantFO
// fixes eta = eta0*K^-1/2 (gamma unused by first-order runs).
struct Schedule {
  enum class Kind { Diminishing, ConstantZO, ConstantFO };
  Kind kind = Kind::Diminishing;
  double eta0 = 0.5;
  double gamma0 = 2.5;
  double upsilon1 = 0.5;
  double upsilon2 = 0.25;
  std::size_t horizon = 1;  // K, constant kinds only

  void validate() const {
    if (!(eta0 > 0.0)) throw std::invalid_argument("schedule: eta0 must be > 0");
    if (!(gamma0 > 0.0)) throw std::invalid_argument("schedule: gamma0 must be > 0");
    if (kind == Kind::Diminishing) {
      if (!(upsilon1 > 0.0) || !(upsilon2 > 0.0))
        throw std::invalid_argument("schedule: exponents must be > 0");
    } else if (horizon < 1) {
      throw std::invalid_argument("schedule: constant kinds need horizon K >= 1");
    }
  }

  double eta(std::size_t k) const {
    switch (kind) {
      case Kind::Diminishing: return diminishing(k, eta0, upsilon1);
      case Kind::ConstantZO:
        return eta0 * std::pow(static_cast<double>(horizon), -0.25);
      case Kind::ConstantFO:
        return eta0 * std::pow(static_cast<double>(horizon), -0.5);
    }
    return 0.0;
  }

  double gamma(std::size_t k) const {
    switch (kind) {
      case Kind::Diminishing: return diminishing(k, gamma0, upsilon2);
      case Kind::ConstantZO:
        return gamma0 * std::pow(static_cast<double>(horizon), -0.25);
      case Kind::ConstantFO: return gamma0;
    }
    return 0.0;
  }
};

inline void check_eps_beta(double eps, double beta) {
  if (!(eps > 0.0) || !(eps < 1.0))
    throw std::invalid_argument("epsilon must be in (0,1)");
  if (!(beta > 0.0) || !(beta < 1.0))
    throw std::invalid_argument("beta must be in (0,1)");
}

// Iterations guaranteeing Prob(min_k ||grad F||^2 < eps) >= 1-beta for the
// zero-order method with horizon-tuned constant steps:
//   K = 1/(eps^2 beta^2) * (2 Dhat/(eta0 gamma0 c1) + c3^2 gamma0^2
//                           + C mu eta0 gamma0 / c1)^2
// The async variant is the same expression with the async moment bound.
inline double theorem2_iterations(double eps, double beta,
                                  const TheoryConstants& tc,
                                  std::size_t n_devices, double moment_bound,
                                  double eta0, double gamma0) {
  check_eps_beta(eps, beta);
  double c1 = tc.c1(), c3 = tc.c3(n_devices);
  double inner = 2.0 * tc.delta_hat / (eta0 * gamma0 * c1) +
                 c3 * c3 * gamma0 * gamma0 +
                 moment_bound * tc.smoothness * eta0 * gamma0 / c1;
  return std::ceil(inner * inner / (eps * eps * beta * beta));
}

// First-order counterpart:
//   K = 1/(eps^2 beta^2) * (Dhat/(b1 eta0) + eta0 mu C2 / (2 b1))^2
inline double theorem4_iterations(double eps, double beta,
                                  const TheoryConstants& tc,
                                  double moment_bound, double eta0) {
  check_eps_beta(eps, beta);
  double inner = tc.delta_hat / (tc.b1 * eta0) +
                 eta0 * tc.smoothness * moment_bound / (2.0 * tc.b1);
  return std::ceil(inner * inner / (eps * eps * beta * beta));
}

// Failure probability after K iterations at accuracy eps (the algebraic
// inverse of theorem2_iterations).
inline double theorem2_beta(double eps, double K, const TheoryConstants& tc,
                            std::size_t n_devices, double moment_bound,
                            double eta0, double gamma0) {
  double c1 = tc.c1(), c3 = tc.c3(n_devices);
  double inner = 2.0 * tc.delta_hat / (eta0 * gamma0 * c1) +
                 c3 * c3 * gamma0 * gamma0 +
                 moment_bound * tc.smoothness * eta0 * gamma0 / c1;
  return inner / (eps * std::sqrt(K));
}

inline double theorem4_beta(double eps, double K, const TheoryConstants& tc,
                            double moment_bound, double eta0) {
  double inner = tc.delta_hat / (tc.b1 * eta0) +
                 eta0 * tc.smoothness * moment_bound / (2.0 * tc.b1);
  return inner / (eps * std::sqrt(K));
}

// Upper bound on min_{k=1:K} E||grad F(theta_k)||^2 under the zero-order
// method with constant steps eta0 K^-1/4, gamma0 K^-1/4:
//   2 Dhat/(sqrt(K) eta0 gamma0 c1) + c3^2 gamma0^2/sqrt(K)
//     + eta0 gamma0 C mu/(c1 sqrt(K))
inline double rate_bound_thm2(double K, double eta0, double gamma0,
                              const TheoryConstants& tc, std::size_t n_devices,
                              double moment_bound) {
  if (K < 1.0) throw std::invalid_argument("rate_bound_thm2: K must be >= 1");
  double c1 = tc.c1(), c3 = tc.c3(n_devices);
  double sqrtK = std::sqrt(K);
  return 2.0 * tc.delta_hat / (sqrtK * eta0 * gamma0 * c1) +
         c3 * c3 * gamma0 * gamma0 / sqrtK +
         eta0 * gamma0 * moment_bound * tc.smoothness / (c1 * sqrtK);
}

// First-order counterpart: 2 Dhat/(sqrt(K) eta0 b1) + eta0 mu C2/(2 b1 sqrt(K)).
inline double rate_bound_thm4(double K, double eta0, const TheoryConstants& tc,
                              double moment_bound) {
  if (K < 1.0) throw std::invalid_argument("rate_bound_thm4: K must be >= 1");
  double sqrtK = std::sqrt(K);
  return 2.0 * tc.delta_hat / (sqrtK * eta0 * tc.b1) +
         eta0 * tc.smoothness * moment_bound / (2.0 * tc.b1 * sqrtK);
}

}  // namespace otafl
