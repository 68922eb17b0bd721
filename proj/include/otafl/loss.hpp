// Loss models shared by all devices: parameter vector, per-sample losses,
// exact gradients, and a central-difference oracle used in tests to validate
// every analytic gradient.
//
// Two kinds:
//  - Quadratic:         f(theta, (x, t)) = 1/2 ||theta - t*x||^2.
//                       Constant Hessian (identity), so the two-point
//                       estimator is exactly unbiased on this loss. With
//                       zero targets it reduces to 1/2 ||theta||^2 per
//                       sample and the global objective is N/2 ||theta||^2,
//                       making optimality gaps exactly computable.
//  - NonconvexLogistic: binary logistic loss with the bounded nonconvex
//                       regularizer lambda * sum_j theta_j^2 / (1 + theta_j^2).

#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace otafl {

using Vec = std::vector<double>;

struct Sample {
  Vec features;
  // Class label in {-1, +1} for logistic, real target for quadratic.
  double label = 0.0;
};

// An ordered, immutable collection of samples with a common feature
// dimension.
struct Dataset {
  std::string name;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  std::size_t feature_dim() const {
    return samples.empty() ? 0 : samples.front().features.size();
  }
};

enum class LossKind { Quadratic, NonconvexLogistic };

struct LossModel {
  LossKind kind = LossKind::Quadratic;
  double lambda = 0.1;  // regularizer weight, logistic only
};

inline double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm_sq(const Vec& v) { return dot(v, v); }
inline double norm(const Vec& v) { return std::sqrt(norm_sq(v)); }

inline void check_dims(const Vec& theta, const Sample& s) {
  if (theta.size() != s.features.size())
    throw std::invalid_argument("loss: parameter/feature dimension mismatch (" +
                                std::to_string(theta.size()) + " vs " +
                                std::to_string(s.features.size()) + ")");
}

inline double eval_loss(const LossModel& model, const Vec& theta,
                        const Sample& s) {
  check_dims(theta, s);
  switch (model.kind) {
    case LossKind::Quadratic: {
      double acc = 0.0;
      for (std::size_t j = 0; j < theta.size(); ++j) {
        double r = theta[j] - s.label * s.features[j];
        acc += r * r;
      }
      return 0.5 * acc;
    }
    case LossKind::NonconvexLogistic: {
      double z = -s.label * dot(theta, s.features);
      // log(1 + e^z), stable for large |z|
      double logistic = z > 0 ? z + std::log1p(std::exp(-z))
                              : std::log1p(std::exp(z));
      double reg = 0.0;
      for (double tj : theta) reg += tj * tj / (1.0 + tj * tj);
      return logistic + model.lambda * reg;
    }
  }
  throw std::logic_error("unknown loss kind");
}

inline Vec eval_grad(const LossModel& model, const Vec& theta,
                     const Sample& s) {
  check_dims(theta, s);
  Vec g(theta.size());
  switch (model.kind) {
    case LossKind::Quadratic:
      for (std::size_t j = 0; j < theta.size(); ++j)
        g[j] = theta[j] - s.label * s.features[j];
      return g;
    case LossKind::NonconvexLogistic: {
      double z = -s.label * dot(theta, s.features);
      // sigmoid(z) without overflow
      double sz = z > 0 ? 1.0 / (1.0 + std::exp(-z))
                        : std::exp(z) / (1.0 + std::exp(z));
      for (std::size_t j = 0; j < theta.size(); ++j) {
        double d = 1.0 + theta[j] * theta[j];
        g[j] = -s.label * sz * s.features[j] +
               model.lambda * 2.0 * theta[j] / (d * d);
      }
      return g;
    }
  }
  throw std::logic_error("unknown loss kind");
}

// Central differences (f(theta + h e_j) - f(theta - h e_j)) / 2h. Test
// oracle; deliberately independent of eval_grad.
inline Vec finite_diff_grad(const LossModel& model, const Vec& theta,
                            const Sample& s, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_grad: h must be > 0");
  Vec g(theta.size());
  Vec probe = theta;
  for (std::size_t j = 0; j < theta.size(); ++j) {
    probe[j] = theta[j] + h;
    double fp = eval_loss(model, probe, s);
    probe[j] = theta[j] - h;
    double fm = eval_loss(model, probe, s);
    probe[j] = theta[j];
    g[j] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// Mean gradient of device i's local data: grad F_i(theta).
inline Vec device_mean_grad(const LossModel& model, const Vec& theta,
                            const Dataset& shard) {
  if (shard.empty())
    throw std::invalid_argument("device_mean_grad: empty dataset");
  Vec acc(theta.size(), 0.0);
  for (const Sample& s : shard.samples) {
    Vec g = eval_grad(model, theta, s);
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += g[j];
  }
  for (double& v : acc) v /= static_cast<double>(shard.size());
  return acc;
}

// Mean loss of device i's local data: F_i(theta).
inline double device_mean_loss(const LossModel& model, const Vec& theta,
                               const Dataset& shard) {
  if (shard.empty())
    throw std::invalid_argument("device_mean_loss: empty dataset");
  double acc = 0.0;
  for (const Sample& s : shard.samples) acc += eval_loss(model, theta, s);
  return acc / static_cast<double>(shard.size());
}

// Gradient of the global objective F = sum_i F_i over all device shards.
inline Vec global_grad(const LossModel& model, const Vec& theta,
                       const std::vector<Dataset>& shards) {
  Vec acc(theta.size(), 0.0);
  for (const Dataset& shard : shards) {
    Vec g = device_mean_grad(model, theta, shard);
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += g[j];
  }
  return acc;
}

inline double global_loss(const LossModel& model, const Vec& theta,
                          const std::vector<Dataset>& shards) {
  double acc = 0.0;
  for (const Dataset& shard : shards)
    acc += device_mean_loss(model, theta, shard);
  return acc;
}

// ||grad F(theta)||^2, the quantity the convergence theorems track.
inline double global_grad_norm_sq(const LossModel& model, const Vec& theta,
                                  const std::vector<Dataset>& shards) {
  return norm_sq(global_grad(model, theta, shards));
}

}  // namespace otafl
