// Federated training loop for the minislot-product methods and the FedAvg
// baseline. A run is strictly sequential; every device holds its own model
// replica updated from the one broadcast scalar, and replica equality is
// asserted every round.

#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "otafl/channel.hpp"
#include "otafl/estimators.hpp"
#include "otafl/loss.hpp"
#include "otafl/rng.hpp"
#include "otafl/schedules.hpp"

namespace otafl {

enum class Algorithm { Ezofl, Efofl, EzoflAsync, EfoflAsync, FedAvg };

inline const char* algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::Ezofl: return "ezofl";
    case Algorithm::Efofl: return "efofl";
    case Algorithm::EzoflAsync: return "ezofl-async";
    case Algorithm::EfoflAsync: return "efofl-async";
    case Algorithm::FedAvg: return "fedavg";
  }
  return "?";
}

inline Algorithm algorithm_from_name(const std::string& name) {
  if (name == "ezofl") return Algorithm::Ezofl;
  if (name == "efofl") return Algorithm::Efofl;
  if (name == "ezofl-async") return Algorithm::EzoflAsync;
  if (name == "efofl-async") return Algorithm::EfoflAsync;
  if (name == "fedavg") return Algorithm::FedAvg;
  throw std::invalid_argument("unknown algorithm: " + name);
}

inline bool algorithm_is_async(Algorithm a) {
  return a == Algorithm::EzoflAsync || a == Algorithm::EfoflAsync;
}

// Task bound to a run: common loss, one shard per device, optional test set.
struct TrainTask {
  LossModel loss;
  std::vector<Dataset> shards;
  Dataset test;

  std::size_t devices() const { return shards.size(); }
  std::size_t dim() const {
    return shards.empty() ? 0 : shards.front().feature_dim();
  }
};

struct RunConfig {
  Algorithm algorithm = Algorithm::Ezofl;
  std::size_t rounds = 100;  // K
  Schedule schedule;
  ChannelConfig channel;
  PerturbationKind perturbation = PerturbationKind::Rademacher;
  double async_fraction = 0.0;  // share of devices transmitting late
  uint64_t seed = 1;
  std::size_t eval_every = 10;
  std::size_t batch_size = 1;
  std::size_t fedavg_local_steps = 1;
  enum class Init { Zeros, Gaussian };
  Init init = Init::Zeros;
  double init_scale = 1.0;
  double divergence_norm = 1e6;

  void validate() const {
    schedule.validate();
    channel.validate();
    if (batch_size < 1) throw std::invalid_argument("config: batch_size >= 1");
    if (eval_every < 1) throw std::invalid_argument("config: eval_every >= 1");
    if (async_fraction < 0.0 || async_fraction >= 1.0)
      throw std::invalid_argument("config: async_fraction must be in [0,1)");
    if (!algorithm_is_async(algorithm) && async_fraction != 0.0)
      throw std::invalid_argument("config: async_fraction requires an async algorithm");
  }
};

// One row per round. Slot fields hold the received minislot scalars (NaN
// where the protocol has no such slot); evaluation fields are NaN on rounds
// without an evaluation.
struct RoundTrace {
  std::size_t k = 0;
  double eta = 0.0;
  double gamma = 0.0;
  double slot1 = std::numeric_limits<double>::quiet_NaN();
  double slot2 = std::numeric_limits<double>::quiet_NaN();
  double slot3 = std::numeric_limits<double>::quiet_NaN();
  double grad_norm_sq = std::numeric_limits<double>::quiet_NaN();
  double train_loss = std::numeric_limits<double>::quiet_NaN();
  double test_acc = std::numeric_limits<double>::quiet_NaN();
};

// Per-round communication cost, independent of the model dimension for the
// minislot methods. FedAvg's would-be vector payload is recorded for
// comparison.
struct CommAccounting {
  std::size_t uplink_scalars_per_device = 0;
  std::size_t minislots = 0;
  std::size_t downlink_scalars = 0;
};

struct RunResult {
  std::vector<RoundTrace> trace;
  Vec theta;
  bool diverged = false;
  std::size_t diverged_at = 0;
  CommAccounting comm;
  TheoryConstants constants;  // measured at theta_0, recorded in manifests
};

// Random disjoint split for round k: |n2| = round(fraction * N) late devices,
// reproducible from (seed, k) and independent of other streams.
inline DeviceSplit async_partition(std::size_t n_devices, double fraction,
                                   uint64_t seed, std::size_t k) {
  if (fraction < 0.0 || fraction >= 1.0)
    throw std::invalid_argument("async_partition: fraction must be in [0,1)");
  std::vector<std::size_t> order(n_devices);
  for (std::size_t i = 0; i < n_devices; ++i) order[i] = i;
  Rng rng(seed, Stream::AsyncSplit, k);
  for (std::size_t i = n_devices - 1; i > 0; --i)
    std::swap(order[i], order[rng.uniform_index(i + 1)]);
  std::size_t late = static_cast<std::size_t>(
      std::llround(fraction * static_cast<double>(n_devices)));
  DeviceSplit split;
  split.n2.assign(order.begin(), order.begin() + late);
  split.n1.assign(order.begin() + late, order.end());
  std::sort(split.n1.begin(), split.n1.end());
  std::sort(split.n2.begin(), split.n2.end());
  return split;
}

// Fraction of test samples whose sign(theta . x) matches the label; a zero
// score counts as +1.
inline double evaluate_accuracy(const Vec& theta, const Dataset& test) {
  if (test.empty())
    throw std::invalid_argument("evaluate_accuracy: empty test set");
  std::size_t hits = 0;
  for (const Sample& s : test.samples) {
    double pred = dot(theta, s.features) >= 0.0 ? 1.0 : -1.0;
    if (pred == s.label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(test.size());
}

namespace detail {

inline Vec initial_theta(const RunConfig& cfg, std::size_t d) {
  Vec theta(d, 0.0);
  if (cfg.init == RunConfig::Init::Gaussian) {
    Rng rng(cfg.seed, Stream::Init);
    for (double& v : theta) v = rng.gaussian(0.0, cfg.init_scale);
  }
  return theta;
}

inline bool finite_and_bounded(const Vec& theta, double bound) {
  double nsq = 0.0;
  for (double v : theta) {
    if (!std::isfinite(v)) return false;
    nsq += v * v;
  }
  return nsq <= bound * bound;
}

inline void evaluate_round(const TrainTask& task, const Vec& theta,
                           RoundTrace& row) {
  Vec grad = global_grad(task.loss, theta, task.shards);
  row.grad_norm_sq = norm_sq(grad);
  row.train_loss = global_loss(task.loss, theta, task.shards);
  if (!task.test.empty()) row.test_acc = evaluate_accuracy(theta, task.test);
}

}  // namespace detail

// Runs K rounds of the configured algorithm. Returns the full trace; on
// divergence the trace ends at the offending round and `diverged` is set.
inline RunResult run_training(const RunConfig& cfg, const TrainTask& task) {
  cfg.validate();
  if (task.shards.empty())
    throw std::invalid_argument("run_training: no device shards");
  for (const Dataset& shard : task.shards)
    if (shard.empty())
      throw std::invalid_argument("run_training: empty device shard");
  const std::size_t n = task.devices();
  const std::size_t d = task.dim();

  RunResult result;
  Vec theta = detail::initial_theta(cfg, d);
  result.constants = compute_constants(task.loss, task.shards, theta,
                                       cfg.schedule.gamma(0), cfg.perturbation);

  if (cfg.algorithm == Algorithm::FedAvg) {
    result.comm = {d, 0, d};
    for (std::size_t k = 0; k < cfg.rounds; ++k) {
      RoundTrace row;
      row.k = k;
      row.eta = cfg.schedule.eta(k);
      row.gamma = 0.0;
      if (k % cfg.eval_every == 0 || k + 1 == cfg.rounds)
        detail::evaluate_round(task, theta, row);
      Vec next(d, 0.0);
      for (const Dataset& shard : task.shards) {
        Vec local = theta;
        for (std::size_t step = 0; step < cfg.fedavg_local_steps; ++step) {
          Vec g = device_mean_grad(task.loss, local, shard);
          for (std::size_t j = 0; j < d; ++j) local[j] -= row.eta * g[j];
        }
        for (std::size_t j = 0; j < d; ++j) next[j] += local[j];
      }
      for (std::size_t j = 0; j < d; ++j) theta[j] = next[j] / double(n);
      result.trace.push_back(row);
      if (!detail::finite_and_bounded(theta, cfg.divergence_norm)) {
        result.diverged = true;
        result.diverged_at = k;
        break;
      }
    }
    result.theta = theta;
    return result;
  }

  const bool async = algorithm_is_async(cfg.algorithm);
  const Estimator est = [&] {
    switch (cfg.algorithm) {
      case Algorithm::Ezofl: return Estimator::Ezofl;
      case Algorithm::Efofl: return Estimator::Efofl;
      case Algorithm::EzoflAsync: return Estimator::EzoflAsync;
      default: return Estimator::EfoflAsync;
    }
  }();
  result.comm = {async ? std::size_t(2) : std::size_t(2),
                 async ? std::size_t(3) : std::size_t(2), 1};

  Precoder precoder = precoder_constants(cfg.channel, n);
  // Every device keeps its own replica; the broadcast scalar plus the shared
  // perturbation stream must keep them identical.
  std::vector<Vec> replicas(n, theta);
  DeviceBatches batches(n);

  for (std::size_t k = 0; k < cfg.rounds; ++k) {
    RoundTrace row;
    row.k = k;
    row.eta = cfg.schedule.eta(k);
    row.gamma = cfg.schedule.gamma(k);
    if (k % cfg.eval_every == 0 || k + 1 == cfg.rounds)
      detail::evaluate_round(task, theta, row);

    RoundRandomness rr = sample_round_randomness(n, d, cfg.perturbation,
                                                 cfg.channel, cfg.seed, k);
    for (std::size_t i = 0; i < n; ++i) {
      Rng pick(cfg.seed, Stream::Sample, i, k);
      batches[i].clear();
      for (std::size_t b = 0; b < cfg.batch_size; ++b)
        batches[i].push_back(
            &task.shards[i].samples[pick.uniform_index(task.shards[i].size())]);
    }
    DeviceSplit split = async
                            ? async_partition(n, cfg.async_fraction, cfg.seed, k)
                            : DeviceSplit::all_sync(n);
    GradEstimate estimate =
        run_estimator(est, task.loss, batches, theta, row.gamma, rr, precoder,
                      split);
    row.slot1 = estimate.slot1;
    row.slot2 = estimate.slot2;
    row.slot3 = estimate.slot3;

    // Each device applies theta <- theta - eta * product * phi on its own
    // replica from the same broadcast scalar.
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j)
        replicas[i][j] -= row.eta * estimate.product * rr.phi[j];
    for (std::size_t i = 1; i < n; ++i)
      if (replicas[i] != replicas[0])
        throw std::logic_error("run_training: device replicas disagree");
    theta = replicas[0];

    result.trace.push_back(row);
    if (!detail::finite_and_bounded(theta, cfg.divergence_norm)) {
      result.diverged = true;
      result.diverged_at = k;
      break;
    }
  }
  result.theta = theta;
  return result;
}

// FedAvg with an ideal noiseless channel and full local gradients.
inline RunResult fedavg_baseline(RunConfig cfg, const TrainTask& task) {
  cfg.algorithm = Algorithm::FedAvg;
  return run_training(cfg, task);
}

// ---------------------------------------------------------------------------
// Convergence-rate measurement

struct RateFit {
  double slope = 0.0;
  double stderr_slope = 0.0;
  std::size_t points = 0;
};

// Least-squares slope of log(mean over replicates of running-min
// ||grad F||^2) against log k, over evaluation rounds k >= burn_in.
inline RateFit measure_rate(const std::vector<std::vector<RoundTrace>>& runs,
                            std::size_t burn_in) {
  if (runs.empty()) throw std::invalid_argument("measure_rate: no traces");
  // running minimum per replicate on the shared evaluation grid
  std::vector<std::vector<std::pair<std::size_t, double>>> mins(runs.size());
  for (std::size_t r = 0; r < runs.size(); ++r) {
    double run_min = std::numeric_limits<double>::infinity();
    for (const RoundTrace& row : runs[r]) {
      if (std::isnan(row.grad_norm_sq)) continue;
      run_min = std::min(run_min, row.grad_norm_sq);
      mins[r].push_back({row.k, run_min});
    }
    if (mins[r].size() != mins[0].size())
      throw std::invalid_argument("measure_rate: traces have differing eval grids");
  }
  std::vector<double> xs, ys;
  for (std::size_t p = 0; p < mins[0].size(); ++p) {
    std::size_t k = mins[0][p].first;
    if (k < burn_in || k == 0) continue;
    double mean = 0.0;
    for (std::size_t r = 0; r < runs.size(); ++r) {
      if (mins[r][p].first != k)
        throw std::invalid_argument("measure_rate: traces have differing eval grids");
      mean += mins[r][p].second;
    }
    mean /= static_cast<double>(runs.size());
    if (!(mean > 0.0))
      throw std::invalid_argument("measure_rate: degenerate (non-positive) trace");
    xs.push_back(std::log(static_cast<double>(k)));
    ys.push_back(std::log(mean));
  }
  if (xs.size() < 2)
    throw std::invalid_argument("measure_rate: not enough points after burn-in");

  double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  RateFit fit;
  fit.points = xs.size();
  fit.slope = sxy / sxx;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    double resid = ys[i] - my - fit.slope * (xs[i] - mx);
    ss_res += resid * resid;
  }
  fit.stderr_slope =
      xs.size() > 2 ? std::sqrt(ss_res / (n - 2.0) / sxx) : 0.0;
  return fit;
}

// ---------------------------------------------------------------------------
// Trace CSV

inline std::string format_trace_csv(const std::vector<RoundTrace>& trace) {
  std::ostringstream out;
  out.precision(17);
  out << "k,eta,gamma,slot1,slot2,slot3,grad_norm_sq,train_loss,test_acc\n";
  auto cell = [&](double v) {
    out << ",";
    if (!std::isnan(v)) out << v;
  };
  for (const RoundTrace& row : trace) {
    out << row.k;
    cell(row.eta);
    cell(row.gamma);
    cell(row.slot1);
    cell(row.slot2);
    cell(row.slot3);
    cell(row.grad_norm_sq);
    cell(row.train_loss);
    cell(row.test_acc);
    out << "\n";
  }
  return out.str();
}

inline std::vector<RoundTrace> parse_trace_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) ||
      line != "k,eta,gamma,slot1,slot2,slot3,grad_norm_sq,train_loss,test_acc")
    throw std::runtime_error("trace csv: bad header");
  std::vector<RoundTrace> trace;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    // manual split: std::getline drops a trailing empty field
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      std::size_t pos = line.find(',', start);
      if (pos == std::string::npos) {
        cells.push_back(line.substr(start));
        break;
      }
      cells.push_back(line.substr(start, pos - start));
      start = pos + 1;
    }
    if (cells.size() != 9) throw std::runtime_error("trace csv: short row");
    auto value = [&](std::size_t i) {
      return cells[i].empty() ? std::numeric_limits<double>::quiet_NaN()
                              : std::stod(cells[i]);
    };
    RoundTrace t;
    t.k = std::stoull(cells[0]);
    t.eta = value(1);
    t.gamma = value(2);
    t.slot1 = value(3);
    t.slot2 = value(4);
    t.slot3 = value(5);
    t.grad_norm_sq = value(6);
    t.train_loss = value(7);
    t.test_acc = value(8);
    trace.push_back(t);
  }
  return trace;
}

inline std::vector<RoundTrace> read_trace_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("trace csv: cannot open " + path);
  return parse_trace_csv(in);
}

}  // namespace otafl
