// Experiment runner and verification front-end.
//
// Subcommands:
//   run     execute one training run from a config file, write trace + manifest
//   verify  Monte-Carlo checks of the estimator moment claims
//   rate    replicate runs and measure the empirical convergence-rate slope
//   bound   tabulate required-iteration counts from a constants file
//
// Exit codes: 0 success / all checks pass, 1 usage or config error,
// 2 divergence, 3 verification failure.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "otafl/config.hpp"
#include "otafl/schedules.hpp"
#include "otafl/trainer.hpp"
#include "otafl/verify.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitDiverged = 2;
constexpr int kExitVerifyFailed = 3;

void write_atomic(const fs::path& path, const std::string& content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
  }
  fs::rename(tmp, path);
}

void require_writable(const fs::path& path, bool overwrite) {
  if (fs::exists(path) && !overwrite)
    throw std::runtime_error(path.string() +
                             " exists; pass --overwrite to replace it");
}

json channel_json(const otafl::ChannelConfig& c) {
  return json{{"sigma_h", c.sigma_h},
              {"sigma_n", c.sigma_n},
              {"sigma1", c.sigma_slot[0]},
              {"sigma2", c.sigma_slot[1]},
              {"sigma3", c.sigma_slot[2]}};
}

json schedule_json(const otafl::Schedule& s) {
  const char* kind = s.kind == otafl::Schedule::Kind::Diminishing ? "diminishing"
                     : s.kind == otafl::Schedule::Kind::ConstantZO
                         ? "constant-zo"
                         : "constant-fo";
  return json{{"kind", kind},          {"eta0", s.eta0},
              {"gamma0", s.gamma0},    {"upsilon1", s.upsilon1},
              {"upsilon2", s.upsilon2}, {"horizon", s.horizon}};
}

json manifest_json(const otafl::FullConfig& cfg, const otafl::TrainTask& task,
                   const otafl::RunResult& result) {
  const char* task_kind =
      cfg.task.kind == otafl::TaskSpec::Kind::SyntheticLogistic
          ? "synthetic-logistic"
      : cfg.task.kind == otafl::TaskSpec::Kind::SyntheticQuadratic
          ? "synthetic-quadratic"
      : cfg.task.kind == otafl::TaskSpec::Kind::Mnist ? "mnist"
                                                      : "csv";
  std::size_t train_size = 0;
  for (const auto& shard : task.shards) train_size += shard.size();
  json m;
  m["version"] = otafl::kVersion;
  m["seed"] = cfg.run.seed;
  m["trainer"] = {
      {"algorithm", otafl::algorithm_name(cfg.run.algorithm)},
      {"rounds", cfg.run.rounds},
      {"eval_every", cfg.run.eval_every},
      {"batch_size", cfg.run.batch_size},
      {"async_fraction", cfg.run.async_fraction},
      {"fedavg_local_steps", cfg.run.fedavg_local_steps},
      {"init", cfg.run.init == otafl::RunConfig::Init::Zeros ? "zeros"
                                                             : "gaussian"},
      {"init_scale", cfg.run.init_scale},
      {"divergence_norm", cfg.run.divergence_norm},
      {"perturbation",
       cfg.run.perturbation == otafl::PerturbationKind::Rademacher
           ? "rademacher"
           : "sphere"}};
  m["schedule"] = schedule_json(cfg.run.schedule);
  m["channel"] = channel_json(cfg.run.channel);
  m["task"] = {{"kind", task_kind},
               {"devices", task.devices()},
               {"dim", task.dim()},
               {"train_samples", train_size},
               {"test_samples", task.test.size()},
               {"lambda", cfg.task.lambda},
               {"bias", cfg.task.bias},
               {"margin", cfg.task.margin}};
  m["comm"] = {{"uplink_scalars_per_device_per_round",
                result.comm.uplink_scalars_per_device},
               {"minislots_per_round", result.comm.minislots},
               {"downlink_scalars_per_round", result.comm.downlink_scalars}};
  m["constants"] = {{"smoothness", result.constants.smoothness},
                    {"hessian_bound", result.constants.hessian_bound},
                    {"lipschitz", result.constants.lipschitz},
                    {"grad_bound", result.constants.grad_bound},
                    {"b1", result.constants.b1},
                    {"b2", result.constants.b2},
                    {"delta_hat", result.constants.delta_hat}};
  m["rounds_completed"] = result.trace.size();
  m["diverged"] = result.diverged;
  if (result.diverged) m["diverged_at"] = result.diverged_at;
  return m;
}

struct RunArgs {
  std::string config_path;
  std::string out_dir = "out";
  std::optional<uint64_t> seed;
  bool overwrite = false;
};

int cmd_run(const RunArgs& args) {
  otafl::FullConfig cfg = otafl::parse_config_file(args.config_path);
  if (args.seed) cfg.run.seed = *args.seed;
  otafl::TrainTask task = otafl::build_task(cfg.task);

  fs::create_directories(args.out_dir);
  fs::path trace_path = fs::path(args.out_dir) / "trace.csv";
  fs::path manifest_path = fs::path(args.out_dir) / "manifest.json";
  require_writable(trace_path, args.overwrite);
  require_writable(manifest_path, args.overwrite);

  otafl::RunResult result = otafl::run_training(cfg.run, task);
  write_atomic(trace_path, otafl::format_trace_csv(result.trace));
  write_atomic(manifest_path, manifest_json(cfg, task, result).dump(2) + "\n");

  if (result.diverged) {
    std::cerr << "run diverged at round " << result.diverged_at
              << "; partial trace written to " << trace_path << "\n";
    return kExitDiverged;
  }
  std::cout << "wrote " << trace_path.string() << " ("
            << result.trace.size() << " rounds)\n";
  return kExitOk;
}

struct VerifyArgs {
  std::string suite;
  std::size_t trials = 100000;
  uint64_t seed = 1;
  std::string out_dir;
  bool overwrite = false;
};

// The suites run Monte-Carlo oracles at several model dimensions; rows are
// grouped per dimension so each CSV has a fixed column set.
void write_moment_csvs(const otafl::SuiteResult& result,
                       const std::string& out_dir, bool overwrite) {
  fs::create_directories(out_dir);
  std::map<std::size_t, std::string> per_dim;
  for (const auto& row : result.moments) {
    std::size_t d = row.stats.mean.size();
    if (!per_dim.count(d)) per_dim[d] = otafl::moments_csv_header(d);
    per_dim[d] += otafl::format_moments_csv_row(row.est, row.stats, row.bound);
  }
  for (const auto& [d, content] : per_dim) {
    fs::path p = fs::path(out_dir) /
                 (result.suite + "_moments_d" + std::to_string(d) + ".csv");
    require_writable(p, overwrite);
    write_atomic(p, content);
    std::cout << "wrote " << p.string() << "\n";
  }
}

int cmd_verify(const VerifyArgs& args) {
  otafl::SuiteResult result =
      otafl::run_verify_suite(args.suite, args.trials, args.seed);
  for (const auto& check : result.checks)
    std::cout << (check.pass ? "[PASS] " : "[FAIL] ") << result.suite << ": "
              << check.name << " -- " << check.detail << "\n";
  if (!args.out_dir.empty())
    write_moment_csvs(result, args.out_dir, args.overwrite);
  std::cout << result.suite << ": "
            << (result.all_pass() ? "all checks passed" : "checks FAILED")
            << "\n";
  return result.all_pass() ? kExitOk : kExitVerifyFailed;
}

struct RateArgs {
  std::string config_path;
  std::size_t replicates = 20;
  std::size_t jobs = 1;
  std::optional<uint64_t> seed;
  std::optional<std::size_t> burn_in;
  std::string out_dir;
  bool overwrite = false;
};

int cmd_rate(const RateArgs& args) {
  if (args.replicates < 10)
    throw std::runtime_error("rate: need at least 10 replicates");
  otafl::FullConfig cfg = otafl::parse_config_file(args.config_path);
  if (args.seed) cfg.run.seed = *args.seed;
  otafl::TrainTask task = otafl::build_task(cfg.task);

  std::vector<otafl::RunResult> results(args.replicates);
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      std::size_t r = next.fetch_add(1);
      if (r >= args.replicates) return;
      otafl::RunConfig rc = cfg.run;
      rc.seed = cfg.run.seed + r;
      results[r] = otafl::run_training(rc, task);
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::max<std::size_t>(1, args.jobs); ++t)
    pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  if (!args.out_dir.empty()) {
    fs::create_directories(args.out_dir);
    for (std::size_t r = 0; r < results.size(); ++r) {
      fs::path p = fs::path(args.out_dir) / ("trace_rep" + std::to_string(r) + ".csv");
      require_writable(p, args.overwrite);
      write_atomic(p, otafl::format_trace_csv(results[r].trace));
    }
  }

  std::size_t diverged = 0;
  for (const auto& r : results)
    if (r.diverged) ++diverged;
  if (diverged * 5 > args.replicates) {
    std::cerr << "rate: " << diverged << "/" << args.replicates
              << " replicates diverged\n";
    for (std::size_t r = 0; r < results.size(); ++r)
      if (results[r].diverged)
        std::cerr << "  replicate " << r << " (seed " << cfg.run.seed + r
                  << ") diverged at round " << results[r].diverged_at << "\n";
    return kExitDiverged;
  }

  std::vector<std::vector<otafl::RoundTrace>> traces;
  for (auto& r : results)
    if (!r.diverged) traces.push_back(std::move(r.trace));
  std::size_t burn = args.burn_in.value_or(cfg.run.rounds / 10);
  otafl::RateFit fit = otafl::measure_rate(traces, burn);
  bool pass = fit.slope >= -0.8 && fit.slope <= -0.3;
  std::cout << "slope = " << fit.slope << " +- " << fit.stderr_slope << " ("
            << fit.points << " points, burn-in " << burn << ", "
            << traces.size() << " replicates)\n"
            << (pass ? "PASS" : "FAIL")
            << ": expected slope in [-0.8, -0.3]\n";
  return pass ? kExitOk : kExitVerifyFailed;
}

struct BoundArgs {
  double epsilon = 0.1;
  double beta = 0.1;
  std::string constants_path;
};

int cmd_bound(const BoundArgs& args) {
  std::ifstream in(args.constants_path);
  if (!in)
    throw std::runtime_error("cannot open " + args.constants_path);
  auto data = otafl::detail::parse_ini(in, args.constants_path);
  otafl::detail::check_sections(data, {"", "constants", "bound", "channel"});

  otafl::detail::SectionReader consts(data, "constants");
  otafl::TheoryConstants tc;
  tc.delta_hat = consts.get_double("delta_hat", 1.0);
  tc.smoothness = consts.get_double("mu", 1.0);
  tc.hessian_bound = consts.get_double("b", 1.0);
  tc.lipschitz = consts.get_double("lipschitz", 1.0);
  tc.grad_bound = consts.get_double("grad_bound", 1.0);
  tc.b1 = consts.get_double("b1", 1.0);
  tc.b2 = consts.get_double("b2", 1.0);
  consts.finish();

  otafl::detail::SectionReader bound(data, "bound");
  double eta0 = bound.get_double("eta0", 1.0);
  double gamma0 = bound.get_double("gamma0", 1.0);
  double gamma = bound.get_double("gamma", gamma0);
  std::size_t devices = bound.get_u64("devices", 10);
  std::size_t late = bound.get_u64("late", (devices + 2) / 3);
  bound.finish();
  if (late >= devices)
    throw std::runtime_error("bound: late devices must be < devices");

  otafl::detail::SectionReader chan(data, "channel");
  otafl::ChannelConfig channel;
  channel.sigma_h = chan.get_double("sigma_h", 1.0);
  channel.sigma_n = chan.get_double("sigma_n", 0.0);
  channel.sigma_slot[0] = chan.get_double("sigma1", -1.0);
  channel.sigma_slot[1] = chan.get_double("sigma2", -1.0);
  channel.sigma_slot[2] = chan.get_double("sigma3", -1.0);
  chan.finish();

  otafl::DeviceSplit sync = otafl::DeviceSplit::all_sync(devices);
  otafl::DeviceSplit split;
  for (std::size_t i = 0; i < devices; ++i)
    (i < late ? split.n2 : split.n1).push_back(i);

  double c = otafl::second_moment_bound(otafl::Estimator::Ezofl, tc, channel,
                                        gamma, devices, sync);
  double c2 = otafl::second_moment_bound(otafl::Estimator::Efofl, tc, channel,
                                         gamma, devices, sync);
  double cp = otafl::second_moment_bound(otafl::Estimator::EzoflAsync, tc,
                                         channel, gamma, devices, split);
  double c2p = otafl::second_moment_bound(otafl::Estimator::EfoflAsync, tc,
                                          channel, gamma, devices, split);

  double k_zo = otafl::theorem2_iterations(args.epsilon, args.beta, tc, devices,
                                           c, eta0, gamma0);
  double k_fo = otafl::theorem4_iterations(args.epsilon, args.beta, tc, c2, eta0);
  double k_zo_async = otafl::theorem2_iterations(args.epsilon, args.beta, tc,
                                                 devices, cp, eta0, gamma0);
  double k_fo_async =
      otafl::theorem4_iterations(args.epsilon, args.beta, tc, c2p, eta0);

  std::cout << "epsilon = " << args.epsilon << ", beta = " << args.beta
            << ", devices = " << devices << ", late = " << late << "\n";
  std::cout << "variant        moment-bound        K\n";
  auto row = [](const char* name, double b, double k) {
    std::printf("%-14s %-19.9g %.0f\n", name, b, k);
  };
  row("ezofl", c, k_zo);
  row("efofl", c2, k_fo);
  row("ezofl-async", cp, k_zo_async);
  row("efofl-async", c2p, k_fo_async);
  if (k_zo_async + 0.5 < k_zo || k_fo_async + 0.5 < k_fo) {
    std::cerr << "bound: async K fell below sync K\n";
    return kExitVerifyFailed;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"over-the-air federated learning simulator"};
  app.require_subcommand(1);

  RunArgs run_args;
  auto* run = app.add_subcommand("run", "execute one training run");
  run->add_option("--config", run_args.config_path, "run config file")
      ->required();
  run->add_option("--seed", run_args.seed, "override the master seed");
  run->add_option("--out", run_args.out_dir, "output directory");
  run->add_flag("--overwrite", run_args.overwrite,
                "replace existing trace/manifest files");

  VerifyArgs verify_args;
  auto* verify = app.add_subcommand(
      "verify", "Monte-Carlo checks of the estimator moment claims");
  verify
      ->add_option("--suite", verify_args.suite,
                   "lemma1 (zero-order bias structure), lemma2 (zero-order "
                   "second moment), lemma3 (first-order unbiasedness), lemma4 "
                   "(first-order second moment), async-moments")
      ->required();
  verify->add_option("--trials", verify_args.trials,
                     "Monte-Carlo trials per check (>= 10000)");
  verify->add_option("--seed", verify_args.seed, "master seed");
  verify->add_option("--out", verify_args.out_dir,
                     "export measured moments as CSV into this directory");
  verify->add_flag("--overwrite", verify_args.overwrite,
                   "replace existing CSV files");

  RateArgs rate_args;
  auto* rate = app.add_subcommand(
      "rate", "measure the empirical convergence-rate slope");
  rate->add_option("--config", rate_args.config_path, "run config file")
      ->required();
  rate->add_option("--replicates", rate_args.replicates,
                   "independent seeded replicates (>= 10)");
  rate->add_option("--jobs", rate_args.jobs, "parallel replicate workers");
  rate->add_option("--seed", rate_args.seed, "override the master seed");
  rate->add_option("--burn-in", rate_args.burn_in,
                   "first round included in the fit (default rounds/10)");
  rate->add_option("--out", rate_args.out_dir,
                   "write per-replicate traces to this directory");
  rate->add_flag("--overwrite", rate_args.overwrite,
                 "replace existing trace files");

  BoundArgs bound_args;
  auto* bound = app.add_subcommand(
      "bound", "tabulate required iterations from a constants file");
  bound->add_option("--epsilon", bound_args.epsilon, "accuracy target in (0,1)")
      ->required();
  bound->add_option("--beta", bound_args.beta, "failure probability in (0,1)")
      ->required();
  bound->add_option("--constants", bound_args.constants_path,
                    "constants file")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*run) return cmd_run(run_args);
    if (*verify) return cmd_verify(verify_args);
    if (*rate) return cmd_rate(rate_args);
    if (*bound) return cmd_bound(bound_args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
