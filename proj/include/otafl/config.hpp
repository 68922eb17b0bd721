// Run configuration: a flat key-value file with one section per subsystem
// (trainer, schedule, channel, task). Unknown sections or keys are hard
// errors. The resolved configuration plus the master seed reproduces any
// trace byte-for-byte.

#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "otafl/dataset.hpp"
#include "otafl/mnist_idx.hpp"
#include "otafl/trainer.hpp"

namespace otafl {

inline constexpr const char* kVersion = "otafl 0.1.0";

// How to materialize the training data.
struct TaskSpec {
  enum class Kind { SyntheticLogistic, SyntheticQuadratic, Mnist, Csv };
  Kind kind = Kind::SyntheticQuadratic;
  std::size_t devices = 10;
  // synthetic
  std::size_t samples = 200;
  std::size_t dim = 8;
  std::size_t test_samples = 200;
  uint64_t data_seed = 1;
  // mnist
  std::string train_images, train_labels, test_images, test_labels;
  int class_a = 0, class_b = 1;
  // csv
  std::string train_csv, test_csv;
  std::string csv_loss = "logistic";
  // shared
  bool bias = true;      // fold a constant-1 feature in (classification tasks)
  double lambda = 0.1;   // nonconvex regularizer weight
  double margin = 0.0;   // synthetic-logistic cluster separation
};

struct FullConfig {
  RunConfig run;
  TaskSpec task;
};

namespace detail {

using Section = std::map<std::string, std::string>;
using IniData = std::map<std::string, Section>;

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  std::size_t e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

inline IniData parse_ini(std::istream& in, const std::string& origin) {
  IniData data;
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw std::runtime_error(origin + ":" + std::to_string(lineno) +
                                 ": malformed section header");
      section = trim(t.substr(1, t.size() - 2));
      data[section];
      continue;
    }
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(origin + ":" + std::to_string(lineno) +
                               ": expected key = value");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error(origin + ":" + std::to_string(lineno) +
                               ": empty key");
    if (!data[section].insert({key, value}).second)
      throw std::runtime_error(origin + ": duplicate key '" + key +
                               "' in section [" + section + "]");
  }
  return data;
}

// Typed view over one section that records which keys were consumed, so
// anything left over is a config error.
class SectionReader {
 public:
  SectionReader(const IniData& data, const std::string& name)
      : name_(name) {
    auto it = data.find(name);
    if (it != data.end()) entries_ = it->second;
  }

  std::optional<std::string> raw(const std::string& key) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    consumed_.push_back(key);
    return it->second;
  }

  std::string get_string(const std::string& key, const std::string& dflt) {
    return raw(key).value_or(dflt);
  }
  double get_double(const std::string& key, double dflt) {
    auto v = raw(key);
    if (!v) return dflt;
    try {
      std::size_t pos = 0;
      double out = std::stod(*v, &pos);
      if (pos != v->size()) throw std::invalid_argument("");
      return out;
    } catch (...) {
      throw std::runtime_error("config: bad number for " + name_ + "." + key +
                               ": '" + *v + "'");
    }
  }
  uint64_t get_u64(const std::string& key, uint64_t dflt) {
    auto v = raw(key);
    if (!v) return dflt;
    try {
      std::size_t pos = 0;
      uint64_t out = std::stoull(*v, &pos);
      if (pos != v->size()) throw std::invalid_argument("");
      return out;
    } catch (...) {
      throw std::runtime_error("config: bad integer for " + name_ + "." + key +
                               ": '" + *v + "'");
    }
  }
  bool get_bool(const std::string& key, bool dflt) {
    auto v = raw(key);
    if (!v) return dflt;
    if (*v == "true" || *v == "1") return true;
    if (*v == "false" || *v == "0") return false;
    throw std::runtime_error("config: bad boolean for " + name_ + "." + key +
                             ": '" + *v + "'");
  }

  void finish() const {
    for (const auto& [key, value] : entries_) {
      bool used = false;
      for (const auto& c : consumed_)
        if (c == key) used = true;
      if (!used)
        throw std::runtime_error("config: unknown key '" + key +
                                 "' in section [" + name_ + "]");
    }
  }

 private:
  std::string name_;
  Section entries_;
  std::vector<std::string> consumed_;
};

inline void check_sections(const IniData& data,
                           const std::vector<std::string>& allowed) {
  for (const auto& [name, _] : data) {
    bool ok = false;
    for (const auto& a : allowed)
      if (a == name) ok = true;
    if (!ok)
      throw std::runtime_error("config: unknown section [" + name + "]");
  }
}

}  // namespace detail

inline FullConfig parse_config(std::istream& in, const std::string& origin) {
  detail::IniData data = detail::parse_ini(in, origin);
  detail::check_sections(data, {"", "trainer", "schedule", "channel", "task"});
  FullConfig cfg;

  detail::SectionReader trainer(data, "trainer");
  cfg.run.algorithm = algorithm_from_name(trainer.get_string("algorithm", "ezofl"));
  cfg.run.rounds = trainer.get_u64("rounds", 100);
  cfg.run.seed = trainer.get_u64("seed", 1);
  cfg.run.eval_every = trainer.get_u64("eval_every", 10);
  cfg.run.batch_size = trainer.get_u64("batch_size", 1);
  cfg.run.async_fraction = trainer.get_double("async_fraction", 0.0);
  cfg.run.fedavg_local_steps = trainer.get_u64("fedavg_local_steps", 1);
  cfg.run.divergence_norm = trainer.get_double("divergence_norm", 1e6);
  std::string init = trainer.get_string("init", "zeros");
  if (init == "zeros") cfg.run.init = RunConfig::Init::Zeros;
  else if (init == "gaussian") cfg.run.init = RunConfig::Init::Gaussian;
  else throw std::runtime_error("config: unknown trainer.init '" + init + "'");
  cfg.run.init_scale = trainer.get_double("init_scale", 1.0);
  std::string pert = trainer.get_string("perturbation", "rademacher");
  if (pert == "rademacher") cfg.run.perturbation = PerturbationKind::Rademacher;
  else if (pert == "sphere") cfg.run.perturbation = PerturbationKind::Sphere;
  else throw std::runtime_error("config: unknown trainer.perturbation '" + pert + "'");
  trainer.finish();

  detail::SectionReader sched(data, "schedule");
  std::string kind = sched.get_string("kind", "diminishing");
  if (kind == "diminishing") cfg.run.schedule.kind = Schedule::Kind::Diminishing;
  else if (kind == "constant-zo") cfg.run.schedule.kind = Schedule::Kind::ConstantZO;
  else if (kind == "constant-fo") cfg.run.schedule.kind = Schedule::Kind::ConstantFO;
  else throw std::runtime_error("config: unknown schedule.kind '" + kind + "'");
  cfg.run.schedule.eta0 = sched.get_double("eta0", 0.5);
  cfg.run.schedule.gamma0 = sched.get_double("gamma0", 2.5);
  cfg.run.schedule.upsilon1 = sched.get_double("upsilon1", 0.5);
  cfg.run.schedule.upsilon2 = sched.get_double("upsilon2", 0.25);
  cfg.run.schedule.horizon = sched.get_u64("horizon", cfg.run.rounds);
  sched.finish();

  detail::SectionReader chan(data, "channel");
  cfg.run.channel.sigma_h = chan.get_double("sigma_h", 1.0);
  cfg.run.channel.sigma_n = chan.get_double("sigma_n", 0.0);
  cfg.run.channel.sigma_slot[0] = chan.get_double("sigma1", -1.0);
  cfg.run.channel.sigma_slot[1] = chan.get_double("sigma2", -1.0);
  cfg.run.channel.sigma_slot[2] = chan.get_double("sigma3", -1.0);
  chan.finish();

  detail::SectionReader task(data, "task");
  std::string tk = task.get_string("kind", "synthetic-quadratic");
  if (tk == "synthetic-logistic") cfg.task.kind = TaskSpec::Kind::SyntheticLogistic;
  else if (tk == "synthetic-quadratic") cfg.task.kind = TaskSpec::Kind::SyntheticQuadratic;
  else if (tk == "mnist") cfg.task.kind = TaskSpec::Kind::Mnist;
  else if (tk == "csv") cfg.task.kind = TaskSpec::Kind::Csv;
  else throw std::runtime_error("config: unknown task.kind '" + tk + "'");
  cfg.task.devices = task.get_u64("devices", 10);
  cfg.task.samples = task.get_u64("samples", 200);
  cfg.task.dim = task.get_u64("dim", 8);
  cfg.task.test_samples = task.get_u64("test_samples", 200);
  cfg.task.data_seed = task.get_u64("data_seed", 1);
  cfg.task.train_images = task.get_string("train_images", "");
  cfg.task.train_labels = task.get_string("train_labels", "");
  cfg.task.test_images = task.get_string("test_images", "");
  cfg.task.test_labels = task.get_string("test_labels", "");
  cfg.task.class_a = static_cast<int>(task.get_u64("class_a", 0));
  cfg.task.class_b = static_cast<int>(task.get_u64("class_b", 1));
  cfg.task.train_csv = task.get_string("train_csv", "");
  cfg.task.test_csv = task.get_string("test_csv", "");
  cfg.task.csv_loss = task.get_string("csv_loss", "logistic");
  cfg.task.bias = task.get_bool("bias", true);
  cfg.task.lambda = task.get_double("lambda", 0.1);
  cfg.task.margin = task.get_double("margin", 0.0);
  task.finish();

  return cfg;
}

inline FullConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  return parse_config(in, path);
}

// Materializes the configured task into device shards plus a test set.
inline TrainTask build_task(const TaskSpec& spec) {
  TrainTask task;
  switch (spec.kind) {
    case TaskSpec::Kind::SyntheticQuadratic: {
      task.loss = LossModel{LossKind::Quadratic};
      Dataset train = synth_zero_target(spec.samples, spec.dim, spec.data_seed);
      task.shards = partition_equal(train, spec.devices, spec.data_seed).shards;
      // no classification accuracy on the quadratic task
      return task;
    }
    case TaskSpec::Kind::SyntheticLogistic: {
      task.loss = LossModel{LossKind::NonconvexLogistic, spec.lambda};
      Dataset train = synth_dataset(spec.samples, spec.dim, spec.data_seed);
      Dataset test = synth_dataset(spec.test_samples, spec.dim, spec.data_seed + 1);
      // test labels must come from the same teacher
      Vec w = teacher_vector(spec.dim, spec.data_seed);
      for (Sample& s : test.samples)
        s.label = dot(w, s.features) >= 0.0 ? 1.0 : -1.0;
      train = with_cluster_margin(std::move(train), spec.dim, spec.data_seed,
                                  spec.margin);
      test = with_cluster_margin(std::move(test), spec.dim, spec.data_seed,
                                 spec.margin);
      if (spec.bias) {
        train = with_bias_feature(std::move(train));
        test = with_bias_feature(std::move(test));
      }
      task.shards = partition_equal(train, spec.devices, spec.data_seed).shards;
      task.test = std::move(test);
      return task;
    }
    case TaskSpec::Kind::Mnist: {
      task.loss = LossModel{LossKind::NonconvexLogistic, spec.lambda};
      Dataset train = make_binary_task(
          load_mnist_idx(spec.train_images, spec.train_labels), spec.class_a,
          spec.class_b);
      Dataset test = make_binary_task(
          load_mnist_idx(spec.test_images, spec.test_labels), spec.class_a,
          spec.class_b);
      if (spec.bias) {
        train = with_bias_feature(std::move(train));
        test = with_bias_feature(std::move(test));
      }
      task.shards = partition_equal(train, spec.devices, spec.data_seed).shards;
      task.test = std::move(test);
      return task;
    }
    case TaskSpec::Kind::Csv: {
      if (spec.csv_loss == "logistic")
        task.loss = LossModel{LossKind::NonconvexLogistic, spec.lambda};
      else if (spec.csv_loss == "quadratic")
        task.loss = LossModel{LossKind::Quadratic};
      else
        throw std::runtime_error("config: unknown task.csv_loss '" +
                                 spec.csv_loss + "'");
      Dataset train = read_dataset_csv(spec.train_csv);
      task.shards = partition_equal(train, spec.devices, spec.data_seed).shards;
      if (!spec.test_csv.empty()) task.test = read_dataset_csv(spec.test_csv);
      return task;
    }
  }
  throw std::logic_error("unknown task kind");
}

}  // namespace otafl
