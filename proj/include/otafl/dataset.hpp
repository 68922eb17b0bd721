// Dataset construction and partitioning: binary-task extraction, synthetic
// generators, equal IID splits across devices, and CSV import/export.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "otafl/loss.hpp"
#include "otafl/rng.hpp"

namespace otafl {

struct Partition {
  std::vector<Dataset> shards;  // one per device, sizes differ by <= 1
};

// Keeps only samples labeled class_a or class_b (in original order) and maps
// labels a -> +1, b -> -1.
inline Dataset make_binary_task(const Dataset& ds, int class_a, int class_b) {
  if (class_a == class_b)
    throw std::invalid_argument("make_binary_task: classes must differ");
  Dataset out;
  out.name = ds.name + ":" + std::to_string(class_a) + "v" +
             std::to_string(class_b);
  bool seen_a = false, seen_b = false;
  for (const Sample& s : ds.samples) {
    int label = static_cast<int>(std::lround(s.label));
    if (label == class_a) {
      out.samples.push_back(s);
      out.samples.back().label = +1.0;
      seen_a = true;
    } else if (label == class_b) {
      out.samples.push_back(s);
      out.samples.back().label = -1.0;
      seen_b = true;
    }
  }
  if (!seen_a)
    throw std::invalid_argument("make_binary_task: missing class " +
                                std::to_string(class_a));
  if (!seen_b)
    throw std::invalid_argument("make_binary_task: missing class " +
                                std::to_string(class_b));
  return out;
}

// Appends a constant-1 coordinate to every sample (bias folded into features).
inline Dataset with_bias_feature(Dataset ds) {
  for (Sample& s : ds.samples) s.features.push_back(1.0);
  return ds;
}

// The teacher hyperplane used by synth_dataset, reproducible from the seed.
inline Vec teacher_vector(std::size_t d, uint64_t seed) {
  Rng rng(seed, Stream::Teacher);
  Vec w(d);
  for (double& v : w) v = rng.gaussian();
  return w;
}

// n standard-normal feature vectors labeled by the sign of a fixed random
// teacher hyperplane. Deterministic per seed.
inline Dataset synth_dataset(std::size_t n, std::size_t d, uint64_t seed) {
  if (n < 1 || d < 1)
    throw std::invalid_argument("synth_dataset: n and d must be >= 1");
  Vec w = teacher_vector(d, seed);
  Dataset ds;
  ds.name = "synth-" + std::to_string(n) + "x" + std::to_string(d);
  ds.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(seed, Stream::Sample, /*device=*/0, /*round=*/i);
    Sample& s = ds.samples[i];
    s.features.resize(d);
    for (double& v : s.features) v = rng.gaussian();
    double score = dot(w, s.features);
    s.label = score >= 0.0 ? +1.0 : -1.0;
  }
  return ds;
}

// Shifts every sample by margin * label along the unit teacher direction,
// turning the teacher task into two separated clusters. Labels still equal
// sign(w . x) afterwards (the shift only widens each sample's margin).
inline Dataset with_cluster_margin(Dataset ds, std::size_t d, uint64_t seed,
                                   double margin) {
  if (margin == 0.0) return ds;
  Vec w = teacher_vector(d, seed);
  double wn = norm(w);
  for (Sample& s : ds.samples)
    for (std::size_t j = 0; j < d; ++j)
      s.features[j] += margin * s.label * w[j] / wn;
  return ds;
}

// Same feature distribution with all targets zero. Under the quadratic loss
// every device objective is exactly 1/2 ||theta||^2, so gradients and
// optimality gaps are analytic.
inline Dataset synth_zero_target(std::size_t n, std::size_t d, uint64_t seed) {
  Dataset ds = synth_dataset(n, d, seed);
  ds.name = "synth-zero-" + std::to_string(n) + "x" + std::to_string(d);
  for (Sample& s : ds.samples) s.label = 0.0;
  return ds;
}

// Seeded shuffle followed by a round-robin split into N shards. Shard sizes
// differ by at most one and the union is the input as a multiset.
inline Partition partition_equal(const Dataset& ds, std::size_t n_devices,
                                 uint64_t seed) {
  if (n_devices < 1)
    throw std::invalid_argument("partition_equal: need at least one device");
  if (ds.size() < n_devices)
    throw std::invalid_argument("partition_equal: fewer samples than devices");
  std::vector<std::size_t> order(ds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed, Stream::Partition);
  for (std::size_t i = order.size() - 1; i > 0; --i)
    std::swap(order[i], order[rng.uniform_index(i + 1)]);

  Partition part;
  part.shards.resize(n_devices);
  for (std::size_t i = 0; i < n_devices; ++i)
    part.shards[i].name = ds.name + "/dev" + std::to_string(i);
  for (std::size_t j = 0; j < order.size(); ++j)
    part.shards[j % n_devices].samples.push_back(ds.samples[order[j]]);
  return part;
}

// CSV with header `label,f0,f1,...`, full double precision.
inline void write_dataset_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("dataset csv: cannot write " + path);
  out << "label";
  for (std::size_t j = 0; j < ds.feature_dim(); ++j) out << ",f" << j;
  out << "\n";
  out.precision(17);
  for (const Sample& s : ds.samples) {
    out << s.label;
    for (double v : s.features) out << "," << v;
    out << "\n";
  }
}

inline Dataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("dataset csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("dataset csv: empty file " + path);
  if (line.rfind("label", 0) != 0)
    throw std::runtime_error("dataset csv: bad header in " + path);
  Dataset ds;
  ds.name = path;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    Sample s;
    if (!std::getline(row, cell, ','))
      throw std::runtime_error("dataset csv: bad row in " + path);
    s.label = std::stod(cell);
    while (std::getline(row, cell, ',')) s.features.push_back(std::stod(cell));
    ds.samples.push_back(std::move(s));
  }
  if (ds.empty()) throw std::runtime_error("dataset csv: no samples in " + path);
  return ds;
}

}  // namespace otafl
