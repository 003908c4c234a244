#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "iscope/error.hpp"
#include "iscope/model.hpp"
#include "iscope/netcore.hpp"
#include "iscope/trainer.hpp"

namespace iscope {

enum class ExperimentKind { train, chaos, cone, switch_sweep, kernel_grid };

inline std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::train: return "train";
    case ExperimentKind::chaos: return "chaos";
    case ExperimentKind::cone: return "cone";
    case ExperimentKind::switch_sweep: return "switch";
    case ExperimentKind::kernel_grid: return "kernel-grid";
  }
  return "?";
}

struct DatasetConfig {
  /// two-moons | gaussian-mixture | spirals | csv | idx
  std::string kind = "two-moons";
  std::size_t n = 2000;
  std::size_t n_test = 2000;
  double noise = 0.4;
  std::size_t classes = 2;
  std::uint64_t seed = 0;
  std::string path;
  std::string labels_path;
  std::string test_path;
  std::string test_labels_path;
  /// idx only: number of images sampled from each file
  std::size_t limit = 0;

  bool operator==(const DatasetConfig&) const = default;
};

struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::chaos;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};

  Architecture arch = Architecture::mlp;
  std::vector<std::size_t> hidden = {128, 128};
  Activation activation = Activation::tanh;
  bool bias = true;

  DatasetConfig dataset;

  OptimizerConfig optimizer = [] {
    OptimizerConfig o;
    o.learning_rate = 1.0;
    o.total_iterations = 4000;
    o.milestones = {50, 2000};
    return o;
  }();
  std::vector<std::uint64_t> milestone_epochs;
  std::size_t batch_size = 128;
  LossKind loss = LossKind::cross_entropy;
  bool augment = false;
  std::uint64_t checkpoint_interval = 10;

  double perturbation_magnitude = 1e-7;
  NormKind perturbation_norm = NormKind::l2;

  std::vector<std::uint64_t> t0s = {0, 50, 100, 250, 500, 1000, 2000};
  std::vector<std::uint64_t> t1s = {50, 100, 250, 500, 1000, 2000, 4000};
  std::vector<std::uint64_t> taus = {0, 1000, 2000};
  std::vector<std::uint64_t> dts = {10, 50, 200};
  std::vector<std::uint64_t> switch_ts = {0, 250, 500, 1000, 2000, 4000};

  std::size_t probe_size = 64;
  ScalarizationMode scalarization = ScalarizationMode::logit_sum;
  std::uint64_t projection_seed = 0;

  std::size_t alpha_points = 21;
  /// "min" (strict) or "mean" (sensitivity analysis)
  std::string inflection_rule = "min";

  bool operator==(const ExperimentConfig&) const = default;

  /// Iteration milestones after converting any epoch-denominated ones.
  std::vector<std::uint64_t> resolved_milestones() const {
    if (milestone_epochs.empty()) return optimizer.milestones;
    const std::uint64_t per_epoch = (dataset.n + batch_size - 1) / batch_size;
    std::vector<std::uint64_t> out;
    for (auto e : milestone_epochs) out.push_back(e * per_epoch);
    return out;
  }

  OptimizerConfig resolved_optimizer() const {
    OptimizerConfig o = optimizer;
    o.milestones = resolved_milestones();
    return o;
  }

  void validate() const {
    auto fail = [](const std::string& what) { throw ConfigError(what); };
    if (seeds.empty()) fail("at least one replicate seed is required");
    if (!optimizer.milestones.empty() && !milestone_epochs.empty())
      fail("set either optimizer.milestones or optimizer.milestone_epochs, not both");
    if (batch_size == 0) fail("optimizer.batch_size must be positive");
    if (checkpoint_interval == 0) fail("train.checkpoint_interval must be positive");
    if (hidden.empty()) fail("model.hidden needs at least one entry");
    if (dataset.n < 2) fail("dataset.n must be >= 2");
    if (probe_size < 2) fail("probe.size must be >= 2");
    if (alpha_points < 2) fail("metrics.alpha_points must be >= 2");
    if (inflection_rule != "min" && inflection_rule != "mean") fail("metrics.inflection_rule must be min or mean");
    if (!(perturbation_magnitude >= 0.0)) fail("perturbation.magnitude must be >= 0");
    try {
      resolved_optimizer().validate();
    } catch (const InvalidArgument& e) {
      fail(e.what());
    }
    const std::uint64_t total = optimizer.total_iterations;
    for (const auto* grid : {&t0s, &t1s, &taus, &switch_ts})
      for (auto t : *grid)
        if (t > total) fail("grid iteration " + std::to_string(t) + " exceeds optimizer.total_iterations");
    for (auto dt : dts)
      if (dt == 0 || dt > total) fail("grid.dt entries must lie in [1, total_iterations]");
  }
};

}  // namespace iscope
