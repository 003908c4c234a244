#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "iscope/dataset.hpp"
#include "iscope/entk.hpp"
#include "iscope/experiment_config.hpp"
#include "iscope/idx.hpp"
#include "iscope/metrics.hpp"
#include "iscope/parallel.hpp"
#include "iscope/schedule.hpp"
#include "iscope/tangent.hpp"
#include "iscope/trainer.hpp"

namespace iscope {

struct ExperimentData {
  Dataset train;
  Dataset test;
};

inline ExperimentData load_data(const ExperimentConfig& cfg) {
  const auto& d = cfg.dataset;
  ExperimentData out;
  if (d.kind == "csv") {
    if (d.path.empty() || d.test_path.empty()) throw ConfigError("csv datasets need dataset.path and dataset.test_path");
    out.train = read_dataset_csv(d.path, d.classes, Split::train);
    out.test = read_dataset_csv(d.test_path, d.classes, Split::test);
  } else if (d.kind == "idx") {
    if (d.path.empty() || d.test_path.empty()) throw ConfigError("idx datasets need dataset.path and dataset.test_path");
    auto opt = [](const std::string& s) { return s.empty() ? std::nullopt : std::optional<std::string>(s); };
    if (d.limit == 0) throw ConfigError("idx datasets need dataset.limit >= 1");
    out.train = load_idx_images(d.path, d.limit, d.seed, opt(d.labels_path), d.classes);
    out.test = load_idx_images(d.test_path, d.limit, derive_seed(d.seed, "test"), opt(d.test_labels_path), d.classes);
    out.test.split = Split::test;
  } else {
    const SyntheticKind kind = parse_synthetic_kind(d.kind);
    out.train = make_synthetic(kind, d.n, d.noise, d.seed, d.classes, Split::train);
    out.test = make_synthetic(kind, d.n_test, d.noise, d.seed, d.classes, Split::test);
  }
  out.train.validate();
  out.test.validate();
  return out;
}

/// Everything that one replicate seed determines.
struct Replicate {
  std::uint64_t seed = 0;
  Model model;
  OptimizerConfig optimizer;
  NoiseSchedule schedule;
  TrainOptions options;

  std::uint64_t perturbation_seed() const { return derive_seed(seed, "perturbation"); }
  std::uint64_t probe_seed() const { return derive_seed(seed, "probe"); }
};

inline ModelSpec model_spec(const ExperimentConfig& cfg, const Dataset& data, std::uint64_t seed) {
  ModelSpec s;
  s.arch = cfg.arch;
  s.hidden = cfg.hidden;
  s.activation = cfg.activation;
  s.bias = cfg.bias;
  s.input_dim = data.dim();
  s.output_dim = data.classes;
  s.image = data.image;
  s.init_seed = derive_seed(seed, "init");
  return s;
}

inline Replicate make_replicate(const ExperimentConfig& cfg, const ExperimentData& data, std::uint64_t seed) {
  const OptimizerConfig opt = cfg.resolved_optimizer();
  TrainOptions o;
  o.checkpoint_interval = cfg.checkpoint_interval;
  o.loss = cfg.loss;
  o.augment.flip = cfg.augment;
  o.augment.max_shift = cfg.augment ? o.augment.max_shift : 0;
  o.run_id = "seed" + std::to_string(seed);
  return Replicate{seed, Model(model_spec(cfg, data.train, seed)), opt,
                   NoiseSchedule(derive_seed(seed, "schedule"), data.train.size(), cfg.batch_size, opt.total_iterations), o};
}

inline std::vector<std::uint64_t> sorted_unique(std::vector<std::uint64_t> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

inline std::vector<std::uint64_t> merged(std::initializer_list<const std::vector<std::uint64_t>*> lists) {
  std::vector<std::uint64_t> out;
  for (const auto* l : lists) out.insert(out.end(), l->begin(), l->end());
  return sorted_unique(std::move(out));
}

/// The standard run of a replicate: checkpoints every checkpoint_interval
/// plus every grid iteration.
inline Trajectory train_replicate(const ExperimentConfig& cfg, const ExperimentData& data, const Replicate& r) {
  TrainOptions o = r.options;
  o.extra_checkpoints = merged({&cfg.t0s, &cfg.t1s, &cfg.taus, &cfg.switch_ts});
  return train(r.model, data.train, r.optimizer, r.schedule, o);
}

// ---------------------------------------------------------------------------
// Chaos grid

struct ChaosResult {
  MetricMatrix C, B, D;
};

/// Perturbed branches for each t0, resumed from the shared standard
/// trajectory and recorded at every t1 >= t0.
inline ChaosResult run_chaos(const ExperimentConfig& cfg, const ExperimentData& data, const Replicate& r,
                             const Trajectory& base, std::size_t threads = 1) {
  const auto t0s = sorted_unique(cfg.t0s), t1s = sorted_unique(cfg.t1s);
  if (t0s.empty() || t1s.empty()) throw ConfigError("chaos needs non-empty grid.t0 and grid.t1");
  const std::uint64_t end = t1s.back();
  std::vector<Trajectory> branches(t0s.size());
  parallel_for(t0s.size(), threads, [&](std::size_t i) {
    Perturbation p{r.perturbation_seed(), cfg.perturbation_magnitude, cfg.perturbation_norm, t0s[i]};
    TrainOptions o = r.options;
    o.checkpoint_interval = end + 1;
    o.extra_checkpoints = t1s;
    o.run_id = r.options.run_id + "/perturbed-t0=" + std::to_string(t0s[i]);
    if (t0s[i] > end) return;
    try {
      branches[i] = resume(r.model, data.train, r.optimizer, r.schedule, perturb(base.at(t0s[i]), p), end, o);
    } catch (const TrainingDiverged& e) {
      throw TrainingDiverged("t0=" + std::to_string(t0s[i]) + ": " + e.message(), e.iteration(), e.partial());
    }
  });
  const PairLookup lookup = [&](std::uint64_t t0, std::uint64_t t1) {
    const std::size_t i = static_cast<std::size_t>(std::find(t0s.begin(), t0s.end(), t0) - t0s.begin());
    return std::pair{&base.at(t1).params, &branches[i].at(t1).params};
  };
  MetricContext ctx;
  ctx.model = &r.model;
  ctx.eval = &data.test;
  ctx.alphas = alpha_grid(cfg.alpha_points);
  ctx.loss = cfg.loss;
  ctx.threads = threads;
  ChaosResult out;
  auto grid = [&](MetricKind k) {
    try {
      MetricMatrix m = metric_grid(k, t0s, t1s, lookup, ctx);
      m.run_ids = {base.run_id};
      return m;
    } catch (const NumericalError& e) {
      throw NumericalError(std::string("metric ") + to_char(k) + ": " + e.message(), e.iteration());
    }
  };
  out.C = grid(MetricKind::C);
  out.B = grid(MetricKind::B);
  out.D = grid(MetricKind::D);
  return out;
}

/// Reference implementation without prefix sharing: every branch and the
/// original are retrained from initialization.
inline ChaosResult run_chaos_naive(const ExperimentConfig& cfg, const ExperimentData& data, const Replicate& r) {
  const auto t0s = sorted_unique(cfg.t0s), t1s = sorted_unique(cfg.t1s);
  MetricContext ctx;
  ctx.model = &r.model;
  ctx.eval = &data.test;
  ctx.alphas = alpha_grid(cfg.alpha_points);
  ctx.loss = cfg.loss;
  ChaosResult out{MetricMatrix(MetricKind::C, t0s, t1s), MetricMatrix(MetricKind::B, t0s, t1s),
                  MetricMatrix(MetricKind::D, t0s, t1s)};
  for (std::size_t i = 0; i < t0s.size(); ++i) {
    Perturbation p{r.perturbation_seed(), cfg.perturbation_magnitude, cfg.perturbation_norm, t0s[i]};
    for (std::size_t j = 0; j < t1s.size(); ++j) {
      if (t1s[j] < t0s[i]) continue;
      TrainOptions o = r.options;
      const TwinResult tw = twin_run(r.model, data.train, r.optimizer, r.schedule, p, t1s[j], o);
      out.C.at(i, j) = metric_value(MetricKind::C, tw.original.params, tw.perturbed.params, ctx);
      out.B.at(i, j) = metric_value(MetricKind::B, tw.original.params, tw.perturbed.params, ctx);
      out.D.at(i, j) = metric_value(MetricKind::D, tw.original.params, tw.perturbed.params, ctx);
    }
  }
  const std::string digest = data.test.digest();
  for (auto* m : {&out.C, &out.B, &out.D}) {
    m->dataset_digest = digest;
    m->run_ids = {r.options.run_id};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Inflection point

struct InflectionEstimate {
  std::uint64_t t_star = 0;
  /// (t1, score) for every column with at least one valid t0 < t1.
  std::vector<std::pair<std::uint64_t, double>> score;
  std::string rule;
  /// More than one column attains the maximum score.
  bool tie = false;
};

/// score(t1) = min (or mean) over t0 < t1 of C(t0, t1); t* = argmax, ties to
/// the smallest t1.
inline InflectionEstimate detect_inflection(const MetricMatrix& c, const std::string& rule = "min") {
  if (rule != "min" && rule != "mean") throw InvalidArgument("inflection rule must be min or mean");
  InflectionEstimate est;
  est.rule = rule == "min" ? "argmax_t1 min_t0 C" : "argmax_t1 mean_t0 C";
  for (std::size_t j = 0; j < c.col_count(); ++j) {
    double acc = rule == "min" ? std::numeric_limits<double>::infinity() : 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < c.row_count(); ++i) {
      if (c.rows[i] >= c.cols[j] || !c.at(i, j)) continue;
      const double v = *c.at(i, j);
      acc = rule == "min" ? std::min(acc, v) : acc + v;
      ++n;
    }
    if (n == 0) continue;
    est.score.emplace_back(c.cols[j], rule == "min" ? acc : acc / static_cast<double>(n));
  }
  std::sort(est.score.begin(), est.score.end());
  est.score.erase(std::unique(est.score.begin(), est.score.end(),
                              [](const auto& a, const auto& b) { return a.first == b.first; }),
                  est.score.end());
  if (est.score.size() < 3) throw InvalidArgument("inflection detection needs at least 3 scored t1 columns");
  std::size_t best = 0;
  for (std::size_t k = 1; k < est.score.size(); ++k)
    if (est.score[k].second > est.score[best].second) best = k;
  est.t_star = est.score[best].first;
  for (std::size_t k = 0; k < est.score.size(); ++k)
    if (k != best && est.score[k].second == est.score[best].second) est.tie = true;
  return est;
}

/// First t at which the curve falls below half of its running maximum.
inline std::optional<std::uint64_t> kernel_transition(const Curve& adjacent) {
  double running = -std::numeric_limits<double>::infinity();
  for (const auto& [t, s] : adjacent.points) {
    if (s < 0.5 * running) return static_cast<std::uint64_t>(t);
    running = std::max(running, s);
  }
  return std::nullopt;
}

/// True when `t` lies between the grid neighbours of `t_star` (inclusive).
/// Below the first grid point the neighbour is 0.
inline bool within_one_grid_step(std::uint64_t t, std::uint64_t t_star, const std::vector<std::uint64_t>& grid) {
  const auto g = sorted_unique(grid);
  const auto it = std::find(g.begin(), g.end(), t_star);
  if (it == g.end()) throw InvalidArgument("t* is not on the grid");
  const std::uint64_t lo = it == g.begin() ? 0 : *(it - 1);
  const std::uint64_t hi = it + 1 == g.end() ? *it : *(it + 1);
  return t >= lo && t <= hi;
}

// ---------------------------------------------------------------------------
// Cone sweeps

struct ConeResult {
  std::vector<Curve> reference;
  std::vector<Curve> adjacent;
  MetricMatrix kernel_grid;
  EmbeddingResult embedding;
};

inline ProbeSet replicate_probe(const ExperimentConfig& cfg, const ExperimentData& data, const Replicate& r) {
  return make_probe_set(data.train, cfg.probe_size, r.probe_seed());
}

/// Kernels at every stored checkpoint of `traj`, then the reference and
/// adjacent sweeps, the full S grid and its 2-D embedding.
inline ConeResult run_cone(const ExperimentConfig& cfg, const ExperimentData& data, const Replicate& r,
                           const Trajectory& traj, std::size_t threads = 1) {
  const ProbeSet probe = replicate_probe(cfg, data, r);
  const Scalarizer sc{cfg.scalarization, cfg.projection_seed};
  const KernelSeries ks = kernel_series(r.model, traj, probe, traj.iterations(), sc, threads);
  ConeResult out;
  out.reference = reference_sweep(ks, sorted_unique(cfg.taus));
  out.adjacent = adjacent_sweep(ks, sorted_unique(cfg.dts));
  out.kernel_grid = kernel_grid(ks, traj.run_id);
  out.kernel_grid.dataset_digest = data.train.digest();
  out.embedding = embed_trajectory(dense_values(out.kernel_grid), ks.iterations);
  return out;
}

// ---------------------------------------------------------------------------
// Switch sweep

/// Linearized branches from each switch point of the standard trajectory.
inline std::vector<SwitchResult> run_switch(const ExperimentConfig& cfg, const ExperimentData& data, const Replicate& r,
                                            const Trajectory& base, std::size_t threads = 1) {
  const auto ts = sorted_unique(cfg.switch_ts);
  std::vector<SwitchResult> out(ts.size());
  parallel_for(ts.size(), threads, [&](std::size_t i) {
    out[i] = switch_protocol(r.model, data.train, data.test, r.optimizer, r.schedule, base, ts[i], r.options, r.seed);
  });
  return out;
}

/// Spearman rank correlation with average ranks for ties.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("spearman needs two equal-length series");
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace iscope
