#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "iscope/binary_io.hpp"
#include "iscope/dataset.hpp"
#include "iscope/error.hpp"
#include "iscope/netcore.hpp"
#include "iscope/schedule.hpp"

namespace iscope {

/// Heavy-ball SGD with L2 weight decay and a step learning-rate schedule.
/// Milestones are iterations; at each one the rate is multiplied by
/// lr_drop_factor.
struct OptimizerConfig {
  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double lr_drop_factor = 0.1;
  std::vector<std::uint64_t> milestones;
  std::uint64_t total_iterations = 1000;

  void validate() const {
    if (!(learning_rate > 0.0)) throw InvalidArgument("learning rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw InvalidArgument("weight decay must be >= 0");
    for (std::size_t i = 0; i < milestones.size(); ++i) {
      if (i > 0 && milestones[i] <= milestones[i - 1]) throw InvalidArgument("milestones must be strictly increasing");
      if (milestones[i] >= total_iterations) throw InvalidArgument("milestones must be < total iterations");
    }
  }

  double lr_at(std::uint64_t t) const {
    double lr = learning_rate;
    for (std::uint64_t m : milestones)
      if (t >= m) lr *= lr_drop_factor;
    return lr;
  }

  bool operator==(const OptimizerConfig&) const = default;
};

struct Checkpoint {
  std::uint64_t iteration = 0;
  ParamVector params;
  ParamVector momentum;
  /// Minibatch loss at these parameters on the batch scheduled for this
  /// iteration (the last scheduled batch for the final iteration).
  double train_loss = 0.0;
  std::string run_id;
};

/// Iteration, parameters and momentum buffer all bitwise equal.
inline bool bit_identical(const Checkpoint& a, const Checkpoint& b) {
  return a.iteration == b.iteration && a.params == b.params && a.momentum == b.momentum;
}

struct Trajectory {
  std::string run_id;
  std::vector<Checkpoint> checkpoints;
  ModelSpec model;
  OptimizerConfig optimizer;
  std::uint64_t schedule_seed = 0;
  std::string dataset_provenance;
  /// Set for linearized runs: Jacobians along this trajectory are taken here.
  std::optional<ParamVector> tangent_anchor;

  bool has(std::uint64_t t) const {
    return std::binary_search(checkpoints.begin(), checkpoints.end(), t,
                              [](const auto& a, const auto& b) { return iter_of(a) < iter_of(b); });
  }

  const Checkpoint& at(std::uint64_t t) const {
    const auto it = std::lower_bound(checkpoints.begin(), checkpoints.end(), t,
                                     [](const Checkpoint& c, std::uint64_t v) { return c.iteration < v; });
    if (it == checkpoints.end() || it->iteration != t)
      throw MissingArtifact("run '" + run_id + "' has no checkpoint at iteration " + std::to_string(t));
    return *it;
  }

  /// Parameters at which the kernel of checkpoint t is evaluated.
  const ParamVector& jacobian_params(std::uint64_t t) const { return tangent_anchor ? *tangent_anchor : at(t).params; }

  std::vector<std::uint64_t> iterations() const {
    std::vector<std::uint64_t> v;
    for (const auto& c : checkpoints) v.push_back(c.iteration);
    return v;
  }

 private:
  static std::uint64_t iter_of(const Checkpoint& c) { return c.iteration; }
  static std::uint64_t iter_of(std::uint64_t t) { return t; }
};

struct TrainOptions {
  std::uint64_t checkpoint_interval = 1;
  /// Additional iterations to record besides multiples of the interval.
  std::vector<std::uint64_t> extra_checkpoints;
  LossKind loss = LossKind::cross_entropy;
  AugmentPolicy augment;
  std::string run_id = "run";
};

/// Training hit a non-finite loss or parameter. Holds everything recorded
/// before the failure.
class TrainingDiverged : public NumericalError {
 public:
  TrainingDiverged(const std::string& what, std::int64_t iteration, Trajectory partial)
      : NumericalError(what, iteration), partial_(std::move(partial)) {}
  const Trajectory& partial() const noexcept { return partial_; }

 private:
  Trajectory partial_;
};

/// Loss-and-gradient provider: (params, batch, iteration) -> LossAndGrad.
using GradientFn = std::function<LossAndGrad(const ParamVector&, const Batch&, std::uint64_t)>;

namespace detail {

inline bool should_record(std::uint64_t t, std::uint64_t end, const TrainOptions& o) {
  if (t == end) return true;
  if (o.checkpoint_interval > 0 && t % o.checkpoint_interval == 0) return true;
  return std::find(o.extra_checkpoints.begin(), o.extra_checkpoints.end(), t) != o.extra_checkpoints.end();
}

}  // namespace detail

/// Runs the update rule from `start` up to iteration `end`:
///   buffer <- momentum * buffer + (grad + weight_decay * theta)
///   theta  <- theta - lr_t * buffer
/// The start checkpoint is always recorded. Output is a pure function of the
/// inputs.
inline Trajectory run_sgd(const GradientFn& grad_fn, Checkpoint start, std::uint64_t end, const Dataset& data,
                          const OptimizerConfig& opt, const NoiseSchedule& schedule, const TrainOptions& options) {
  opt.validate();
  if (options.checkpoint_interval == 0) throw InvalidArgument("checkpoint interval must be >= 1");
  if (end > schedule.total_iterations()) throw InvalidArgument("end iteration beyond the noise schedule");
  if (start.iteration > end) throw InvalidArgument("start iteration after end iteration");

  Trajectory traj;
  traj.run_id = options.run_id;
  traj.optimizer = opt;
  traj.schedule_seed = schedule.seed();
  traj.dataset_provenance = data.provenance;

  ParamVector theta = std::move(start.params);
  ParamVector buffer = std::move(start.momentum);
  if (!buffer.same_layout(theta)) throw ShapeError("momentum", "momentum buffer layout differs from params");

  auto record = [&](std::uint64_t t, double loss) {
    traj.checkpoints.push_back(Checkpoint{t, theta, buffer, loss, options.run_id});
  };

  for (std::uint64_t t = start.iteration; t < end; ++t) {
    const Batch batch = batch_at(schedule, data, t, options.augment);
    LossAndGrad lg;
    try {
      lg = grad_fn(theta, batch, t);
    } catch (const NumericalError& e) {
      throw TrainingDiverged(e.message(), static_cast<std::int64_t>(t), std::move(traj));
    }
    if (t == start.iteration || detail::should_record(t, end, options)) record(t, lg.loss);
    const double lr = opt.lr_at(t);
    auto& g = lg.grad;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      buffer[i] = opt.momentum * buffer[i] + (g[i] + opt.weight_decay * theta[i]);
      theta[i] -= lr * buffer[i];
    }
    if (!theta.all_finite())
      throw TrainingDiverged("non-finite parameters after update", static_cast<std::int64_t>(t), std::move(traj));
  }

  if (traj.checkpoints.empty() || traj.checkpoints.back().iteration != end) {
    double loss = start.train_loss;
    if (schedule.total_iterations() > 0) {
      const std::uint64_t bt = end < schedule.total_iterations() ? end : end - 1;
      try {
        loss = grad_fn(theta, batch_at(schedule, data, bt, options.augment), end).loss;
      } catch (const NumericalError& e) {
        throw TrainingDiverged(e.message(), static_cast<std::int64_t>(end), std::move(traj));
      }
    }
    record(end, loss);
  }
  return traj;
}

inline GradientFn standard_gradient(const Model& model, LossKind loss) {
  return [&model, loss](const ParamVector& p, const Batch& b, std::uint64_t t) {
    return loss_and_grad(model, p, b, loss, static_cast<std::int64_t>(t));
  };
}

inline Checkpoint initial_checkpoint(const Model& model, const std::string& run_id = "run") {
  ParamVector p = model.init_params();
  ParamVector m = p.zeros_like();
  return Checkpoint{0, std::move(p), std::move(m), 0.0, run_id};
}

/// Trains from the model's seeded initialization for optimizer.total_iterations.
inline Trajectory train(const Model& model, const Dataset& data, const OptimizerConfig& opt,
                        const NoiseSchedule& schedule, const TrainOptions& options) {
  Trajectory traj = run_sgd(standard_gradient(model, options.loss), initial_checkpoint(model, options.run_id),
                            opt.total_iterations, data, opt, schedule, options);
  traj.model = model.spec();
  return traj;
}

/// Continues training from a checkpoint up to `end`.
inline Trajectory resume(const Model& model, const Dataset& data, const OptimizerConfig& opt,
                         const NoiseSchedule& schedule, const Checkpoint& from, std::uint64_t end,
                         const TrainOptions& options) {
  model.check_params(from.params);
  Trajectory traj = run_sgd(standard_gradient(model, options.loss), from, end, data, opt, schedule, options);
  traj.model = model.spec();
  return traj;
}

// ---------------------------------------------------------------------------
// Evaluation

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
  double error = 0.0;
};

/// Dataset-mean loss and argmax accuracy, evaluated in fixed-size chunks in
/// dataset order.
inline Evaluation evaluate_logits_fn(const std::function<Matrix(const Matrix&)>& logits_of, const Dataset& data,
                                     LossKind loss) {
  data.validate();
  constexpr long kChunk = 512;
  const long n = static_cast<long>(data.size());
  double total = 0.0;
  std::size_t correct = 0;
  for (long start = 0; start < n; start += kChunk) {
    const long len = std::min(kChunk, n - start);
    const Matrix logits = logits_of(data.inputs.middleCols(start, len));
    const std::vector<int> labels(data.labels.begin() + start, data.labels.begin() + start + len);
    total += loss_on_logits(loss, logits, labels).loss * static_cast<double>(len);
    for (long j = 0; j < len; ++j)
      if (argmax_column(logits, j) == labels[static_cast<std::size_t>(j)]) ++correct;
  }
  Evaluation e;
  e.loss = total / static_cast<double>(n);
  e.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  e.error = 1.0 - e.accuracy;
  return e;
}

inline Evaluation evaluate(const Model& model, const ParamVector& params, const Dataset& data,
                           LossKind loss = LossKind::cross_entropy) {
  model.check_params(params);
  return evaluate_logits_fn([&](const Matrix& x) { return model.forward(params.values(), x); }, data, loss);
}

// ---------------------------------------------------------------------------
// Perturbations

enum class NormKind { l2, linf };

struct Perturbation {
  std::uint64_t direction_seed = 0;
  double magnitude = 1e-7;
  NormKind norm = NormKind::l2;
  std::uint64_t t0 = 0;
};

/// Isotropic Gaussian direction from the seed, rescaled to the requested norm.
inline ParamVector perturbation_vector(const Perturbation& p, const std::shared_ptr<const ParamLayout>& layout) {
  if (!(p.magnitude >= 0.0)) throw InvalidArgument("perturbation magnitude must be >= 0");
  ParamVector eps(layout);
  if (p.magnitude == 0.0 || eps.size() == 0) return eps;
  const CounterRng rng(derive_seed(p.direction_seed, "perturbation"));
  for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = rng.normal(i, 0);
  const double n = p.norm == NormKind::l2 ? eps.norm2() : eps.norm_inf();
  eps *= p.magnitude / n;
  return eps;
}

/// theta' = theta + eps; the momentum buffer is left untouched.
inline Checkpoint perturb(const Checkpoint& c, const Perturbation& p) {
  if (!(p.magnitude >= 0.0)) throw InvalidArgument("perturbation magnitude must be >= 0");
  if (c.iteration != p.t0)
    throw InvalidArgument("perturbation scheduled for iteration " + std::to_string(p.t0) + " applied at " +
                          std::to_string(c.iteration));
  Checkpoint out = c;
  if (p.magnitude == 0.0) return out;
  out.params += perturbation_vector(p, c.params.layout_ptr());
  return out;
}

struct TwinResult {
  Checkpoint original;
  Checkpoint perturbed;
};

/// Two branches sharing initialization and every batch/augmentation draw,
/// differing only by the perturbation injected at p.t0. Returns both at t1.
inline TwinResult twin_run(const Model& model, const Dataset& data, const OptimizerConfig& opt,
                           const NoiseSchedule& schedule, const Perturbation& p, std::uint64_t t1,
                           TrainOptions options = {}) {
  if (p.t0 > t1 || t1 > opt.total_iterations) throw InvalidArgument("twin run needs t0 <= t1 <= total iterations");
  options.extra_checkpoints = {p.t0, t1};
  options.checkpoint_interval = std::max<std::uint64_t>(t1 + 1, 1);
  const std::string base_id = options.run_id;
  options.run_id = base_id + "/original";
  const Trajectory prefix = run_sgd(standard_gradient(model, options.loss), initial_checkpoint(model, options.run_id),
                                    p.t0, data, opt, schedule, options);
  const Checkpoint& at_t0 = prefix.at(p.t0);

  auto branch = [&](const Checkpoint& from, const std::string& id) {
    TrainOptions o = options;
    o.run_id = id;
    try {
      return resume(model, data, opt, schedule, from, t1, o).at(t1);
    } catch (const TrainingDiverged& e) {
      throw TrainingDiverged("branch " + id + ": " + e.message(), e.iteration(), e.partial());
    } catch (const Error& e) {
      throw Error(std::string("branch ") + id + ": " + e.what());
    }
  };
  TwinResult r{branch(at_t0, base_id + "/original"), branch(perturb(at_t0, p), base_id + "/perturbed")};
  return r;
}

// ---------------------------------------------------------------------------
// Checkpoint binary format:
//   "ISCP" | version u32 | iteration u64 | param count u64 |
//   params f64[count] | momentum f64[count] | CRC32 u32   (all little-endian)

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  ByteWriter w;
  w.raw("ISCP");
  w.u32(kCheckpointVersion);
  w.u64(c.iteration);
  w.u64(c.params.size());
  w.f64s(c.params.values());
  w.f64s(c.momentum.values());
  w.crc();
  return w.bytes();
}

struct RawCheckpoint {
  std::uint32_t version = 0;
  std::uint64_t iteration = 0;
  std::vector<double> params;
  std::vector<double> momentum;
};

inline RawCheckpoint decode_checkpoint_raw(std::vector<std::uint8_t> bytes) {
  ByteReader r(std::move(bytes));
  r.expect_magic("ISCP");
  RawCheckpoint raw;
  raw.version = r.u32();
  if (raw.version != kCheckpointVersion) throw ParseError("unsupported checkpoint version", 4);
  raw.iteration = r.u64();
  const std::uint64_t count = r.u64();
  raw.params = r.f64s(count);
  raw.momentum = r.f64s(count);
  r.verify_crc();
  return raw;
}

inline Checkpoint decode_checkpoint(std::vector<std::uint8_t> bytes, const std::shared_ptr<const ParamLayout>& layout,
                                    const std::string& run_id = {}) {
  RawCheckpoint raw = decode_checkpoint_raw(std::move(bytes));
  if (raw.params.size() != layout->size()) throw ShapeError("<flat>", "checkpoint parameter count does not match model");
  return Checkpoint{raw.iteration, ParamVector(layout, std::move(raw.params)), ParamVector(layout, std::move(raw.momentum)),
                    std::nan(""), run_id};
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) { write_bytes(path, encode_checkpoint(c)); }

inline Checkpoint load_checkpoint(const std::string& path, const std::shared_ptr<const ParamLayout>& layout,
                                  const std::string& run_id = {}) {
  return decode_checkpoint(read_bytes(path), layout, run_id);
}

}  // namespace iscope
