#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "iscope/dataset.hpp"
#include "iscope/netcore.hpp"
#include "iscope/parallel.hpp"
#include "iscope/schedule.hpp"
#include "iscope/trainer.hpp"

namespace iscope {

/// First-order Taylor expansion of a model around an anchor:
///   f_lin(theta, x) = f(anchor, x) + J(anchor, x) (theta - anchor)
class TangentModel {
 public:
  TangentModel(const Model& model, ParamVector anchor) : model_(&model), anchor_(std::move(anchor)) {
    model.check_params(anchor_);
  }

  const Model& model() const noexcept { return *model_; }
  const ParamVector& anchor() const noexcept { return anchor_; }

  Matrix forward(const ParamVector& theta, const Matrix& x) const {
    model_->check_params(theta);
    model_->check_inputs(x);
    if (model_->affine_in_params()) return model_->forward(theta.values(), x);
    const ParamVector delta = theta - anchor_;
    auto [f0, df] = model_->jvp(anchor_.values(), delta.values(), x);
    return f0 + df;
  }

  /// Loss of the linearized model; its parameter gradient is the VJP at the anchor.
  LossAndGrad loss_and_grad(const ParamVector& theta, const Batch& batch, LossKind loss,
                            std::int64_t iteration = -1) const {
    if (model_->affine_in_params()) return iscope::loss_and_grad(*model_, theta, batch, loss, iteration);
    model_->check_params(theta);
    model_->check_inputs(batch.inputs);
    const ParamVector delta = theta - anchor_;
    const ForwardTape tape = model_->forward_tape(anchor_.values(), batch.inputs);
    const Matrix logits = tape.output() + model_->jvp(anchor_.values(), delta.values(), batch.inputs).second;
    LossValue lv = loss_on_logits(loss, logits, batch.labels, iteration);
    LossAndGrad out{lv.loss, theta.zeros_like()};
    model_->backward(anchor_.values(), tape, std::move(lv.dlogits), out.grad.values());
    return out;
  }

  GradientFn gradient(LossKind loss) const {
    return [this, loss](const ParamVector& p, const Batch& b, std::uint64_t t) {
      return loss_and_grad(p, b, loss, static_cast<std::int64_t>(t));
    };
  }

  Evaluation evaluate(const ParamVector& theta, const Dataset& data, LossKind loss = LossKind::cross_entropy) const {
    return evaluate_logits_fn([&](const Matrix& x) { return forward(theta, x); }, data, loss);
  }

 private:
  const Model* model_;
  ParamVector anchor_;
};

/// Logits of the model linearized at `anchor`, evaluated at `theta`.
inline Matrix tangent_forward(const Model& model, const ParamVector& anchor, const ParamVector& theta,
                              const Matrix& x) {
  return TangentModel(model, anchor).forward(theta, x);
}

/// Continues training from `from` with the model linearized at from.params.
/// The momentum buffer carries over unchanged. The returned trajectory
/// records the anchor, so its kernels are all evaluated there.
inline Trajectory tangent_train(const Model& model, const Dataset& data, const OptimizerConfig& opt,
                                const NoiseSchedule& schedule, const Checkpoint& from, std::uint64_t end,
                                const TrainOptions& options) {
  const TangentModel lin(model, from.params);
  Trajectory traj = run_sgd(lin.gradient(options.loss), from, end, data, opt, schedule, options);
  traj.model = model.spec();
  traj.tangent_anchor = from.params;
  return traj;
}

struct SwitchResult {
  std::uint64_t t = 0;
  std::uint64_t total = 0;
  double test_loss = 0.0;
  double test_accuracy = 0.0;
  std::uint64_t seed = 0;
};

/// Standard training to `t_switch`, then linearized training to the end of
/// the schedule; reports the final linearized model on `test`. `standard`
/// must hold a checkpoint at t_switch.
inline SwitchResult switch_protocol(const Model& model, const Dataset& train_data, const Dataset& test,
                                    const OptimizerConfig& opt, const NoiseSchedule& schedule,
                                    const Trajectory& standard, std::uint64_t t_switch, TrainOptions options,
                                    std::uint64_t seed = 0) {
  const std::uint64_t total = opt.total_iterations;
  if (t_switch > total) throw InvalidArgument("switch iteration beyond total iterations");
  const Checkpoint& at = standard.at(t_switch);
  options.checkpoint_interval = total + 1;
  options.extra_checkpoints.clear();
  options.run_id = standard.run_id + "/switch" + std::to_string(t_switch);
  const Trajectory lin = tangent_train(model, train_data, opt, schedule, at, total, options);
  const Evaluation e = TangentModel(model, at.params).evaluate(lin.at(total).params, test, options.loss);
  return SwitchResult{t_switch, total, e.loss, e.accuracy, seed};
}

/// One standard run shared by every switch point, then one linearized branch
/// per switch point (run in parallel).
inline std::vector<SwitchResult> switch_sweep(const Model& model, const Dataset& train_data, const Dataset& test,
                                              const OptimizerConfig& opt, const NoiseSchedule& schedule,
                                              const std::vector<std::uint64_t>& switch_points, TrainOptions options,
                                              std::uint64_t seed = 0, std::size_t threads = 1) {
  TrainOptions base = options;
  base.checkpoint_interval = opt.total_iterations + 1;
  base.extra_checkpoints = switch_points;
  const Trajectory standard = train(model, train_data, opt, schedule, base);
  std::vector<SwitchResult> out(switch_points.size());
  parallel_for(switch_points.size(), threads, [&](std::size_t i) {
    out[i] = switch_protocol(model, train_data, test, opt, schedule, standard, switch_points[i], options, seed);
  });
  return out;
}

inline std::string switch_sweep_csv(const std::vector<SwitchResult>& rows) {
  std::ostringstream out;
  out << "t,T,test_loss,test_acc,seed\n";
  for (const auto& r : rows)
    out << r.t << ',' << r.total << ',' << detail::format_double(r.test_loss) << ','
        << detail::format_double(r.test_accuracy) << ',' << r.seed << '\n';
  return out.str();
}

inline std::vector<SwitchResult> parse_switch_sweep_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  if (line != "t,T,test_loss,test_acc,seed") throw ConfigError("unexpected switch sweep header", 1);
  std::vector<SwitchResult> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto c = detail::split_csv(line);
    if (c.size() != 5) throw ConfigError("expected 5 cells", lineno);
    rows.push_back({std::stoull(c[0]), std::stoull(c[1]), detail::parse_double(c[2], lineno),
                    detail::parse_double(c[3], lineno), std::stoull(c[4])});
  }
  return rows;
}

}  // namespace iscope
