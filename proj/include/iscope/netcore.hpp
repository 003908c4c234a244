#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "iscope/error.hpp"
#include "iscope/model.hpp"
#include "iscope/param_vector.hpp"
#include "iscope/rng.hpp"

namespace iscope {

enum class LossKind { cross_entropy, mean_squared_error };

/// A batch of examples: inputs are (features x batch), one label per column.
struct Batch {
  Matrix inputs;
  std::vector<int> labels;
  std::size_t size() const { return labels.size(); }
};

struct LossValue {
  double loss = 0.0;
  Matrix dlogits;  // d(mean loss)/d logits
};

/// Mean-over-batch loss and its gradient w.r.t. the logits.
///
/// Cross-entropy uses a max-shifted log-sum-exp. Mean squared error is
/// sum_k (z_k - y_k)^2 per example, where the target is the one-hot label, or
/// the label value itself for single-output models.
inline LossValue loss_on_logits(LossKind kind, const Matrix& logits, const std::vector<int>& labels,
                                std::int64_t iteration = -1) {
  const long c = logits.rows(), b = logits.cols();
  if (static_cast<std::size_t>(b) != labels.size()) throw ShapeError("loss", "label count != batch size");
  if (b == 0) throw InvalidArgument("loss of an empty batch");
  const double inv_b = 1.0 / static_cast<double>(b);
  LossValue out;
  out.dlogits.resize(c, b);
  double total = 0.0;
  for (long j = 0; j < b; ++j) {
    const int y = labels[static_cast<std::size_t>(j)];
    if (kind == LossKind::cross_entropy) {
      if (y < 0 || y >= c) throw InvalidArgument("label out of range");
      const double mx = logits.col(j).maxCoeff();
      double z = 0.0;
      for (long k = 0; k < c; ++k) z += std::exp(logits(k, j) - mx);
      const double lse = mx + std::log(z);
      total += lse - logits(y, j);
      for (long k = 0; k < c; ++k) {
        const double pk = std::exp(logits(k, j) - lse);
        out.dlogits(k, j) = (pk - (k == y ? 1.0 : 0.0)) * inv_b;
      }
    } else {
      for (long k = 0; k < c; ++k) {
        const double target = c == 1 ? static_cast<double>(y) : (k == y ? 1.0 : 0.0);
        const double r = logits(k, j) - target;
        total += r * r;
        out.dlogits(k, j) = 2.0 * r * inv_b;
      }
    }
  }
  out.loss = total * inv_b;
  if (!std::isfinite(out.loss)) throw NumericalError("non-finite loss", iteration);
  return out;
}

/// Logits for a batch of inputs. Pure in (params, inputs).
inline Matrix forward(const Model& model, const ParamVector& params, const Matrix& inputs) {
  model.check_params(params);
  model.check_inputs(inputs);
  return model.forward(params.values(), inputs);
}

struct LossAndGrad {
  double loss = 0.0;
  ParamVector grad;
};

inline LossAndGrad loss_and_grad(const Model& model, const ParamVector& params, const Batch& batch, LossKind loss,
                                 std::int64_t iteration = -1) {
  model.check_params(params);
  model.check_inputs(batch.inputs);
  if (batch.size() == 0) throw InvalidArgument("loss_and_grad on an empty batch");
  const ForwardTape tape = model.forward_tape(params.values(), batch.inputs);
  LossValue lv = loss_on_logits(loss, tape.output(), batch.labels, iteration);
  LossAndGrad out{lv.loss, params.zeros_like()};
  model.backward(params.values(), tape, std::move(lv.dlogits), out.grad.values());
  return out;
}

/// How the c logits are reduced to the scalar output whose parameter gradient
/// forms one eNTK Jacobian row.
enum class ScalarizationMode { logit_sum, true_class, random_projection };

struct Scalarizer {
  ScalarizationMode mode = ScalarizationMode::logit_sum;
  std::uint64_t projection_seed = 0;

  /// Cotangent applied to the logits. Random projections are unit-norm
  /// Gaussian directions fixed by projection_seed.
  Vector cotangent(std::size_t classes, std::optional<int> label) const {
    Vector v = Vector::Zero(static_cast<long>(classes));
    switch (mode) {
      case ScalarizationMode::logit_sum:
        v.setOnes();
        break;
      case ScalarizationMode::true_class:
        if (!label) throw InvalidArgument("true-class scalarization needs a label");
        if (*label < 0 || static_cast<std::size_t>(*label) >= classes) throw InvalidArgument("label out of range");
        v(*label) = 1.0;
        break;
      case ScalarizationMode::random_projection: {
        const CounterRng rng(derive_seed(projection_seed, "projection"));
        for (long k = 0; k < v.size(); ++k) v(k) = rng.normal(static_cast<std::uint64_t>(k), 0);
        v /= v.norm();
        break;
      }
    }
    return v;
  }

  bool operator==(const Scalarizer&) const = default;
};

/// Gradient of the scalarized model output (not the loss) w.r.t. params.
inline ParamVector per_example_gradient(const Model& model, const ParamVector& params, const Vector& x,
                                        const Scalarizer& scalarizer, std::optional<int> label = std::nullopt) {
  model.check_params(params);
  const Matrix input = x;
  model.check_inputs(input);
  const Vector cot = scalarizer.cotangent(model.output_dim(), label);
  const ForwardTape tape = model.forward_tape(params.values(), input);
  ParamVector grad = params.zeros_like();
  model.backward(params.values(), tape, Matrix(cot), grad.values());
  return grad;
}

/// Index of the largest logit; ties go to the lowest class index.
inline int argmax_column(const Matrix& logits, long col) {
  int best = 0;
  for (long k = 1; k < logits.rows(); ++k)
    if (logits(k, col) > logits(best, col)) best = static_cast<int>(k);
  return best;
}

}  // namespace iscope
