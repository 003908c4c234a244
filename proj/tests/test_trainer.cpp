#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "iscope/trainer.hpp"

using namespace iscope;
using namespace fixtures;

namespace {

// 1-D regression data: f(x) = theta * x against target 0, so the minibatch
// gradient is 2 * theta * mean(x^2).
Dataset scalar_data(std::size_t n) {
  Dataset d;
  d.classes = 1;
  d.inputs.resize(1, static_cast<long>(n));
  for (std::size_t j = 0; j < n; ++j) d.inputs(0, static_cast<long>(j)) = 0.5 + 0.25 * static_cast<double>(j);
  d.labels.assign(n, 0);
  return d;
}

struct Small {
  Model model{mlp_spec({8}, Activation::tanh, 2, 2, 3)};
  Dataset data = make_synthetic(SyntheticKind::two_moons, 64, 0.1, 1);
  OptimizerConfig opt;
  NoiseSchedule schedule{5, 64, 16, 60};

  Small() {
    opt.learning_rate = 0.2;
    opt.total_iterations = 60;
    opt.milestones = {40};
  }
};

}  // namespace

TEST(Optimizer, LearningRateSchedule) {
  OptimizerConfig o;
  o.learning_rate = 1.0;
  o.lr_drop_factor = 0.5;
  o.milestones = {10, 20};
  o.total_iterations = 30;
  EXPECT_EQ(o.lr_at(0), 1.0);
  EXPECT_EQ(o.lr_at(9), 1.0);
  EXPECT_EQ(o.lr_at(10), 0.5);
  EXPECT_EQ(o.lr_at(29), 0.25);
}

TEST(Optimizer, ValidationRejectsBadSettings) {
  OptimizerConfig o;
  o.learning_rate = 0.0;
  EXPECT_THROW(o.validate(), InvalidArgument);
  o.learning_rate = 0.1;
  o.momentum = 1.0;
  EXPECT_THROW(o.validate(), InvalidArgument);
  o.momentum = 0.9;
  o.milestones = {5, 5};
  EXPECT_THROW(o.validate(), InvalidArgument);
  o.milestones = {o.total_iterations};
  EXPECT_THROW(o.validate(), InvalidArgument);
}

TEST(Sgd, MatchesScalarRecursion) {
  const Model m(linear_spec(1, 1));
  const Dataset d = scalar_data(10);
  OptimizerConfig opt;
  opt.learning_rate = 0.05;
  opt.momentum = 0.8;
  opt.weight_decay = 0.01;
  opt.milestones = {20};
  opt.total_iterations = 30;
  const NoiseSchedule s(2, 10, 3, 30);
  TrainOptions o;
  o.loss = LossKind::mean_squared_error;
  const Trajectory traj = train(m, d, opt, s, o);

  double theta = m.init_params()[0], buf = 0.0;
  for (std::uint64_t t = 0; t < 30; ++t) {
    EXPECT_NEAR(traj.at(t).params[0], theta, 1e-14 * std::max(1.0, std::abs(theta)));
    const auto idx = s.record(t).indices;
    double mean_sq = 0.0;
    for (auto i : idx) mean_sq += std::pow(d.inputs(0, static_cast<long>(i)), 2);
    mean_sq /= static_cast<double>(idx.size());
    buf = opt.momentum * buf + 2.0 * theta * mean_sq + opt.weight_decay * theta;
    theta -= opt.lr_at(t) * buf;
  }
  EXPECT_NEAR(traj.at(30).params[0], theta, 1e-14);
}

TEST(Sgd, WithoutMomentumFullBatchIsGradientDescent) {
  const Model m(linear_spec(1, 1));
  const Dataset d = scalar_data(4);
  OptimizerConfig opt;
  opt.learning_rate = 0.1;
  opt.momentum = 0.0;
  opt.weight_decay = 0.0;
  opt.total_iterations = 12;
  const NoiseSchedule s(0, 4, 4, 12);
  TrainOptions o;
  o.loss = LossKind::mean_squared_error;
  const Trajectory traj = train(m, d, opt, s, o);
  double mean_sq = 0.0;
  for (long j = 0; j < 4; ++j) mean_sq += d.inputs(0, j) * d.inputs(0, j) / 4.0;
  const double want = m.init_params()[0] * std::pow(1.0 - 2.0 * 0.1 * mean_sq, 12);
  EXPECT_NEAR(traj.at(12).params[0], want, 1e-14);
}

TEST(Sgd, TinyLearningRateBarelyMoves) {
  Small s;
  s.opt.learning_rate = 1e-300;
  s.opt.weight_decay = 0.0;
  const Trajectory traj = train(s.model, s.data, s.opt, s.schedule, {});
  EXPECT_TRUE(traj.at(60).params == s.model.init_params());
}

TEST(Sgd, IsBitwiseDeterministic) {
  Small s;
  TrainOptions o;
  o.checkpoint_interval = 10;
  const Trajectory a = train(s.model, s.data, s.opt, s.schedule, o);
  const Trajectory b = train(s.model, s.data, s.opt, s.schedule, o);
  ASSERT_EQ(a.iterations(), b.iterations());
  EXPECT_EQ(a.iterations(), (std::vector<std::uint64_t>{0, 10, 20, 30, 40, 50, 60}));
  for (std::size_t i = 0; i < a.checkpoints.size(); ++i) EXPECT_TRUE(bit_identical(a.checkpoints[i], b.checkpoints[i]));
}

TEST(Sgd, ResumeEqualsUninterruptedRun) {
  Small s;
  TrainOptions o;
  o.checkpoint_interval = 5;
  const Trajectory full = train(s.model, s.data, s.opt, s.schedule, o);
  const Trajectory tail = resume(s.model, s.data, s.opt, s.schedule, full.at(25), 60, o);
  EXPECT_EQ(tail.checkpoints.front().iteration, 25u);
  for (std::uint64_t t : {25u, 40u, 55u, 60u}) EXPECT_TRUE(bit_identical(tail.at(t), full.at(t)));
}

TEST(Sgd, ExtraCheckpointsAndMissingIterations) {
  Small s;
  TrainOptions o;
  o.checkpoint_interval = 50;
  o.extra_checkpoints = {7};
  const Trajectory traj = train(s.model, s.data, s.opt, s.schedule, o);
  EXPECT_EQ(traj.iterations(), (std::vector<std::uint64_t>{0, 7, 50, 60}));
  EXPECT_TRUE(traj.has(7));
  EXPECT_THROW(traj.at(8), MissingArtifact);
}

TEST(Sgd, DivergenceKeepsPartialTrajectory) {
  const Model m(linear_spec(1, 1));
  const Dataset d = scalar_data(4);
  OptimizerConfig opt;
  opt.learning_rate = 1e6;
  opt.total_iterations = 200;
  const NoiseSchedule s(0, 4, 4, 200);
  TrainOptions o;
  o.loss = LossKind::mean_squared_error;
  try {
    train(m, d, opt, s, o);
    FAIL() << "expected TrainingDiverged";
  } catch (const TrainingDiverged& e) {
    EXPECT_GT(e.iteration(), 0);
    ASSERT_FALSE(e.partial().checkpoints.empty());
    EXPECT_TRUE(e.partial().checkpoints.back().params.all_finite());
  }
}

TEST(Sgd, TrainLossIsTheScheduledBatchLoss) {
  Small s;
  TrainOptions o;
  o.checkpoint_interval = 20;
  const Trajectory traj = train(s.model, s.data, s.opt, s.schedule, o);
  const Checkpoint& c = traj.at(20);
  const double want = loss_and_grad(s.model, c.params, batch_at(s.schedule, s.data, 20), LossKind::cross_entropy).loss;
  EXPECT_EQ(c.train_loss, want);
}

// ---------------------------------------------------------------------------
// evaluation

TEST(Evaluate, CountsArgmaxHits) {
  const Model m(linear_spec(2, 2));
  // identity: predicts the class of the larger coordinate
  const ParamVector id(m.layout(), {1.0, 0.0, 0.0, 1.0});
  Dataset d;
  d.classes = 2;
  d.inputs.resize(2, 10);
  for (long j = 0; j < 10; ++j) {
    d.inputs(0, j) = 1.0;
    d.inputs(1, j) = j < 3 ? 2.0 : 0.0;
    d.labels.push_back(0);
  }
  const Evaluation e = evaluate(m, id, d);
  EXPECT_DOUBLE_EQ(e.accuracy, 0.7);
  EXPECT_DOUBLE_EQ(e.error, 0.3);
  const double ce_hit = std::log(1.0 + std::exp(-1.0)), ce_miss = std::log(1.0 + std::exp(1.0));
  EXPECT_NEAR(e.loss, 0.7 * ce_hit + 0.3 * ce_miss, 1e-14);
}

TEST(Evaluate, ChunkingDoesNotChangeTheMean) {
  const Model m(mlp_spec({4}, Activation::relu));
  const ParamVector p = random_params(m, 2);
  const Dataset d = make_synthetic(SyntheticKind::two_moons, 1300, 0.2, 3);
  const Evaluation e = evaluate(m, p, d);
  const double direct = loss_and_grad(m, p, d.all(), LossKind::cross_entropy).loss;
  EXPECT_NEAR(e.loss, direct, 1e-12);
}

// ---------------------------------------------------------------------------
// perturbations and twins

TEST(Perturbation, HasRequestedNorm) {
  const Model m(mlp_spec({32}, Activation::relu));
  for (double mag : {1e-7, 0.5}) {
    Perturbation p{3, mag, NormKind::l2, 0};
    EXPECT_NEAR(perturbation_vector(p, m.layout()).norm2(), mag, 1e-15 * std::max(1.0, mag) + mag * 1e-13);
    p.norm = NormKind::linf;
    EXPECT_NEAR(perturbation_vector(p, m.layout()).norm_inf(), mag, mag * 1e-13);
  }
  EXPECT_EQ(perturbation_vector(Perturbation{3, 0.0, NormKind::l2, 0}, m.layout()).norm2(), 0.0);
  EXPECT_THROW(perturbation_vector(Perturbation{3, -1.0, NormKind::l2, 0}, m.layout()), InvalidArgument);
}

TEST(Perturbation, DifferentSeedsAreNearlyOrthogonal) {
  auto layout = std::make_shared<const ParamLayout>(std::vector<TensorShape>{{"w", {20000}}});
  for (std::uint64_t s = 0; s < 5; ++s) {
    const ParamVector a = perturbation_vector(Perturbation{s, 1.0, NormKind::l2, 0}, layout);
    const ParamVector b = perturbation_vector(Perturbation{s + 100, 1.0, NormKind::l2, 0}, layout);
    EXPECT_LT(std::abs(a.dot(b)), 0.03);
  }
}

TEST(Perturbation, LeavesMomentumAndChecksIteration) {
  Small s;
  const Trajectory traj = train(s.model, s.data, s.opt, s.schedule, {});
  const Checkpoint& c = traj.at(10);
  const Checkpoint q = perturb(c, Perturbation{1, 1e-3, NormKind::l2, 10});
  EXPECT_TRUE(q.momentum == c.momentum);
  EXPECT_NEAR((q.params - c.params).norm2(), 1e-3, 1e-15);
  EXPECT_THROW(perturb(c, Perturbation{1, 1e-3, NormKind::l2, 11}), InvalidArgument);
}

TEST(TwinRun, ZeroMagnitudeGivesIdenticalBranches) {
  Small s;
  const TwinResult r = twin_run(s.model, s.data, s.opt, s.schedule, Perturbation{1, 0.0, NormKind::l2, 10}, 50);
  EXPECT_TRUE(bit_identical(r.original, r.perturbed));
}

TEST(TwinRun, AtInjectionTimeDistanceIsEpsilon) {
  Small s;
  const TwinResult r = twin_run(s.model, s.data, s.opt, s.schedule, Perturbation{1, 1e-4, NormKind::l2, 20}, 20);
  EXPECT_NEAR((r.original.params - r.perturbed.params).norm2(), 1e-4, 1e-16);
}

TEST(TwinRun, OriginalBranchMatchesPlainTraining) {
  Small s;
  const Trajectory traj = train(s.model, s.data, s.opt, s.schedule, {});
  const TwinResult r = twin_run(s.model, s.data, s.opt, s.schedule, Perturbation{2, 1e-2, NormKind::l2, 15}, 45);
  EXPECT_TRUE(bit_identical(r.original, traj.at(45)));
  EXPECT_FALSE(r.perturbed.params == r.original.params);
}

TEST(TwinRun, RejectsBadWindow) {
  Small s;
  EXPECT_THROW(twin_run(s.model, s.data, s.opt, s.schedule, Perturbation{1, 1e-3, NormKind::l2, 30}, 20),
               InvalidArgument);
}

// ---------------------------------------------------------------------------
// checkpoint files

TEST(CheckpointFile, RoundTripIsBitwise) {
  TempDir dir("ckpt");
  Small s;
  const Trajectory traj = train(s.model, s.data, s.opt, s.schedule, {});
  const Checkpoint& c = traj.at(33);
  save_checkpoint(c, dir.file("c.bin"));
  const Checkpoint back = load_checkpoint(dir.file("c.bin"), s.model.layout());
  EXPECT_TRUE(bit_identical(back, c));
  EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(c));
  EXPECT_EQ(read_bytes(dir.file("c.bin")).size(), 4 + 4 + 8 + 8 + 16 * c.params.size() + 4);
}

TEST(CheckpointFile, CorruptionIsDetected) {
  Small s;
  const std::vector<std::uint8_t> good = encode_checkpoint(initial_checkpoint(s.model));
  auto flipped = good;
  flipped[40] ^= 0x01;
  EXPECT_THROW(decode_checkpoint(flipped, s.model.layout()), ParseError);
  auto truncated = good;
  truncated.resize(good.size() - 9);
  EXPECT_THROW(decode_checkpoint(truncated, s.model.layout()), ParseError);
  auto magic = good;
  magic[0] = 'X';
  try {
    decode_checkpoint(magic, s.model.layout());
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  const Model other(mlp_spec({9}, Activation::tanh));
  EXPECT_THROW(decode_checkpoint(good, other.layout()), ShapeError);
}

TEST(CheckpointFile, MissingFileIsMissingArtifact) {
  Small s;
  EXPECT_THROW(load_checkpoint("/nonexistent/iscope/ckpt.bin", s.model.layout()), MissingArtifact);
}
