#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "iscope/entk.hpp"

using namespace iscope;
using namespace fixtures;

namespace {

ProbeSet probe_from(const Matrix& x, std::vector<int> labels = {}) {
  ProbeSet p;
  p.inputs = x;
  p.labels = labels.empty() ? std::vector<int>(static_cast<std::size_t>(x.cols()), 0) : std::move(labels);
  for (long j = 0; j < x.cols(); ++j) p.indices.push_back(static_cast<std::size_t>(j));
  return p;
}

KernelMatrix kernel_of(Matrix values, std::uint64_t digest = 1) {
  KernelMatrix k;
  k.values = std::move(values);
  k.probe_digest = digest;
  return k;
}

double dist2(const std::array<double, 2>& a, const std::array<double, 2>& b) {
  return std::hypot(a[0] - b[0], a[1] - b[1]);
}

}  // namespace

// ---------------------------------------------------------------------------
// entk

TEST(Entk, LinearModelKernelIsInputGram) {
  const Model m(linear_spec(3, 1));
  const Matrix x = random_inputs(3, 4, 1);
  const ProbeSet probe = probe_from(x);
  const Matrix gram = x.transpose() * x;
  for (std::uint64_t s = 0; s < 3; ++s) {
    const KernelMatrix k = entk(m, random_params(m, s), probe);
    EXPECT_LT((k.values - gram).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Entk, DuplicateProbeGivesSingularKernel) {
  const Model m(mlp_spec({6}, Activation::tanh));
  Matrix x = random_inputs(2, 3, 2);
  x.col(2) = x.col(0);
  const KernelMatrix k = entk(m, random_params(m, 1), probe_from(x));
  EXPECT_TRUE(k.values.row(0) == k.values.row(2));
  EXPECT_TRUE(k.values.col(0) == k.values.col(2));
  EXPECT_NEAR(k.values.determinant(), 0.0, 1e-10 * std::pow(k.values.norm(), 3));
}

TEST(Entk, MatchesFiniteDifferenceGram) {
  const Model m(mlp_spec({5, 4}, Activation::tanh, 2, 3));
  const ParamVector p = random_params(m, 3, 0.7);
  const Matrix x = random_inputs(2, 4, 5);
  const std::vector<int> labels{0, 2, 1, 2};
  const ProbeSet probe = probe_from(x, labels);
  for (auto mode : {ScalarizationMode::logit_sum, ScalarizationMode::true_class, ScalarizationMode::random_projection}) {
    const Scalarizer sc{mode, 7};
    Matrix jac(4, static_cast<long>(p.size()));
    for (long i = 0; i < 4; ++i) {
      const Vector cot = sc.cotangent(3, labels[static_cast<std::size_t>(i)]);
      const Matrix xi = x.col(i);
      const ParamVector g =
          finite_difference([&](const ParamVector& q) { return cot.dot(Vector(forward(m, q, xi).col(0))); }, p);
      jac.row(i) = Eigen::Map<const Eigen::RowVectorXd>(g.data(), static_cast<long>(g.size()));
    }
    const Matrix fd = jac * jac.transpose();
    const KernelMatrix k = entk(m, p, probe, sc);
    EXPECT_LT((k.values - fd).norm() / fd.norm(), 1e-4);
  }
}

TEST(Entk, SymmetricPsdAcrossModels) {
  for (auto spec : {mlp_spec({8, 8}, Activation::relu), mlp_spec({4}, Activation::tanh, 2, 3), conv_spec(Activation::relu)}) {
    const Model m(spec);
    for (std::uint64_t s = 0; s < 3; ++s) {
      const KernelMatrix k = entk(m, random_params(m, s), probe_from(random_inputs(m.input_dim(), 6, s)));
      EXPECT_TRUE(k.values == k.values.transpose());
      EXPECT_TRUE(check_kernel(k).ok());
    }
  }
}

TEST(Entk, DeadNetworkWarnsButReturns) {
  const Model m(mlp_spec({4}, Activation::relu, 2, 2, 0, false));
  const KernelMatrix k = entk(m, m.init_params().zeros_like(), probe_from(random_inputs(2, 3, 1)));
  EXPECT_EQ(k.warnings.size(), 3u);
  EXPECT_EQ(k.values.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Entk, ThreadCountDoesNotChangeBits) {
  const Model m(mlp_spec({16}, Activation::tanh));
  const ProbeSet probe = probe_from(random_inputs(2, 12, 3));
  const ParamVector p = random_params(m, 9);
  EXPECT_TRUE(entk(m, p, probe, {}, 1).values == entk(m, p, probe, {}, 4).values);
}

TEST(CheckKernel, FlagsAsymmetryAndNegativeEigenvalues) {
  Matrix a(2, 2);
  a << 1.0, 0.5, 0.4, 1.0;
  EXPECT_FALSE(check_kernel(kernel_of(a)).ok());
  Matrix b(2, 2);
  b << 1.0, 2.0, 2.0, 1.0;
  const KernelCheck c = check_kernel(kernel_of(b));
  EXPECT_NEAR(c.min_eigenvalue, -1.0, 1e-12);
  EXPECT_FALSE(c.ok());
}

// ---------------------------------------------------------------------------
// kernel distance

TEST(KernelDistance, HandComputedValue) {
  const Matrix i2 = Matrix::Identity(2, 2), ones = Matrix::Ones(2, 2);
  EXPECT_NEAR(kernel_distance(kernel_of(i2), kernel_of(ones)), 1.0 - 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(kernel_distance(kernel_of(i2), kernel_of(ones)), 0.29289, 1e-5);
}

TEST(KernelDistance, IdentityScalingAndSymmetry) {
  const Model m(mlp_spec({6}, Activation::tanh));
  const ProbeSet probe = probe_from(random_inputs(2, 5, 1));
  const KernelMatrix a = entk(m, random_params(m, 1), probe), b = entk(m, random_params(m, 2), probe);
  EXPECT_NEAR(kernel_distance(a, a), 0.0, 1e-15);
  KernelMatrix a3 = a;
  a3.values *= 3.0;
  EXPECT_NEAR(kernel_distance(a, a3), 0.0, 1e-15);
  EXPECT_EQ(kernel_distance(a, b), kernel_distance(b, a));
  KernelMatrix b7 = b;
  b7.values *= 7.0;
  EXPECT_NEAR(kernel_distance(a, b7), kernel_distance(a, b), 1e-14);
  const double d = kernel_distance(a, b);
  EXPECT_GE(d, 0.0);
  EXPECT_LE(d, 1.0);
}

TEST(KernelDistance, RejectsDifferentProbes) {
  const Matrix i2 = Matrix::Identity(2, 2);
  EXPECT_THROW(kernel_distance(kernel_of(i2, 1), kernel_of(i2, 2)), InvalidArgument);
  EXPECT_THROW(kernel_distance(kernel_of(i2), kernel_of(Matrix::Identity(3, 3))), ShapeError);
  EXPECT_THROW(kernel_distance(kernel_of(i2), kernel_of(Matrix::Zero(2, 2))), InvalidArgument);
}

// ---------------------------------------------------------------------------
// series, sweeps and grids

namespace {

struct SeriesFixture {
  Model model{mlp_spec({8}, Activation::tanh, 2, 2, 2)};
  Dataset data = make_synthetic(SyntheticKind::two_moons, 64, 0.1, 0);
  ProbeSet probe = make_probe_set(data, 8, 1);
  Trajectory traj;
  KernelSeries series;

  SeriesFixture() {
    OptimizerConfig opt;
    opt.learning_rate = 0.5;
    opt.total_iterations = 40;
    TrainOptions o;
    o.checkpoint_interval = 10;
    traj = train(model, data, opt, NoiseSchedule(3, 64, 16, 40), o);
    series = kernel_series(model, traj, probe, {40, 0, 20, 10, 30, 20});
  }
};

}  // namespace

TEST(KernelSeries, SortsAndDeduplicates) {
  SeriesFixture f;
  EXPECT_EQ(f.series.iterations, (std::vector<std::uint64_t>{0, 10, 20, 30, 40}));
  EXPECT_EQ(f.series.at(20).iteration, 20u);
  EXPECT_TRUE(f.series.at(20).values == entk(f.model, f.traj.at(20).params, f.probe).values);
  EXPECT_THROW(f.series.at(5), MissingArtifact);
  EXPECT_THROW(kernel_series(f.model, f.traj, f.probe, {15}), MissingArtifact);
}

TEST(KernelSeries, AnchoredTrajectoryHasConstantKernel) {
  SeriesFixture f;
  Trajectory lin = f.traj;
  lin.tangent_anchor = f.traj.at(10).params;
  const KernelSeries s = kernel_series(f.model, lin, f.probe, {0, 20, 40});
  for (const auto& k : s.kernels) EXPECT_TRUE(k.values == s.kernels.front().values);
}

TEST(KernelGrid, SymmetricWithZeroDiagonal) {
  SeriesFixture f;
  const MetricMatrix g = kernel_grid(f.series, "seed0");
  EXPECT_EQ(g.kind, MetricKind::S);
  for (std::size_t i = 0; i < g.row_count(); ++i) {
    EXPECT_EQ(*g.at(i, i), 0.0);
    for (std::size_t j = 0; j < g.col_count(); ++j) EXPECT_EQ(*g.at(i, j), *g.at(j, i));
  }
  EXPECT_EQ(*g.value(0, 30), kernel_distance(f.series.at(0), f.series.at(30)));
}

TEST(Sweeps, ReferenceAndAdjacentCurves) {
  SeriesFixture f;
  const auto ref = reference_sweep(f.series, {0, 20});
  ASSERT_EQ(ref.size(), 2u);
  EXPECT_EQ(ref[0].label, "tau=0");
  EXPECT_EQ(ref[0].points.size(), 5u);
  EXPECT_EQ(ref[1].points.size(), 3u);
  EXPECT_EQ(ref[1].points.front(), (std::pair<double, double>{20.0, 0.0}));
  EXPECT_EQ(ref[0].points[3].second, kernel_distance(f.series.at(30), f.series.at(0)));

  const auto adj = adjacent_sweep(f.series, {10, 20});
  EXPECT_EQ(adj[0].points.size(), 4u);
  EXPECT_EQ(adj[1].points.size(), 3u);
  EXPECT_EQ(adj[1].points[1].second, kernel_distance(f.series.at(10), f.series.at(30)));
}

// ---------------------------------------------------------------------------
// kernel files

TEST(KernelFile, RoundTripAndCorruption) {
  TempDir dir("kernel");
  SeriesFixture f;
  const KernelMatrix& k = f.series.at(30);
  save_kernel(k, dir.file("k.bin"));
  const KernelMatrix back = load_kernel(dir.file("k.bin"));
  EXPECT_TRUE(back.values == k.values);
  EXPECT_EQ(back.probe_digest, k.probe_digest);
  EXPECT_EQ(encode_kernel(back), encode_kernel(k));

  auto bytes = encode_kernel(k);
  bytes[20] ^= 0x80;
  EXPECT_THROW(decode_kernel(bytes), ParseError);
  bytes = encode_kernel(k);
  bytes.resize(bytes.size() - 1);
  EXPECT_THROW(decode_kernel(bytes), ParseError);
  EXPECT_THROW(load_kernel(dir.file("none.bin")), MissingArtifact);
}

// ---------------------------------------------------------------------------
// embedding

TEST(Embedding, TwoPointsKeepTheirDistance) {
  Matrix d(2, 2);
  d << 0.0, 0.37, 0.37, 0.0;
  const EmbeddingResult e = embed_trajectory(d);
  EXPECT_NEAR(dist2(e.coords[0], e.coords[1]), 0.37, 1e-12);
  EXPECT_LT(e.stress, 1e-10);
}

TEST(Embedding, EquilateralTriangle) {
  const Matrix d = Matrix::Ones(3, 3) - Matrix::Identity(3, 3);
  const EmbeddingResult e = embed_trajectory(d, {0, 100, 200});
  EXPECT_EQ(e.iterations, (std::vector<std::uint64_t>{0, 100, 200}));
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j) EXPECT_NEAR(dist2(e.coords[static_cast<std::size_t>(i)], e.coords[static_cast<std::size_t>(j)]), 1.0, 1e-8);
  EXPECT_NEAR(e.eigenvalues[0], 0.5, 1e-8);
  EXPECT_NEAR(e.eigenvalues[1], 0.5, 1e-8);
}

TEST(Embedding, UnitSquare) {
  const double r = std::sqrt(2.0);
  Matrix d(4, 4);
  d << 0, 1, r, 1,  //
      1, 0, 1, r,   //
      r, 1, 0, 1,   //
      1, r, 1, 0;
  const EmbeddingResult e = embed_trajectory(d);
  for (long i = 0; i < 4; ++i)
    for (long j = 0; j < 4; ++j)
      EXPECT_NEAR(dist2(e.coords[static_cast<std::size_t>(i)], e.coords[static_cast<std::size_t>(j)]), d(i, j), 1e-8);
}

TEST(Embedding, ZeroDistancesCollapseToOrigin) {
  const EmbeddingResult e = embed_trajectory(Matrix::Zero(4, 4));
  for (const auto& c : e.coords) {
    EXPECT_EQ(c[0], 0.0);
    EXPECT_EQ(c[1], 0.0);
  }
  EXPECT_FALSE(e.clamped);
}

TEST(Embedding, NonEuclideanInputIsClampedAndFlagged) {
  // violates the triangle inequality: d(0,2) > d(0,1) + d(1,2)
  Matrix d(3, 3);
  d << 0, 1, 3, 1, 0, 1, 3, 1, 0;
  const EmbeddingResult e = embed_trajectory(d);
  EXPECT_TRUE(e.clamped);
  EXPECT_GE(e.eigenvalues[1], 0.0);
}

TEST(Embedding, RejectsMalformedMatrices) {
  EXPECT_THROW(embed_trajectory(Matrix(0, 0)), InvalidArgument);
  EXPECT_THROW(embed_trajectory(Matrix::Ones(2, 3)), InvalidArgument);
  Matrix asym(2, 2);
  asym << 0, 1, 2, 0;
  EXPECT_THROW(embed_trajectory(asym), InvalidArgument);
  EXPECT_THROW(embed_trajectory(Matrix::Ones(2, 2)), InvalidArgument);
}

TEST(Embedding, CsvHasOneRowPerPoint) {
  const EmbeddingResult e = embed_trajectory(Matrix::Ones(3, 3) - Matrix::Identity(3, 3), {5, 6, 7});
  const std::string csv = embedding_csv(e);
  EXPECT_EQ(csv.rfind("iteration,x,y\n5,", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}

TEST(Embedding, DenseValuesRejectsNA) {
  MetricMatrix m(MetricKind::S, {0, 1}, {0, 1});
  m.at(0, 0) = 0.0;
  EXPECT_THROW(dense_values(m), InvalidArgument);
}
