#pragma once

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "iscope/binary_io.hpp"
#include "iscope/metrics.hpp"
#include "iscope/netcore.hpp"
#include "iscope/parallel.hpp"
#include "iscope/schedule.hpp"
#include "iscope/trainer.hpp"

namespace iscope {

/// Empirical NTK Gram matrix on a probe set.
struct KernelMatrix {
  Matrix values;
  std::uint64_t probe_digest = 0;
  Scalarizer scalarizer;
  std::string run_id;
  std::uint64_t iteration = 0;
  std::vector<std::string> warnings;

  std::size_t size() const { return static_cast<std::size_t>(values.rows()); }
};

/// Jacobian rows (one per probe) of the scalarized output, evaluated at `params`.
inline Matrix scalarized_jacobian(const Model& model, const ParamVector& params, const ProbeSet& probe,
                                  const Scalarizer& scalarizer, std::size_t threads = 1) {
  const long m = static_cast<long>(probe.size()), p = static_cast<long>(params.size());
  Matrix jac(m, p);
  parallel_for(probe.size(), threads, [&](std::size_t i) {
    const long r = static_cast<long>(i);
    const ParamVector g = per_example_gradient(model, params, probe.inputs.col(r), scalarizer, probe.labels[i]);
    jac.row(r) = Eigen::Map<const Eigen::RowVectorXd>(g.data(), p);
  });
  return jac;
}

/// H_ij = <d f(x_i)/d theta, d f(x_j)/d theta> over the probe set.
inline KernelMatrix entk(const Model& model, const ParamVector& params, const ProbeSet& probe,
                         const Scalarizer& scalarizer = {}, std::size_t threads = 1) {
  if (probe.size() < 2) throw InvalidArgument("eNTK needs at least 2 probe points");
  const Matrix jac = scalarized_jacobian(model, params, probe, scalarizer, threads);
  KernelMatrix k;
  k.values = jac * jac.transpose();
  // Mirror the lower triangle so the result is exactly symmetric.
  k.values.triangularView<Eigen::StrictlyUpper>() = k.values.transpose().triangularView<Eigen::StrictlyUpper>();
  k.probe_digest = probe.digest();
  k.scalarizer = scalarizer;
  for (long i = 0; i < jac.rows(); ++i)
    if ((jac.row(i).array() == 0.0).all()) k.warnings.push_back("all-zero Jacobian row for probe " + std::to_string(i));
  return k;
}

inline double frobenius_inner(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (long i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

/// 1 - <H_i, H_j>_F / (|H_i|_F |H_j|_F), clamped to [0, 1].
inline double kernel_distance(const KernelMatrix& a, const KernelMatrix& b) {
  if (a.probe_digest != b.probe_digest) throw InvalidArgument("kernels were computed on different probe sets");
  if (a.values.rows() != b.values.rows() || a.values.cols() != b.values.cols())
    throw ShapeError("kernel", "kernel dimensions differ");
  const double ab = frobenius_inner(a.values, b.values), aa = frobenius_inner(a.values, a.values),
               bb = frobenius_inner(b.values, b.values);
  if (aa == 0.0 || bb == 0.0) throw InvalidArgument("kernel distance with a zero kernel");
  return std::clamp(1.0 - ab / std::sqrt(aa * bb), 0.0, 1.0);
}

struct KernelCheck {
  double asymmetry = 0.0;  // max |H - H^T| / max |H|
  double min_eigenvalue = 0.0;
  double psd_floor = 0.0;  // -1e-8 * trace / m
  bool ok() const { return asymmetry <= 1e-10 && min_eigenvalue >= psd_floor; }
};

inline KernelCheck check_kernel(const KernelMatrix& k) {
  KernelCheck c;
  const double scale = std::max(k.values.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  c.asymmetry = (k.values - k.values.transpose()).cwiseAbs().maxCoeff() / scale;
  const Eigen::SelfAdjointEigenSolver<Matrix> es(k.values, Eigen::EigenvaluesOnly);
  c.min_eigenvalue = es.eigenvalues().minCoeff();
  c.psd_floor = -1e-8 * k.values.trace() / static_cast<double>(k.values.rows());
  return c;
}

// ---------------------------------------------------------------------------
// Kernels along a trajectory

/// Kernels at a list of checkpoint iterations of one trajectory.
struct KernelSeries {
  std::vector<std::uint64_t> iterations;
  std::vector<KernelMatrix> kernels;

  std::size_t index_of(std::uint64_t t) const {
    const auto it = std::lower_bound(iterations.begin(), iterations.end(), t);
    if (it == iterations.end() || *it != t) throw MissingArtifact("no kernel at iteration " + std::to_string(t));
    return static_cast<std::size_t>(it - iterations.begin());
  }
  const KernelMatrix& at(std::uint64_t t) const { return kernels[index_of(t)]; }
  bool has(std::uint64_t t) const { return std::binary_search(iterations.begin(), iterations.end(), t); }
};

/// Kernels of the checkpoints at `iters` (sorted ascending). Linearized
/// trajectories use their anchor's Jacobian for every checkpoint.
inline KernelSeries kernel_series(const Model& model, const Trajectory& traj, const ProbeSet& probe,
                                  std::vector<std::uint64_t> iters, const Scalarizer& scalarizer = {},
                                  std::size_t threads = 1) {
  std::sort(iters.begin(), iters.end());
  iters.erase(std::unique(iters.begin(), iters.end()), iters.end());
  KernelSeries s;
  s.iterations = iters;
  s.kernels.resize(iters.size());
  for (auto t : iters) (void)traj.at(t);  // fail early on a missing checkpoint
  parallel_for(iters.size(), threads, [&](std::size_t i) {
    KernelMatrix k = entk(model, traj.jacobian_params(iters[i]), probe, scalarizer);
    k.run_id = traj.run_id;
    k.iteration = iters[i];
    s.kernels[i] = std::move(k);
  });
  return s;
}

/// Full symmetric S matrix over the series, zero on the diagonal.
inline MetricMatrix kernel_grid(const KernelSeries& s, const std::string& run_id = {}) {
  MetricMatrix m(MetricKind::S, s.iterations, s.iterations);
  m.run_ids = {run_id};
  const std::size_t n = s.iterations.size();
  for (std::size_t i = 0; i < n; ++i) {
    m.at(i, i) = 0.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = kernel_distance(s.kernels[i], s.kernels[j]);
      m.at(i, j) = d;
      m.at(j, i) = d;
    }
  }
  return m;
}

/// A labeled polyline (x = iteration).
struct Curve {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

/// For each reference tau, S(theta_t, theta_tau) for every t >= tau in the series.
inline std::vector<Curve> reference_sweep(const KernelSeries& s, const std::vector<std::uint64_t>& taus) {
  std::vector<Curve> out;
  for (auto tau : taus) {
    const KernelMatrix& ref = s.at(tau);
    Curve c{"tau=" + std::to_string(tau), {}};
    for (std::size_t i = s.index_of(tau); i < s.iterations.size(); ++i)
      c.points.emplace_back(static_cast<double>(s.iterations[i]),
                            s.iterations[i] == tau ? 0.0 : kernel_distance(s.kernels[i], ref));
    out.push_back(std::move(c));
  }
  return out;
}

/// For each dt, S(theta_t, theta_{t+dt}) for every t with both kernels present.
inline std::vector<Curve> adjacent_sweep(const KernelSeries& s, const std::vector<std::uint64_t>& dts) {
  std::vector<Curve> out;
  for (auto dt : dts) {
    Curve c{"dt=" + std::to_string(dt), {}};
    for (std::size_t i = 0; i < s.iterations.size(); ++i) {
      const std::uint64_t t = s.iterations[i];
      if (!s.has(t + dt)) continue;
      c.points.emplace_back(static_cast<double>(t), dt == 0 ? 0.0 : kernel_distance(s.kernels[i], s.at(t + dt)));
    }
    out.push_back(std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Classical MDS

struct EmbeddingResult {
  std::vector<std::uint64_t> iterations;
  std::vector<std::array<double, 2>> coords;
  std::array<double, 2> eigenvalues{};
  double stress = 0.0;
  /// Set when an eigenvalue was negative (non-Euclidean input) and clamped to 0.
  bool clamped = false;
};

namespace detail {

struct Eigenpair {
  double value = 0.0;
  Vector vector;
};

// Largest algebraic eigenpair of symmetric `a` by shifted power iteration.
// Stops when successive Rayleigh quotients differ by < 1e-12 (relative to
// the shift) and the iterate moved by < 1e-12, or after 10^4 iterations.
inline Eigenpair top_eigenpair(const Matrix& a, double shift, std::uint64_t seed) {
  const long n = a.rows();
  const CounterRng rng(derive_seed(seed, "power-iteration"));
  Vector v(n);
  for (long i = 0; i < n; ++i) v(i) = rng.normal(static_cast<std::uint64_t>(i), 0);
  v.normalize();
  double rq = v.dot(a * v);
  for (int it = 0; it < 10000; ++it) {
    Vector w = a * v + shift * v;
    const double norm = w.norm();
    if (norm == 0.0) break;
    w /= norm;
    const double next = w.dot(a * w);
    const double moved = std::min((w - v).norm(), (w + v).norm());
    v = std::move(w);
    const bool settled = std::abs(next - rq) < 1e-12 * std::max(1.0, shift) && moved < 1e-12;
    rq = next;
    if (settled) break;
  }
  return {rq, v};
}

}  // namespace detail

/// Classical MDS of a distance matrix into 2-D: double-center the squared
/// distances, take the top two eigenpairs, scale eigenvectors by sqrt(lambda).
inline EmbeddingResult embed_trajectory(const Matrix& dist, std::vector<std::uint64_t> iterations = {}) {
  const long n = dist.rows();
  if (n == 0 || dist.cols() != n) throw InvalidArgument("distance matrix must be square and non-empty");
  for (long i = 0; i < n; ++i) {
    if (dist(i, i) != 0.0) throw InvalidArgument("distance matrix must have a zero diagonal");
    for (long j = 0; j < n; ++j) {
      if (!(dist(i, j) >= 0.0)) throw InvalidArgument("distances must be non-negative");
      if (std::abs(dist(i, j) - dist(j, i)) > 1e-12 * std::max(1.0, std::abs(dist(i, j))))
        throw InvalidArgument("distance matrix must be symmetric");
    }
  }
  if (iterations.empty())
    for (long i = 0; i < n; ++i) iterations.push_back(static_cast<std::uint64_t>(i));

  const Matrix sq = dist.array().square().matrix();
  const Matrix centering = Matrix::Identity(n, n) - Matrix::Constant(n, n, 1.0 / static_cast<double>(n));
  Matrix b = -0.5 * centering * sq * centering;
  b = 0.5 * (b + b.transpose()).eval();

  EmbeddingResult r;
  r.iterations = std::move(iterations);
  r.coords.assign(static_cast<std::size_t>(n), {0.0, 0.0});
  // Gershgorin bound makes the shifted matrix positive semi-definite.
  double shift = 0.0;
  for (long i = 0; i < n; ++i) shift = std::max(shift, b.row(i).cwiseAbs().sum());
  if (shift > 0.0) {
    Matrix work = b;
    for (int k = 0; k < 2; ++k) {
      const detail::Eigenpair ep = detail::top_eigenpair(work, shift, static_cast<std::uint64_t>(k));
      double lambda = ep.value;
      if (lambda < 0.0) {
        r.clamped = true;
        lambda = 0.0;
      }
      r.eigenvalues[static_cast<std::size_t>(k)] = lambda;
      const double scale = std::sqrt(lambda);
      for (long i = 0; i < n; ++i) r.coords[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] = ep.vector(i) * scale;
      work -= ep.value * ep.vector * ep.vector.transpose();
    }
  }

  double num = 0.0, den = 0.0;
  for (long i = 0; i < n; ++i)
    for (long j = i + 1; j < n; ++j) {
      const auto& p = r.coords[static_cast<std::size_t>(i)];
      const auto& q = r.coords[static_cast<std::size_t>(j)];
      const double e = std::hypot(p[0] - q[0], p[1] - q[1]);
      num += (dist(i, j) - e) * (dist(i, j) - e);
      den += dist(i, j) * dist(i, j);
    }
  r.stress = den > 0.0 ? std::sqrt(num / den) : 0.0;
  return r;
}

inline Matrix dense_values(const MetricMatrix& m) {
  Matrix d(static_cast<long>(m.row_count()), static_cast<long>(m.col_count()));
  for (std::size_t i = 0; i < m.row_count(); ++i)
    for (std::size_t j = 0; j < m.col_count(); ++j) {
      const auto& v = m.at(i, j);
      if (!v) throw InvalidArgument("matrix has not-applicable cells");
      d(static_cast<long>(i), static_cast<long>(j)) = *v;
    }
  return d;
}

// ---------------------------------------------------------------------------
// Kernel binary format:
//   "ISKM" | m u64 | values f64[m*m] row-major | probe digest u64 | CRC32 u32

inline std::vector<std::uint8_t> encode_kernel(const KernelMatrix& k) {
  ByteWriter w;
  w.raw("ISKM");
  const long m = k.values.rows();
  w.u64(static_cast<std::uint64_t>(m));
  for (long i = 0; i < m; ++i)
    for (long j = 0; j < m; ++j) w.f64(k.values(i, j));
  w.u64(k.probe_digest);
  w.crc();
  return w.bytes();
}

inline KernelMatrix decode_kernel(std::vector<std::uint8_t> bytes) {
  ByteReader r(std::move(bytes));
  r.expect_magic("ISKM");
  const std::uint64_t m = r.u64();
  if (m > (1u << 20)) throw ParseError("implausible kernel size", 4);
  const std::vector<double> v = r.f64s(m * m);
  KernelMatrix k;
  k.values.resize(static_cast<long>(m), static_cast<long>(m));
  for (std::uint64_t i = 0; i < m; ++i)
    for (std::uint64_t j = 0; j < m; ++j) k.values(static_cast<long>(i), static_cast<long>(j)) = v[i * m + j];
  k.probe_digest = r.u64();
  r.verify_crc();
  return k;
}

inline void save_kernel(const KernelMatrix& k, const std::string& path) { write_bytes(path, encode_kernel(k)); }

inline KernelMatrix load_kernel(const std::string& path) { return decode_kernel(read_bytes(path)); }

/// EmbeddingResult as CSV rows (iteration, x, y).
inline std::string embedding_csv(const EmbeddingResult& e) {
  std::ostringstream out;
  out << "iteration,x,y\n";
  for (std::size_t i = 0; i < e.coords.size(); ++i)
    out << e.iterations[i] << ',' << detail::format_double(e.coords[i][0]) << ','
        << detail::format_double(e.coords[i][1]) << '\n';
  return out.str();
}

}  // namespace iscope
