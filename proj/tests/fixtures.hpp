#pragma once

// Shared helpers for the test suites: small models, random instances and
// central finite differences.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>

#include <unistd.h>

#include "iscope/dataset.hpp"
#include "iscope/model.hpp"
#include "iscope/netcore.hpp"
#include "iscope/rng.hpp"

namespace fixtures {

using namespace iscope;

inline ModelSpec mlp_spec(std::vector<std::size_t> hidden, Activation act, std::size_t in = 2, std::size_t out = 2,
                          std::uint64_t seed = 0, bool bias = true) {
  ModelSpec s;
  s.arch = Architecture::mlp;
  s.hidden = std::move(hidden);
  s.activation = act;
  s.input_dim = in;
  s.output_dim = out;
  s.bias = bias;
  s.init_seed = seed;
  return s;
}

inline ModelSpec conv_spec(Activation act, std::uint64_t seed = 0, std::size_t side = 4, std::size_t out = 3) {
  ModelSpec s;
  s.arch = Architecture::convnet_small;
  s.hidden = {2};
  s.activation = act;
  s.image = ImageShape{1, side, side};
  s.input_dim = side * side;
  s.output_dim = out;
  s.init_seed = seed;
  return s;
}

/// Single dense layer without bias: f(x) = W x.
inline ModelSpec linear_spec(std::size_t in, std::size_t out, bool bias = false) {
  ModelSpec s;
  s.input_dim = in;
  s.output_dim = out;
  s.bias = bias;
  return s;
}

inline ParamVector random_params(const Model& m, std::uint64_t seed, double scale = 1.0) {
  ParamVector p(m.layout());
  const CounterRng rng(derive_seed(seed, "test-params"));
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = scale * rng.normal(i, 0);
  return p;
}

inline Matrix random_inputs(std::size_t dim, std::size_t n, std::uint64_t seed) {
  Matrix x(static_cast<long>(dim), static_cast<long>(n));
  const CounterRng rng(derive_seed(seed, "test-inputs"));
  for (long j = 0; j < x.cols(); ++j)
    for (long i = 0; i < x.rows(); ++i) x(i, j) = rng.normal(static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(j));
  return x;
}

inline std::vector<int> random_labels(std::size_t n, std::size_t classes, std::uint64_t seed) {
  const CounterRng rng(derive_seed(seed, "test-labels"));
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(rng.below(i, 0, classes));
  return y;
}

/// Central differences of a scalar function of the parameters.
inline ParamVector finite_difference(const std::function<double(const ParamVector&)>& f, const ParamVector& at,
                                     double h = 1e-5) {
  ParamVector g = at.zeros_like();
  ParamVector probe = at;
  for (std::size_t i = 0; i < at.size(); ++i) {
    probe[i] = at[i] + h;
    const double up = f(probe);
    probe[i] = at[i] - h;
    const double down = f(probe);
    probe[i] = at[i];
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// |a - b| / max(|a|, |b|) in the l2 norm; 0 when both vanish.
inline double relative_error(const ParamVector& a, const ParamVector& b) {
  const double diff = (a - b).norm2();
  const double scale = std::max(a.norm2(), b.norm2());
  return scale == 0.0 ? diff : diff / scale;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name) {
    path_ = std::filesystem::temp_directory_path() / ("iscope-test-" + name + "-" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string str() const { return path_.string(); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace fixtures
