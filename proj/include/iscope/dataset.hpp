#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "iscope/digest.hpp"
#include "iscope/error.hpp"
#include "iscope/netcore.hpp"
#include "iscope/rng.hpp"

namespace iscope {

enum class Split { train, test };

inline const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }

/// Labeled examples stored column-wise (features x n).
struct Dataset {
  Matrix inputs;
  std::vector<int> labels;
  std::size_t classes = 2;
  Split split = Split::train;
  std::optional<ImageShape> image;
  std::string provenance;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(inputs.rows()); }

  void validate() const {
    if (labels.empty()) throw InvalidArgument("dataset is empty");
    if (static_cast<std::size_t>(inputs.cols()) != labels.size())
      throw ShapeError("dataset", "input column count != label count");
    for (int y : labels)
      if (y < 0 || static_cast<std::size_t>(y) >= classes) throw InvalidArgument("label outside [0, classes)");
  }

  std::string digest() const {
    Sha256 h;
    h.update_values(std::span<const double>(inputs.data(), static_cast<std::size_t>(inputs.size())));
    h.update_values(std::span<const int>(labels));
    const std::uint64_t c = classes;
    h.update(&c, sizeof c);
    return h.hex();
  }

  Batch gather(std::span<const std::size_t> idx) const {
    Batch b;
    b.inputs.resize(inputs.rows(), static_cast<long>(idx.size()));
    b.labels.reserve(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) {
      b.inputs.col(static_cast<long>(j)) = inputs.col(static_cast<long>(idx[j]));
      b.labels.push_back(labels[idx[j]]);
    }
    return b;
  }

  Batch all() const { return Batch{inputs, labels}; }
};

enum class SyntheticKind { two_moons, gaussian_mixture, spirals };

inline SyntheticKind parse_synthetic_kind(const std::string& s) {
  if (s == "two-moons") return SyntheticKind::two_moons;
  if (s == "gaussian-mixture") return SyntheticKind::gaussian_mixture;
  if (s == "spirals") return SyntheticKind::spirals;
  throw InvalidArgument("unknown synthetic dataset kind '" + s + "'");
}

inline const char* to_string(SyntheticKind k) {
  switch (k) {
    case SyntheticKind::two_moons: return "two-moons";
    case SyntheticKind::gaussian_mixture: return "gaussian-mixture";
    case SyntheticKind::spirals: return "spirals";
  }
  return "?";
}

/// 2-D synthetic classification data. Classes are balanced up to rounding
/// (the first n % c classes get one extra point). Points of class k are laid
/// out in order along their curve; Gaussian noise of std `noise` is added per
/// coordinate.
///
/// two-moons: class 0 on (cos(pi s), sin(pi s)), class 1 on
///   (1 - cos(pi s), 0.5 - sin(pi s)), s uniform on [0, 1]. Always 2 classes.
/// gaussian-mixture: class k centered at (cos(pi + 2 pi k / c), sin(...)),
///   so two classes sit at (-1, 0) and (1, 0).
/// spirals: arm k at radius s and angle 2 pi k / c + 3 pi s.
inline Dataset make_synthetic(SyntheticKind kind, std::size_t n, double noise, std::uint64_t seed,
                              std::size_t classes = 2, Split split = Split::train) {
  if (n < 2) throw InvalidArgument("synthetic dataset needs n >= 2");
  if (!(noise >= 0.0)) throw InvalidArgument("noise level must be >= 0");
  if (kind == SyntheticKind::two_moons) classes = 2;
  if (classes < 2) throw InvalidArgument("synthetic dataset needs at least 2 classes");

  Dataset d;
  d.classes = classes;
  d.split = split;
  d.inputs.resize(2, static_cast<long>(n));
  d.labels.reserve(n);
  const CounterRng rng(derive_seed(seed, split == Split::train ? "synthetic/train" : "synthetic/test"));
  std::size_t col = 0;
  for (std::size_t k = 0; k < classes; ++k) {
    const std::size_t count = n / classes + (k < n % classes ? 1 : 0);
    for (std::size_t i = 0; i < count; ++i, ++col) {
      const double s = count > 1 ? static_cast<double>(i) / static_cast<double>(count - 1) : 0.0;
      double x = 0.0, y = 0.0;
      switch (kind) {
        case SyntheticKind::two_moons:
          if (k == 0) {
            x = std::cos(std::numbers::pi * s);
            y = std::sin(std::numbers::pi * s);
          } else {
            x = 1.0 - std::cos(std::numbers::pi * s);
            y = 0.5 - std::sin(std::numbers::pi * s);
          }
          break;
        case SyntheticKind::gaussian_mixture: {
          const double a = std::numbers::pi + 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(classes);
          x = std::cos(a);
          y = std::sin(a);
          break;
        }
        case SyntheticKind::spirals: {
          const double a = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(classes) +
                           3.0 * std::numbers::pi * s;
          x = s * std::cos(a);
          y = s * std::sin(a);
          break;
        }
      }
      if (noise > 0.0) {
        x += noise * rng.normal(col, 0);
        y += noise * rng.normal(col, 1);
      }
      d.inputs(0, static_cast<long>(col)) = x;
      d.inputs(1, static_cast<long>(col)) = y;
      d.labels.push_back(static_cast<int>(k));
    }
  }
  std::ostringstream prov;
  prov << "synthetic:" << to_string(kind) << ":n=" << n << ":noise=" << noise << ":seed=" << seed
       << ":classes=" << classes << ":split=" << to_string(split);
  d.provenance = prov.str();
  return d;
}

namespace detail {
inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, r.ptr);
}

inline double parse_double(std::string_view s, std::size_t line) {
  double v = 0.0;
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size())
    throw ConfigError("cannot parse number '" + std::string(s) + "'", line);
  return v;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}
}  // namespace detail

/// CSV with header x0,...,x{d-1},label; values written with 17 significant digits.
inline void write_dataset_csv(const Dataset& d, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  for (std::size_t i = 0; i < d.dim(); ++i) out << 'x' << i << ',';
  out << "label\n";
  for (std::size_t j = 0; j < d.size(); ++j) {
    for (std::size_t i = 0; i < d.dim(); ++i)
      out << detail::format_double(d.inputs(static_cast<long>(i), static_cast<long>(j))) << ',';
    out << d.labels[j] << '\n';
  }
}

inline Dataset read_dataset_csv(const std::string& path, std::size_t classes, Split split = Split::train) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("empty dataset csv", 1);
  const auto header = detail::split_csv(line);
  if (header.size() < 2 || header.back() != "label") throw ConfigError("dataset csv header must end in 'label'", 1);
  const std::size_t dim = header.size() - 1;
  std::vector<double> values;
  Dataset d;
  d.classes = classes;
  d.split = split;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::split_csv(line);
    if (cells.size() != dim + 1) throw ConfigError("wrong number of columns", lineno);
    for (std::size_t i = 0; i < dim; ++i) values.push_back(detail::parse_double(cells[i], lineno));
    d.labels.push_back(static_cast<int>(detail::parse_double(cells[dim], lineno)));
  }
  d.inputs = Eigen::Map<Matrix>(values.data(), static_cast<long>(dim), static_cast<long>(d.labels.size()));
  d.provenance = "csv:" + path + ":sha256=" + file_sha256(path);
  d.validate();
  return d;
}

}  // namespace iscope
