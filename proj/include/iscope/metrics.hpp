#pragma once

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "iscope/dataset.hpp"
#include "iscope/error.hpp"
#include "iscope/netcore.hpp"
#include "iscope/parallel.hpp"
#include "iscope/param_vector.hpp"
#include "iscope/trainer.hpp"

namespace iscope {

/// C: parameter dissimilarity, S: kernel distance, B: loss barrier,
/// D: disagreement rate.
enum class MetricKind { C, S, B, D };

inline char to_char(MetricKind k) { return "CSBD"[static_cast<int>(k)]; }

inline MetricKind parse_metric_kind(std::string_view s) {
  if (s == "C") return MetricKind::C;
  if (s == "S") return MetricKind::S;
  if (s == "B") return MetricKind::B;
  if (s == "D") return MetricKind::D;
  throw InvalidArgument("unknown metric kind '" + std::string(s) + "'");
}

/// A labeled grid of metric values. Cells that were not evaluated hold
/// std::nullopt and are written as "NA".
struct MetricMatrix {
  MetricKind kind = MetricKind::C;
  std::vector<std::uint64_t> rows;
  std::vector<std::uint64_t> cols;
  std::vector<std::optional<double>> values;  // row-major
  std::vector<std::string> run_ids;
  std::string dataset_digest;

  MetricMatrix() = default;
  MetricMatrix(MetricKind k, std::vector<std::uint64_t> r, std::vector<std::uint64_t> c)
      : kind(k), rows(std::move(r)), cols(std::move(c)), values(rows.size() * cols.size()) {}

  std::size_t row_count() const { return rows.size(); }
  std::size_t col_count() const { return cols.size(); }
  const std::optional<double>& at(std::size_t i, std::size_t j) const { return values.at(i * cols.size() + j); }
  std::optional<double>& at(std::size_t i, std::size_t j) { return values.at(i * cols.size() + j); }

  /// Value at iteration stamps (row t, column u).
  std::optional<double> value(std::uint64_t t, std::uint64_t u) const {
    return at(index_of(rows, t, "row"), index_of(cols, u, "column"));
  }

  bool operator==(const MetricMatrix& o) const {
    if (kind != o.kind || rows != o.rows || cols != o.cols || values.size() != o.values.size()) return false;
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (values[i].has_value() != o.values[i].has_value()) return false;
      if (values[i] && std::bit_cast<std::uint64_t>(*values[i]) != std::bit_cast<std::uint64_t>(*o.values[i]))
        return false;
    }
    return true;
  }

 private:
  static std::size_t index_of(const std::vector<std::uint64_t>& v, std::uint64_t t, const char* axis) {
    const auto it = std::find(v.begin(), v.end(), t);
    if (it == v.end()) throw MissingArtifact(std::string("no ") + axis + " at iteration " + std::to_string(t));
    return static_cast<std::size_t>(it - v.begin());
  }
};

/// 1 - <a, b> / (|a| |b|), clamped to [0, 2]. Identical inputs give exactly 0.
inline double param_dissimilarity(const ParamVector& a, const ParamVector& b) {
  if (!a.same_layout(b)) throw ShapeError("<flat>", "parameter layouts differ");
  const double ab = a.dot(b), aa = a.dot(a), bb = b.dot(b);
  if (aa == 0.0 || bb == 0.0) throw InvalidArgument("cosine dissimilarity of a zero vector");
  return std::clamp(1.0 - ab / std::sqrt(aa * bb), 0.0, 2.0);
}

/// `points` uniformly spaced values k / (points - 1) on [0, 1]. Grids whose
/// spacings divide each other share their common points bit-exactly.
inline std::vector<double> alpha_grid(std::size_t points) {
  if (points < 2) throw InvalidArgument("alpha grid needs at least 2 points");
  std::vector<double> a(points);
  for (std::size_t k = 0; k < points; ++k) a[k] = static_cast<double>(k) / static_cast<double>(points - 1);
  return a;
}

/// max over alpha of L(alpha*theta_i + (1-alpha)*theta_j) - (L_i + L_j)/2.
/// The excess is evaluated as (L - L_i)/2 + (L - L_j)/2 so that an
/// endpoints-only grid returns |L_i - L_j|/2 bit-exactly. Interior points are
/// theta_j + alpha*(theta_i - theta_j), so identical endpoints give exactly 0.
inline double loss_barrier_fn(const std::function<double(const ParamVector&)>& loss_at, const ParamVector& ti,
                              const ParamVector& tj, const std::vector<double>& alphas) {
  if (!ti.same_layout(tj)) throw ShapeError("<flat>", "parameter layouts differ");
  if (std::find(alphas.begin(), alphas.end(), 0.0) == alphas.end() ||
      std::find(alphas.begin(), alphas.end(), 1.0) == alphas.end())
    throw InvalidArgument("alpha grid must contain 0 and 1");
  for (double a : alphas)
    if (!(a >= 0.0 && a <= 1.0)) throw InvalidArgument("alpha grid must lie within [0, 1]");
  const double li = loss_at(ti), lj = loss_at(tj);
  double best = -std::numeric_limits<double>::infinity();
  ParamVector mix = ti.zeros_like();
  for (double a : alphas) {
    double l;
    if (a == 1.0) {
      l = li;
    } else if (a == 0.0) {
      l = lj;
    } else {
      for (std::size_t k = 0; k < mix.size(); ++k) mix[k] = tj[k] + a * (ti[k] - tj[k]);
      l = loss_at(mix);
    }
    if (!std::isfinite(l)) throw NumericalError("non-finite interpolated loss at alpha " + detail::format_double(a));
    best = std::max(best, 0.5 * (l - li) + 0.5 * (l - lj));
  }
  return best;
}

inline double loss_barrier(const ParamVector& ti, const ParamVector& tj, const Model& model, const Dataset& eval,
                           const std::vector<double>& alphas = alpha_grid(21), LossKind loss = LossKind::cross_entropy) {
  return loss_barrier_fn([&](const ParamVector& p) { return evaluate(model, p, eval, loss).loss; }, ti, tj, alphas);
}

/// Fraction of points whose argmax predictions differ (ties to the lowest class).
inline double disagreement_rate(const ParamVector& ti, const ParamVector& tj, const Model& model, const Dataset& eval) {
  eval.validate();
  model.check_params(ti);
  model.check_params(tj);
  constexpr long kChunk = 512;
  const long n = static_cast<long>(eval.size());
  std::size_t differ = 0;
  for (long start = 0; start < n; start += kChunk) {
    const long len = std::min(kChunk, n - start);
    const Matrix x = eval.inputs.middleCols(start, len);
    const Matrix a = model.forward(ti.values(), x), b = model.forward(tj.values(), x);
    for (long j = 0; j < len; ++j)
      if (argmax_column(a, j) != argmax_column(b, j)) ++differ;
  }
  return static_cast<double>(differ) / static_cast<double>(n);
}

/// Looks up the compared pair for grid cell (t0, t1); throws MissingArtifact.
using PairLookup = std::function<std::pair<const ParamVector*, const ParamVector*>(std::uint64_t, std::uint64_t)>;

struct MetricContext {
  const Model* model = nullptr;
  const Dataset* eval = nullptr;
  std::vector<double> alphas = alpha_grid(21);
  LossKind loss = LossKind::cross_entropy;
  std::size_t threads = 1;
};

inline double metric_value(MetricKind kind, const ParamVector& a, const ParamVector& b, const MetricContext& ctx) {
  switch (kind) {
    case MetricKind::C: return param_dissimilarity(a, b);
    case MetricKind::B: return loss_barrier(a, b, *ctx.model, *ctx.eval, ctx.alphas, ctx.loss);
    case MetricKind::D: return disagreement_rate(a, b, *ctx.model, *ctx.eval);
    case MetricKind::S: break;
  }
  throw InvalidArgument("kernel distance grids are built by kernel_grid");
}

/// Fills cells with t1 >= t0; the rest stay not-applicable.
inline MetricMatrix metric_grid(MetricKind kind, const std::vector<std::uint64_t>& t0s,
                                const std::vector<std::uint64_t>& t1s, const PairLookup& lookup,
                                const MetricContext& ctx) {
  MetricMatrix m(kind, t0s, t1s);
  std::vector<std::pair<std::size_t, std::size_t>> cells;
  for (std::size_t i = 0; i < t0s.size(); ++i)
    for (std::size_t j = 0; j < t1s.size(); ++j)
      if (t1s[j] >= t0s[i]) cells.emplace_back(i, j);
  // Resolve lookups up front so missing checkpoints fail before any work.
  std::vector<std::pair<const ParamVector*, const ParamVector*>> pairs;
  for (auto [i, j] : cells) pairs.push_back(lookup(t0s[i], t1s[j]));
  std::vector<double> out(cells.size());
  parallel_for(cells.size(), ctx.threads, [&](std::size_t c) { out[c] = metric_value(kind, *pairs[c].first, *pairs[c].second, ctx); });
  for (std::size_t c = 0; c < cells.size(); ++c) m.at(cells[c].first, cells[c].second) = out[c];
  if (ctx.eval) m.dataset_digest = ctx.eval->digest();
  return m;
}

// ---------------------------------------------------------------------------
// CSV: the corner cell holds the metric letter, the first row the column
// iterations, the first column the row iterations. Values use 17 significant
// digits; unevaluated cells are "NA".

inline std::string metric_csv(const MetricMatrix& m) {
  std::ostringstream out;
  out << to_char(m.kind);
  for (auto c : m.cols) out << ',' << c;
  out << '\n';
  for (std::size_t i = 0; i < m.row_count(); ++i) {
    out << m.rows[i];
    for (std::size_t j = 0; j < m.col_count(); ++j) {
      const auto& v = m.at(i, j);
      out << ',' << (v ? detail::format_double(*v) : std::string("NA"));
    }
    out << '\n';
  }
  return out.str();
}

inline MetricMatrix parse_metric_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("empty metric csv", 1);
  auto header = detail::split_csv(line);
  MetricMatrix m;
  m.kind = parse_metric_kind(header.at(0));
  for (std::size_t j = 1; j < header.size(); ++j)
    m.cols.push_back(static_cast<std::uint64_t>(detail::parse_double(header[j], 1)));
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = detail::split_csv(line);
    if (cells.size() != m.cols.size() + 1) throw ConfigError("wrong number of cells", lineno);
    m.rows.push_back(static_cast<std::uint64_t>(detail::parse_double(cells[0], lineno)));
    for (std::size_t j = 1; j < cells.size(); ++j) {
      if (cells[j] == "NA") m.values.emplace_back(std::nullopt);
      else m.values.emplace_back(detail::parse_double(cells[j], lineno));
    }
  }
  return m;
}

inline nlohmann::json metric_metadata(const MetricMatrix& m) {
  return {{"metric", std::string(1, to_char(m.kind))},
          {"run_ids", m.run_ids},
          {"dataset_digest", m.dataset_digest},
          {"rows", m.rows},
          {"cols", m.cols}};
}

/// Writes `<path>` (CSV) and `<path>.meta.json`.
inline void save_metric_matrix(const MetricMatrix& m, const std::string& path) {
  std::ofstream(path) << metric_csv(m);
  std::ofstream(path + ".meta.json") << metric_metadata(m).dump(2) << '\n';
}

inline MetricMatrix load_metric_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  MetricMatrix m = parse_metric_csv(ss.str());
  std::ifstream meta(path + ".meta.json");
  if (meta) {
    const auto j = nlohmann::json::parse(meta);
    m.run_ids = j.value("run_ids", std::vector<std::string>{});
    m.dataset_digest = j.value("dataset_digest", std::string{});
  }
  return m;
}

}  // namespace iscope
