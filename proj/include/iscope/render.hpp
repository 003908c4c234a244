#pragma once

// Deterministic SVG output. Every plot embeds its data: heatmap cells and
// legend entries carry data-* attributes, and a leading comment repeats the
// values as CSV.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "iscope/dataset.hpp"
#include "iscope/entk.hpp"
#include "iscope/error.hpp"
#include "iscope/metrics.hpp"

namespace iscope {

namespace render_detail {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

/// Comment-safe text: no "--" inside XML comments.
inline std::string comment_safe(std::string s) {
  for (std::size_t i = s.find("--"); i != std::string::npos; i = s.find("--")) s.replace(i, 2, "- -");
  return s;
}

inline constexpr std::array<std::array<int, 3>, 5> kStops = {{
    {68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}}};

inline std::string hex(int r, int g, int b) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

}  // namespace render_detail

/// Color for u in [0, 1], piecewise linear through five stops. u = 1 gives
/// the terminal color.
inline std::string colormap(double u) {
  using render_detail::kStops;
  u = std::clamp(u, 0.0, 1.0);
  const double x = u * static_cast<double>(kStops.size() - 1);
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(x), kStops.size() - 2);
  const double f = x - static_cast<double>(k);
  int c[3];
  for (int i = 0; i < 3; ++i)
    c[i] = static_cast<int>(std::lround(kStops[k][static_cast<std::size_t>(i)] * (1.0 - f) +
                                        kStops[k + 1][static_cast<std::size_t>(i)] * f));
  return render_detail::hex(c[0], c[1], c[2]);
}

inline std::string terminal_color() { return colormap(1.0); }

inline std::string render_heatmap_svg(const MetricMatrix& m, const std::string& title = {}) {
  using namespace render_detail;
  if (m.row_count() == 0 || m.col_count() == 0) throw InvalidArgument("cannot render an empty matrix");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& v : m.values)
    if (v) {
      lo = std::min(lo, *v);
      hi = std::max(hi, *v);
    }
  const bool any = lo <= hi;
  const double cell = 36.0, left = 90.0, top = 50.0;
  const double w = left + cell * static_cast<double>(m.col_count()) + 150.0;
  const double h = top + cell * static_cast<double>(m.row_count()) + 70.0;

  std::ostringstream o;
  o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(w) << "\" height=\"" << num(h) << "\" viewBox=\"0 0 "
    << num(w) << ' ' << num(h) << "\">\n";
  o << "<!-- data\n" << comment_safe(metric_csv(m)) << "-->\n";
  o << "<defs><pattern id=\"hatch\" width=\"6\" height=\"6\" patternUnits=\"userSpaceOnUse\">"
       "<rect width=\"6\" height=\"6\" fill=\"#ffffff\"/><path d=\"M0,6 L6,0\" stroke=\"#999999\" stroke-width=\"1\"/>"
       "</pattern>\n";
  o << "<linearGradient id=\"scale\" x1=\"0\" y1=\"1\" x2=\"0\" y2=\"0\">";
  for (int k = 0; k <= 4; ++k)
    o << "<stop offset=\"" << num(k / 4.0) << "\" stop-color=\"" << colormap(k / 4.0) << "\"/>";
  o << "</linearGradient></defs>\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  o << "<text x=\"" << num(left) << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">"
    << escape(title.empty() ? std::string(1, to_char(m.kind)) : title) << "</text>\n";
  for (std::size_t i = 0; i < m.row_count(); ++i) {
    for (std::size_t j = 0; j < m.col_count(); ++j) {
      const auto& v = m.at(i, j);
      const double x = left + cell * static_cast<double>(j), y = top + cell * static_cast<double>(i);
      o << "<rect class=\"cell\" x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(cell) << "\" height=\""
        << num(cell) << "\" data-row=\"" << m.rows[i] << "\" data-col=\"" << m.cols[j] << "\" ";
      if (v) {
        const double u = hi > lo ? (*v - lo) / (hi - lo) : 1.0;
        o << "data-value=\"" << detail::format_double(*v) << "\" fill=\"" << colormap(u) << "\"/>\n";
      } else {
        o << "data-value=\"NA\" fill=\"url(#hatch)\"/>\n";
      }
    }
  }
  const double grid_bottom = top + cell * static_cast<double>(m.row_count());
  for (std::size_t j = 0; j < m.col_count(); ++j)
    o << "<text x=\"" << num(left + cell * (static_cast<double>(j) + 0.5)) << "\" y=\"" << num(grid_bottom + 16)
      << "\" font-family=\"sans-serif\" font-size=\"9\" text-anchor=\"middle\">" << m.cols[j] << "</text>\n";
  for (std::size_t i = 0; i < m.row_count(); ++i)
    o << "<text x=\"" << num(left - 6) << "\" y=\"" << num(top + cell * (static_cast<double>(i) + 0.5) + 3)
      << "\" font-family=\"sans-serif\" font-size=\"9\" text-anchor=\"end\">" << m.rows[i] << "</text>\n";
  o << "<text x=\"" << num(left + cell * static_cast<double>(m.col_count()) / 2) << "\" y=\"" << num(grid_bottom + 40)
    << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">t1 (iterations)</text>\n";
  o << "<text x=\"16\" y=\"" << num(top + cell * static_cast<double>(m.row_count()) / 2)
    << "\" font-family=\"sans-serif\" font-size=\"11\">t0 (iterations)</text>\n";

  const double lx = left + cell * static_cast<double>(m.col_count()) + 30, lh = std::max(cell * 3, grid_bottom - top);
  o << "<g class=\"legend\" data-min=\"" << (any ? detail::format_double(lo) : "NA") << "\" data-max=\""
    << (any ? detail::format_double(hi) : "NA") << "\">\n";
  o << "<rect x=\"" << num(lx) << "\" y=\"" << num(top) << "\" width=\"16\" height=\"" << num(lh)
    << "\" fill=\"url(#scale)\"/>\n";
  o << "<text x=\"" << num(lx + 22) << "\" y=\"" << num(top + 8) << "\" font-family=\"sans-serif\" font-size=\"10\">max "
    << (any ? detail::format_double(hi) : "NA") << "</text>\n";
  o << "<text x=\"" << num(lx + 22) << "\" y=\"" << num(top + lh) << "\" font-family=\"sans-serif\" font-size=\"10\">min "
    << (any ? detail::format_double(lo) : "NA") << "</text>\n";
  o << "</g>\n</svg>\n";
  return o.str();
}

inline constexpr std::array<const char*, 8> kPalette = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                                         "#9467bd", "#8c564b", "#e377c2", "#17becf"};

inline std::string render_curves_svg(const std::vector<Curve>& curves, const std::string& title = {},
                                     const std::string& xlabel = "iteration", const std::string& ylabel = "value") {
  using namespace render_detail;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& c : curves)
    for (const auto& [x, y] : c.points) {
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  if (!(x0 <= x1)) throw InvalidArgument("cannot render curves without points");
  if (x1 == x0) {
    x0 -= 1;
    x1 += 1;
  }
  double ymid = 0.5 * (y0 + y1);
  if (y1 == y0) {
    ymid = y0;
    const double pad = std::max(std::abs(y0) * 0.1, 1e-3);
    y0 -= pad;
    y1 += pad;
  }
  const double left = 80, top = 40, pw = 480, ph = 300;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + ph - (y - y0) / (y1 - y0) * ph; };

  std::ostringstream o;
  o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"760\" height=\"400\" viewBox=\"0 0 760 400\">\n";
  o << "<!-- data\n";
  for (const auto& c : curves) {
    o << "curve," << comment_safe(c.label) << '\n';
    for (const auto& [x, y] : c.points) o << detail::format_double(x) << ',' << detail::format_double(y) << '\n';
  }
  o << "-->\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  o << "<text x=\"" << num(left) << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" << escape(title) << "</text>\n";
  o << "<rect x=\"" << num(left) << "\" y=\"" << num(top) << "\" width=\"" << num(pw) << "\" height=\"" << num(ph)
    << "\" fill=\"none\" stroke=\"#333333\"/>\n";
  for (double v : {y0, ymid, y1})
    o << "<text class=\"ytick\" data-value=\"" << detail::format_double(v) << "\" x=\"" << num(left - 6) << "\" y=\""
      << num(py(v) + 3) << "\" font-family=\"sans-serif\" font-size=\"9\" text-anchor=\"end\">"
      << detail::format_double(v) << "</text>\n";
  for (double v : {x0, x1})
    o << "<text class=\"xtick\" x=\"" << num(px(v)) << "\" y=\"" << num(top + ph + 14)
      << "\" font-family=\"sans-serif\" font-size=\"9\" text-anchor=\"middle\">" << detail::format_double(v) << "</text>\n";
  o << "<text x=\"" << num(left + pw / 2) << "\" y=\"" << num(top + ph + 34)
    << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">" << escape(xlabel) << "</text>\n";
  o << "<text x=\"12\" y=\"" << num(top + ph / 2) << "\" font-family=\"sans-serif\" font-size=\"11\">" << escape(ylabel)
    << "</text>\n";
  for (std::size_t k = 0; k < curves.size(); ++k) {
    const auto& c = curves[k];
    const char* color = kPalette[k % kPalette.size()];
    o << "<polyline class=\"curve\" data-label=\"" << escape(c.label) << "\" fill=\"none\" stroke=\"" << color
      << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < c.points.size(); ++i)
      o << (i ? " " : "") << num(px(c.points[i].first)) << ',' << num(py(c.points[i].second));
    o << "\"/>\n";
    const double ly = top + 14.0 * static_cast<double>(k) + 8;
    o << "<line x1=\"" << num(left + pw + 16) << "\" y1=\"" << num(ly) << "\" x2=\"" << num(left + pw + 36) << "\" y2=\""
      << num(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    o << "<text class=\"legend\" data-label=\"" << escape(c.label) << "\" x=\"" << num(left + pw + 40) << "\" y=\""
      << num(ly + 3) << "\" font-family=\"sans-serif\" font-size=\"10\">" << escape(c.label) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << text;
  if (!out) throw Error("write failed for " + path);
}

inline void render_heatmap(const MetricMatrix& m, const std::string& path, const std::string& title = {}) {
  write_text(path, render_heatmap_svg(m, title));
}

inline void render_curves(const std::vector<Curve>& curves, const std::string& path, const std::string& title = {},
                          const std::string& xlabel = "iteration", const std::string& ylabel = "value") {
  write_text(path, render_curves_svg(curves, title, xlabel, ylabel));
}

/// Embedding as a single polyline in trajectory order.
inline std::string render_embedding_svg(const EmbeddingResult& e, const std::string& title = {}) {
  Curve c{"trajectory", {}};
  for (const auto& p : e.coords) c.points.emplace_back(p[0], p[1]);
  return render_curves_svg({c}, title, "x", "y");
}

}  // namespace iscope
