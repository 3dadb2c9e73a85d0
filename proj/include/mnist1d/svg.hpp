#pragma once
// Dependency-free SVG line charts with byte-deterministic output.
//
// Fixed 800x500 canvas; all coordinates printed with two decimals. Series
// colors follow the per-arch cycle below (the matplotlib "tab10" order).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

namespace mnist1d {

inline constexpr int kSvgWidth = 800;
inline constexpr int kSvgHeight = 500;

inline constexpr std::array<std::string_view, 10> kColorCycle = {
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

/// logreg, mlp, cnn, gru, resnet, tcn, dcnn take cycle entries 0..6.
inline std::string_view arch_color(std::string_view arch) {
  constexpr std::array<std::string_view, 7> order = {"logreg", "mlp", "cnn", "gru", "resnet", "tcn", "dcnn"};
  for (std::size_t i = 0; i < order.size(); ++i)
    if (order[i] == arch) return kColorCycle[i];
  return kColorCycle[7];
}

struct Series {
  std::string name;
  std::string color;
  std::vector<std::pair<double, double>> points;
  std::vector<double> errors;  // optional symmetric y error bars, one per point
};

struct HLine {
  double y;
  std::string label;
  std::string color = "#555555";
};

struct LineChart {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool x_log = false;
  std::optional<std::pair<double, double>> y_range;  // auto from data when empty
  std::vector<Series> series;
  std::vector<HLine> hlines;
  std::string metadata;  // embedded verbatim (escaped) in <metadata>
  bool markers = true;
};

namespace detail {

inline std::string fmt2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  std::string s(buf);
  return s == "-0.00" ? "0.00" : s;
}

inline std::string xml_escape(std::string_view s) {
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

/// Tick label: integers plain, otherwise up to 3 significant digits.
inline std::string tick_label(double v) {
  char buf[64];
  if (std::abs(v - std::round(v)) < 1e-9 && std::abs(v) < 1e15)
    std::snprintf(buf, sizeof buf, "%.0f", v);
  else
    std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

/// Roughly five round-number ticks covering [lo, hi].
inline std::vector<double> nice_ticks(double lo, double hi) {
  const double span = hi - lo;
  if (!(span > 0)) return {lo};
  const double raw = span / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0})
    if (raw <= m * mag + 1e-12) {
      step = m * mag;
      break;
    }
  std::vector<double> t;
  for (double v = std::ceil(lo / step - 1e-9) * step; v <= hi + 1e-9 * step; v += step)
    t.push_back(std::abs(v) < 1e-12 * step ? 0.0 : v);
  return t;
}

}  // namespace detail

inline std::string render_svg(const LineChart& c) {
  using detail::fmt2;
  const double left = 70, right = 170, top = 40, bottom = 60;
  const double pw = kSvgWidth - left - right, ph = kSvgHeight - top - bottom;

  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const auto& s : c.series)
    for (std::size_t i = 0; i < s.points.size(); ++i) {
      const auto [x, y] = s.points[i];
      const double e = i < s.errors.size() ? s.errors[i] : 0.0;
      xmin = std::min(xmin, x), xmax = std::max(xmax, x);
      ymin = std::min(ymin, y - e), ymax = std::max(ymax, y + e);
    }
  for (const auto& h : c.hlines) ymin = std::min(ymin, h.y), ymax = std::max(ymax, h.y);
  if (!std::isfinite(xmin)) throw std::invalid_argument("render_svg: no data");
  if (c.x_log && xmin <= 0) throw std::invalid_argument("render_svg: log axis needs positive x");
  if (c.y_range) std::tie(ymin, ymax) = *c.y_range;
  if (xmax == xmin) xmin -= 0.5, xmax += 0.5;
  if (ymax == ymin) ymin -= 0.5, ymax += 0.5;

  const auto tx = [&](double x) {
    return c.x_log ? (std::log10(x) - std::log10(xmin)) / (std::log10(xmax) - std::log10(xmin))
                   : (x - xmin) / (xmax - xmin);
  };
  const auto px = [&](double x) { return left + pw * tx(x); };
  const auto py = [&](double y) { return top + ph * (1.0 - (y - ymin) / (ymax - ymin)); };

  std::string o;
  o += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  o += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(kSvgWidth) + "\" height=\"" +
       std::to_string(kSvgHeight) + "\" viewBox=\"0 0 " + std::to_string(kSvgWidth) + " " +
       std::to_string(kSvgHeight) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  if (!c.metadata.empty()) o += "<metadata>" + detail::xml_escape(c.metadata) + "</metadata>\n";
  o += "<rect x=\"0\" y=\"0\" width=\"" + std::to_string(kSvgWidth) + "\" height=\"" +
       std::to_string(kSvgHeight) + "\" fill=\"#ffffff\"/>\n";
  o += "<text x=\"" + fmt2(left + pw / 2) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" +
       detail::xml_escape(c.title) + "</text>\n";

  // Grid and ticks.
  std::vector<double> xt;
  if (c.x_log) {
    std::vector<double> xs;
    for (const auto& s : c.series)
      for (const auto& p : s.points) xs.push_back(p.first);
    std::sort(xs.begin(), xs.end());
    xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
    xt = xs.size() <= 8 ? xs : std::vector<double>{};
    if (xt.empty())
      for (double d = std::ceil(std::log10(xmin)); d <= std::floor(std::log10(xmax)); d += 1) xt.push_back(std::pow(10, d));
  } else {
    xt = detail::nice_ticks(xmin, xmax);
  }
  for (double v : xt) {
    const double x = px(v);
    o += "<line x1=\"" + fmt2(x) + "\" y1=\"" + fmt2(top) + "\" x2=\"" + fmt2(x) + "\" y2=\"" + fmt2(top + ph) +
         "\" stroke=\"#e0e0e0\"/>\n";
    o += "<text x=\"" + fmt2(x) + "\" y=\"" + fmt2(top + ph + 18) + "\" text-anchor=\"middle\">" +
         detail::tick_label(v) + "</text>\n";
  }
  for (double v : detail::nice_ticks(ymin, ymax)) {
    const double y = py(v);
    o += "<line x1=\"" + fmt2(left) + "\" y1=\"" + fmt2(y) + "\" x2=\"" + fmt2(left + pw) + "\" y2=\"" + fmt2(y) +
         "\" stroke=\"#e0e0e0\"/>\n";
    o += "<text x=\"" + fmt2(left - 8) + "\" y=\"" + fmt2(y + 4) + "\" text-anchor=\"end\">" +
         detail::tick_label(v) + "</text>\n";
  }
  o += "<rect x=\"" + fmt2(left) + "\" y=\"" + fmt2(top) + "\" width=\"" + fmt2(pw) + "\" height=\"" + fmt2(ph) +
       "\" fill=\"none\" stroke=\"#000000\"/>\n";
  o += "<text x=\"" + fmt2(left + pw / 2) + "\" y=\"" + fmt2(kSvgHeight - 16.0) + "\" text-anchor=\"middle\">" +
       detail::xml_escape(c.x_label) + "</text>\n";
  o += "<text x=\"18\" y=\"" + fmt2(top + ph / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " +
       fmt2(top + ph / 2) + ")\">" + detail::xml_escape(c.y_label) + "</text>\n";

  for (const auto& h : c.hlines) {
    const double y = py(h.y);
    o += "<line x1=\"" + fmt2(left) + "\" y1=\"" + fmt2(y) + "\" x2=\"" + fmt2(left + pw) + "\" y2=\"" + fmt2(y) +
         "\" stroke=\"" + h.color + "\" stroke-dasharray=\"6 4\"/>\n";
    o += "<text x=\"" + fmt2(left + pw - 4) + "\" y=\"" + fmt2(y - 5) + "\" text-anchor=\"end\" fill=\"" + h.color +
         "\">" + detail::xml_escape(h.label) + "</text>\n";
  }

  for (const auto& s : c.series) {
    if (s.points.empty()) continue;
    std::string pts;
    for (const auto& [x, y] : s.points) pts += (pts.empty() ? "" : " ") + fmt2(px(x)) + "," + fmt2(py(y));
    o += "<polyline fill=\"none\" stroke=\"" + s.color + "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
    for (std::size_t i = 0; i < s.points.size(); ++i) {
      const auto [x, y] = s.points[i];
      if (i < s.errors.size() && s.errors[i] > 0) {
        o += "<line x1=\"" + fmt2(px(x)) + "\" y1=\"" + fmt2(py(y - s.errors[i])) + "\" x2=\"" + fmt2(px(x)) +
             "\" y2=\"" + fmt2(py(y + s.errors[i])) + "\" stroke=\"" + s.color + "\"/>\n";
      }
      if (c.markers)
        o += "<circle cx=\"" + fmt2(px(x)) + "\" cy=\"" + fmt2(py(y)) + "\" r=\"3\" fill=\"" + s.color + "\"/>\n";
    }
  }

  // Legend.
  double ly = top + 10;
  for (const auto& s : c.series) {
    const double lx = left + pw + 15;
    o += "<line x1=\"" + fmt2(lx) + "\" y1=\"" + fmt2(ly) + "\" x2=\"" + fmt2(lx + 20) + "\" y2=\"" + fmt2(ly) +
         "\" stroke=\"" + s.color + "\" stroke-width=\"2\"/>\n";
    o += "<text x=\"" + fmt2(lx + 26) + "\" y=\"" + fmt2(ly + 4) + "\">" + detail::xml_escape(s.name) + "</text>\n";
    ly += 18;
  }
  o += "</svg>\n";
  return o;
}

}  // namespace mnist1d
