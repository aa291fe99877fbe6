#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace spos {

struct SvgSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

namespace svg_detail {

inline std::string escape(const std::string& s) {
  std::string out;
  for (const char c : s) {
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

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace svg_detail

// Minimal line chart: polyline per series, linear or log10 y-axis, legend in
// config order. The CSV written alongside is the ground truth; this is a
// quick-look rendering.
inline void write_line_chart(const std::string& path, const std::string& title,
                             const std::string& x_label, const std::string& y_label,
                             const std::vector<SvgSeries>& series, bool log_y = false) {
  if (series.empty()) throw std::invalid_argument("write_line_chart: no series");

  const double width = 880, height = 560;
  const double ml = 86, mr = 24, mt = 46, mb = 62;
  const double pw = width - ml - mr, ph = height - mt - mb;

  double x_min = std::numeric_limits<double>::infinity(), x_max = -x_min;
  double y_min = x_min, y_max = -x_min;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size())
      throw std::invalid_argument("write_line_chart: x/y size mismatch in '" + s.label + "'");
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i]))
        throw std::invalid_argument("write_line_chart: non-finite coordinate in '" + s.label + "'");
      if (log_y && s.y[i] <= 0.0)
        throw std::invalid_argument("write_line_chart: log scale requires positive y values");
      const double yv = log_y ? std::log10(s.y[i]) : s.y[i];
      x_min = std::min(x_min, s.x[i]);
      x_max = std::max(x_max, s.x[i]);
      y_min = std::min(y_min, yv);
      y_max = std::max(y_max, yv);
    }
  }
  if (!(x_max >= x_min) || !(y_max >= y_min))
    throw std::invalid_argument("write_line_chart: empty series data");
  if (x_max == x_min) {
    x_min -= 0.5;
    x_max += 0.5;
  }
  if (y_max == y_min) {
    y_min -= 0.5;
    y_max += 0.5;
  }

  auto sx = [&](double x) { return ml + (x - x_min) / (x_max - x_min) * pw; };
  auto sy = [&](double y) {
    const double v = log_y ? std::log10(y) : y;
    return mt + (1.0 - (v - y_min) / (y_max - y_min)) * ph;
  };

  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                  "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f"};
  constexpr int n_colors = 8;

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  out << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height
      << "\" fill=\"white\"/>\n";
  out << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\" "
      << "font-family=\"sans-serif\">" << svg_detail::escape(title) << "</text>\n";

  // axes and ticks
  out << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#333\"/>\n";
  const int n_ticks = 5;
  for (int t = 0; t < n_ticks; ++t) {
    const double fx = x_min + (x_max - x_min) * t / (n_ticks - 1);
    const double px = sx(fx);
    out << "<line x1=\"" << px << "\" y1=\"" << mt + ph << "\" x2=\"" << px << "\" y2=\""
        << mt + ph + 5 << "\" stroke=\"#333\"/>\n";
    out << "<text x=\"" << px << "\" y=\"" << mt + ph + 20
        << "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">"
        << svg_detail::fmt(fx) << "</text>\n";
    const double fv = y_min + (y_max - y_min) * t / (n_ticks - 1);
    const double py = mt + (1.0 - double(t) / (n_ticks - 1)) * ph;
    out << "<line x1=\"" << ml - 5 << "\" y1=\"" << py << "\" x2=\"" << ml << "\" y2=\"" << py
        << "\" stroke=\"#333\"/>\n";
    out << "<text x=\"" << ml - 8 << "\" y=\"" << py + 4
        << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">"
        << svg_detail::fmt(log_y ? std::pow(10.0, fv) : fv) << "</text>\n";
  }
  out << "<text x=\"" << ml + pw / 2 << "\" y=\"" << height - 14
      << "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\">"
      << svg_detail::escape(x_label) << "</text>\n";
  out << "<text x=\"18\" y=\"" << mt + ph / 2
      << "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\" "
      << "transform=\"rotate(-90 18 " << mt + ph / 2 << ")\">" << svg_detail::escape(y_label)
      << "</text>\n";

  for (size_t s = 0; s < series.size(); ++s) {
    const char* color = palette[s % n_colors];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.6\" points=\"";
    for (size_t i = 0; i < series[s].x.size(); ++i) {
      if (i) out << ' ';
      out << svg_detail::fmt(sx(series[s].x[i])) << ',' << svg_detail::fmt(sy(series[s].y[i]));
    }
    out << "\"/>\n";
    const double ly = mt + 16 + 18 * static_cast<double>(s);
    out << "<line x1=\"" << ml + pw - 150 << "\" y1=\"" << ly << "\" x2=\"" << ml + pw - 120
        << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << ml + pw - 114 << "\" y=\"" << ly + 4
        << "\" font-size=\"12\" font-family=\"sans-serif\">" << svg_detail::escape(series[s].label)
        << "</text>\n";
  }
  out << "</svg>\n";

  std::ofstream file(path);
  if (!file) throw std::runtime_error("write_line_chart: cannot open '" + path + "'");
  file << out.str();
}

}  // namespace spos
