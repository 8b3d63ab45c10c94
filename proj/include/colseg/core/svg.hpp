#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "colseg/core/error.hpp"

namespace colseg {

inline std::string svg_escape(const std::string& s) {
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

// Labelled vertical bar chart; values are drawn to scale against max(values).
inline void write_bar_chart_svg(const std::filesystem::path& path, const std::string& title,
                                const std::vector<std::string>& labels, const std::vector<double>& values,
                                const std::string& y_label = "") {
  if (labels.size() != values.size()) throw InvalidArgument("bar chart: labels and values differ in length");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  const int bar = 48, gap = 16, left = 60, top = 40, plot_h = 220;
  const int width = left + static_cast<int>(values.size()) * (bar + gap) + gap;
  const int height = top + plot_h + 70;
  double vmax = 0.0;
  for (double v : values) vmax = std::max(vmax, v);
  char buf[64];
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << std::max(width, 240) << "\" height=\"" << height
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<text x=\"" << left << "\" y=\"20\" font-size=\"14\">" << svg_escape(title) << "</text>\n";
  if (!y_label.empty())
    os << "<text x=\"12\" y=\"" << top + plot_h / 2 << "\" transform=\"rotate(-90 12 " << top + plot_h / 2
       << ")\">" << svg_escape(y_label) << "</text>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << width << "\" y2=\"" << top + plot_h
     << "\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i < values.size(); ++i) {
    const int x = left + gap + static_cast<int>(i) * (bar + gap);
    const int h = vmax > 0 ? static_cast<int>(plot_h * values[i] / vmax + 0.5) : 0;
    os << "<rect x=\"" << x << "\" y=\"" << top + plot_h - h << "\" width=\"" << bar << "\" height=\"" << h
       << "\" fill=\"#4c78a8\"/>\n";
    std::snprintf(buf, sizeof buf, "%.4g", values[i]);
    os << "<text x=\"" << x + bar / 2 << "\" y=\"" << top + plot_h - h - 4 << "\" text-anchor=\"middle\">" << buf
       << "</text>\n";
    os << "<text x=\"" << x + bar / 2 << "\" y=\"" << top + plot_h + 16 << "\" text-anchor=\"middle\">"
       << svg_escape(labels[i]) << "</text>\n";
  }
  os << "</svg>\n";
}

}  // namespace colseg
