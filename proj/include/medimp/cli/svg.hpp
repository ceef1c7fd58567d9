#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace medimp {

struct ScatterPoint {
  double x = 0, y = 0;
  std::string category;
  bool augmented = false;
};

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

inline const std::vector<std::string>& scatter_palette() {
  static const std::vector<std::string> p{"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return p;
}

/// Standalone SVG scatter: a five-point star per real point, a circle per augmented
/// point, coloured by category in `category_order` (unlisted categories follow,
/// sorted). The legend uses swatches, so marker elements equal the point count.
inline std::string render_scatter_svg(const std::vector<ScatterPoint>& pts, const std::string& title,
                                      std::vector<std::string> category_order = {}) {
  for (const auto& p : pts)
    if (!std::isfinite(p.x) || !std::isfinite(p.y))
      throw std::invalid_argument("render_scatter_svg: non-finite coordinate");
  std::set<std::string> extra;
  for (const auto& p : pts)
    if (std::find(category_order.begin(), category_order.end(), p.category) == category_order.end())
      extra.insert(p.category);
  category_order.insert(category_order.end(), extra.begin(), extra.end());
  std::map<std::string, std::string> colour;
  for (std::size_t i = 0; i < category_order.size(); ++i)
    colour[category_order[i]] = scatter_palette()[i % scatter_palette().size()];

  const double w = 640, h = 520, plot = 440, left = 40, top = 50;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (!pts.empty()) {
    x0 = x1 = pts[0].x;
    y0 = y1 = pts[0].y;
    for (const auto& p : pts) {
      x0 = std::min(x0, p.x);
      x1 = std::max(x1, p.x);
      y0 = std::min(y0, p.y);
      y1 = std::max(y1, p.y);
    }
  }
  const double sx = x1 > x0 ? plot / (x1 - x0) : 0, sy = y1 > y0 ? plot / (y1 - y0) : 0;
  char buf[512];
  std::string out = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" viewBox=\"0 0 %.0f %.0f\">\n",
                w, h, w, h);
  out += buf;
  out += "<rect x=\"0\" y=\"0\" width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<text x=\"20\" y=\"28\" font-family=\"sans-serif\" font-size=\"16\">" + xml_escape(title) + "</text>\n";
  out += "<g id=\"markers\">\n";
  for (const auto& p : pts) {
    const double cx = left + (sx ? (p.x - x0) * sx : plot / 2);
    const double cy = top + plot - (sy ? (p.y - y0) * sy : plot / 2);
    const auto& fill = colour[p.category];
    if (p.augmented) {
      std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"3.5\" fill=\"%s\" fill-opacity=\"0.6\"/>\n",
                    cx, cy, fill.c_str());
    } else {
      std::string path;
      for (int k = 0; k < 10; ++k) {
        const double r = k % 2 ? 2.6 : 6.5, a = -std::numbers::pi / 2 + k * std::numbers::pi / 5;
        char pt[48];
        std::snprintf(pt, sizeof pt, "%s%.2f,%.2f", k ? " " : "", cx + r * std::cos(a), cy + r * std::sin(a));
        path += pt;
      }
      std::snprintf(buf, sizeof buf, "<polygon points=\"%s\" fill=\"%s\" stroke=\"black\" stroke-width=\"0.4\"/>\n",
                    path.c_str(), fill.c_str());
    }
    out += buf;
  }
  out += "</g>\n<g id=\"legend\" font-family=\"sans-serif\" font-size=\"12\">\n";
  for (std::size_t i = 0; i < category_order.size(); ++i) {
    const double ly = top + 10 + 20 * double(i);
    std::snprintf(buf, sizeof buf, "<rect x=\"500\" y=\"%.0f\" width=\"12\" height=\"12\" fill=\"%s\"/>\n", ly,
                  colour[category_order[i]].c_str());
    out += buf;
    std::snprintf(buf, sizeof buf, "<text x=\"518\" y=\"%.0f\">", ly + 10);
    out += buf;
    out += xml_escape(category_order[i]) + "</text>\n";
  }
  const double ly = top + 20 + 20 * double(category_order.size());
  std::snprintf(buf, sizeof buf, "<text x=\"500\" y=\"%.0f\">star: real</text>\n<text x=\"500\" y=\"%.0f\">circle: aug</text>\n",
                ly, ly + 18);
  out += buf;
  out += "</g>\n</svg>\n";
  return out;
}

}  // namespace medimp
