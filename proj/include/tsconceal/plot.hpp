#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <optional>
#include <span>
#include <string>

#include "tsconceal/error.hpp"

namespace tsconceal {

namespace detail {

inline std::string xml_escape(const std::string& s) {
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

}  // namespace detail

/// Writes an SVG overlay of an original series and its attacked version.
/// With `truncate`, only the first that many points are drawn.
inline void emit_plot(std::span<const double> original, std::span<const double> attacked, const std::string& path,
                      std::optional<std::size_t> truncate = std::nullopt, const std::string& title = "") {
  if (original.size() != attacked.size()) throw ShapeError("emit_plot: series lengths differ");
  if (original.empty()) throw InvalidArgument("emit_plot: empty series");
  std::size_t n = original.size();
  if (truncate) {
    if (*truncate == 0) throw InvalidArgument("emit_plot: truncate must be positive");
    n = std::min(n, *truncate);
  }
  double lo = original[0], hi = original[0];
  for (std::size_t i = 0; i < n; ++i) {
    lo = std::min({lo, original[i], attacked[i]});
    hi = std::max({hi, original[i], attacked[i]});
  }
  if (hi - lo < 1e-12) {
    lo -= 1.0;
    hi += 1.0;
  }
  constexpr double W = 720, H = 360, left = 60, right = 20, top = 40, bottom = 50;
  const double pw = W - left - right, ph = H - top - bottom;
  auto px = [&](std::size_t i) { return left + (n == 1 ? 0.5 : static_cast<double>(i) / static_cast<double>(n - 1)) * pw; };
  auto py = [&](double v) { return top + (hi - v) / (hi - lo) * ph; };
  auto polyline = [&](std::span<const double> s, const char* colour, const char* dash) {
    std::string pts;
    char buf[64];
    for (std::size_t i = 0; i < n; ++i) {
      std::snprintf(buf, sizeof buf, "%s%.3f,%.3f", i ? " " : "", px(i), py(s[i]));
      pts += buf;
    }
    return "  <polyline fill=\"none\" stroke=\"" + std::string(colour) + "\" stroke-width=\"1.5\"" +
           (dash[0] ? " stroke-dasharray=\"" + std::string(dash) + "\"" : std::string()) + " points=\"" + pts +
           "\"/>\n";
  };

  std::ofstream out(path);
  if (!out) throw IoError("cannot write plot " + path);
  char buf[256];
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" viewBox=\"0 0 %.0f %.0f\">\n",
                W, H, W, H);
  out << buf;
  out << "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!title.empty()) {
    std::snprintf(buf, sizeof buf, "  <text x=\"%.1f\" y=\"24\" font-size=\"14\" text-anchor=\"middle\">", W / 2);
    out << buf << detail::xml_escape(title) << "</text>\n";
  }
  std::snprintf(buf, sizeof buf,
                "  <rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"none\" stroke=\"#444\"/>\n", left,
                top, pw, ph);
  out << buf;
  std::snprintf(buf, sizeof buf, "  <text x=\"%.1f\" y=\"%.1f\" font-size=\"12\" text-anchor=\"middle\">time step</text>\n",
                left + pw / 2, H - 12);
  out << buf;
  std::snprintf(buf, sizeof buf,
                "  <text x=\"16\" y=\"%.1f\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 %.1f)\">value</text>\n",
                top + ph / 2, top + ph / 2);
  out << buf;
  std::snprintf(buf, sizeof buf, "  <text x=\"%.1f\" y=\"%.1f\" font-size=\"10\" text-anchor=\"end\">%.3g</text>\n", left - 4,
                top + 4, hi);
  out << buf;
  std::snprintf(buf, sizeof buf, "  <text x=\"%.1f\" y=\"%.1f\" font-size=\"10\" text-anchor=\"end\">%.3g</text>\n", left - 4,
                top + ph, lo);
  out << buf;
  std::snprintf(buf, sizeof buf, "  <text x=\"%.1f\" y=\"%.1f\" font-size=\"10\" text-anchor=\"end\">%zu</text>\n", left + pw,
                top + ph + 14, n - 1);
  out << buf;
  out << polyline(original, "#1f77b4", "");
  out << polyline(attacked, "#d62728", "4 2");
  std::snprintf(buf, sizeof buf,
                "  <g font-size=\"12\">\n"
                "    <line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#1f77b4\" stroke-width=\"1.5\"/>\n"
                "    <text x=\"%.1f\" y=\"%.1f\">original</text>\n",
                left + pw - 150, top + 14, left + pw - 125, top + 14, left + pw - 120, top + 18);
  out << buf;
  std::snprintf(buf, sizeof buf,
                "    <line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#d62728\" stroke-width=\"1.5\" stroke-dasharray=\"4 2\"/>\n"
                "    <text x=\"%.1f\" y=\"%.1f\">attacked</text>\n  </g>\n",
                left + pw - 150, top + 32, left + pw - 125, top + 32, left + pw - 120, top + 36);
  out << buf;
  out << "</svg>\n";
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace tsconceal
