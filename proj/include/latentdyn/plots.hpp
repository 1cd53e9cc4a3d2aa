#pragma once

// Minimal standalone SVG output for the CLI reports.

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "eval.hpp"

namespace latentdyn::plots {

namespace detail {

inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else if (c == '&') out += "&amp;";
        else out += c;
    }
    return out;
}

inline const char* palette(std::size_t i) {
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2"};
    return colors[i % 7];
}

} // namespace detail

/// t-SNE trajectory: points coloured by sub-task (gray outside blocks), consecutive frames joined.
inline std::string trajectory_svg(const std::vector<eval::TrajectoryPoint>& pts, const std::string& title) {
    const double W = 640, H = 640, pad = 40;
    double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (!pts.empty()) {
        auto [xa, xb] = std::minmax_element(pts.begin(), pts.end(), [](auto& a, auto& b) { return a.x < b.x; });
        auto [ya, yb] = std::minmax_element(pts.begin(), pts.end(), [](auto& a, auto& b) { return a.y < b.y; });
        x0 = xa->x, x1 = std::max(xb->x, x0 + 1e-9), y0 = ya->y, y1 = std::max(yb->y, y0 + 1e-9);
    }
    auto sx = [&](double x) { return pad + (x - x0) / (x1 - x0) * (W - 2 * pad); };
    auto sy = [&](double y) { return H - pad - (y - y0) / (y1 - y0) * (H - 2 * pad); };
    std::map<std::string, std::size_t> colors;
    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << pad << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" << detail::escape(title)
      << "</text>\n";
    if (pts.size() > 1) {
        o << "<polyline fill=\"none\" stroke=\"#bbbbbb\" stroke-width=\"0.6\" points=\"";
        for (const auto& p : pts) o << detail::num(sx(p.x)) << ',' << detail::num(sy(p.y)) << ' ';
        o << "\"/>\n";
    }
    for (const auto& p : pts) {
        std::string fill = "#888888";
        if (p.label != "none") {
            auto it = colors.emplace(p.label, colors.size()).first;
            fill = detail::palette(it->second);
        }
        o << "<circle cx=\"" << detail::num(sx(p.x)) << "\" cy=\"" << detail::num(sy(p.y)) << "\" r=\"4\" fill=\""
          << fill << "\" fill-opacity=\"" << detail::num(p.opacity) << "\"/>\n";
    }
    double ly = 44;
    for (const auto& [name, idx] : colors) {
        o << "<rect x=\"" << W - 150 << "\" y=\"" << ly - 9 << "\" width=\"10\" height=\"10\" fill=\""
          << detail::palette(idx) << "\"/><text x=\"" << W - 135 << "\" y=\"" << ly
          << "\" font-family=\"sans-serif\" font-size=\"11\">" << detail::escape(name) << "</text>\n";
        ly += 16;
    }
    o << "</svg>\n";
    return o.str();
}

/// Bar chart of the best |r| per sub-task.
inline std::string subtask_bars_svg(const eval::SubtaskScores& s, const std::vector<std::string>& names,
                                    const std::string& title) {
    const double W = 520, H = 300, pad = 40;
    const std::size_t n = s.best_abs_corr.size();
    const double bw = n ? (W - 2 * pad) / static_cast<double>(n) : 0;
    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << pad << "\" y=\"22\" font-family=\"sans-serif\" font-size=\"14\">" << detail::escape(title)
      << " (mean " << detail::num(s.mean_abs_corr) << ")</text>\n";
    o << "<line x1=\"" << pad << "\" y1=\"" << H - pad << "\" x2=\"" << W - pad << "\" y2=\"" << H - pad
      << "\" stroke=\"black\"/>\n";
    for (std::size_t i = 0; i < n; ++i) {
        const double h = s.best_abs_corr[i] * (H - 2 * pad - 10);
        const double x = pad + bw * static_cast<double>(i) + bw * 0.15;
        o << "<rect x=\"" << detail::num(x) << "\" y=\"" << detail::num(H - pad - h) << "\" width=\""
          << detail::num(bw * 0.7) << "\" height=\"" << detail::num(h) << "\" fill=\"" << detail::palette(i)
          << "\"/>\n";
        o << "<text x=\"" << detail::num(x) << "\" y=\"" << H - pad + 14 << "\" font-family=\"sans-serif\" font-size=\"10\">"
          << detail::escape(i < names.size() ? names[i] : std::to_string(i)) << " f" << s.best_factor[i] << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

/// Labelled bars with values in [0, 1], e.g. mean |r| per beta.
inline std::string bars_svg(const std::vector<std::string>& labels, const std::vector<double>& values,
                            const std::string& title) {
    const double W = 60.0 + 56.0 * static_cast<double>(values.size()), H = 300, pad = 40;
    const double bw = 56.0;
    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << pad << "\" y=\"22\" font-family=\"sans-serif\" font-size=\"14\">" << detail::escape(title)
      << "</text>\n";
    o << "<line x1=\"" << pad << "\" y1=\"" << H - pad << "\" x2=\"" << W - 10 << "\" y2=\"" << H - pad
      << "\" stroke=\"black\"/>\n";
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double h = std::clamp(values[i], 0.0, 1.0) * (H - 2 * pad - 10);
        const double x = pad + bw * static_cast<double>(i) + 6;
        o << "<rect x=\"" << detail::num(x) << "\" y=\"" << detail::num(H - pad - h) << "\" width=\"" << bw - 12
          << "\" height=\"" << detail::num(h) << "\" fill=\"" << detail::palette(0) << "\"/>\n";
        o << "<text x=\"" << detail::num(x) << "\" y=\"" << detail::num(H - pad - h - 4)
          << "\" font-family=\"sans-serif\" font-size=\"10\">" << detail::num(values[i]) << "</text>\n";
        o << "<text x=\"" << detail::num(x) << "\" y=\"" << H - pad + 14 << "\" font-family=\"sans-serif\" font-size=\"9\">"
          << detail::escape(i < labels.size() ? labels[i] : std::to_string(i)) << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

} // namespace latentdyn::plots
