#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

namespace blindfold::svg {

inline std::string num(double v, int precision = 3) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
    return std::string(buf);
}

inline std::string escape(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    for (char c : text) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out.push_back(c);
        }
    }
    return out;
}

struct ScatterPoint {
    double x = 0.0;
    double y = 0.0;
};

// Scatter with an optional y = x reference diagonal. Output bytes are a pure
// function of the inputs.
inline std::string scatter_plot(const std::string& title, const std::string& xlabel,
                                const std::string& ylabel,
                                const std::vector<ScatterPoint>& points,
                                bool identity_diagonal = true) {
    const double width = 640, height = 520, margin = 70;
    double lo = -1.0, hi = 1.0;
    if (!points.empty()) {
        lo = points[0].x;
        hi = points[0].x;
        for (const auto& p : points) {
            lo = std::min({lo, p.x, p.y});
            hi = std::max({hi, p.x, p.y});
        }
    }
    if (hi - lo < 1e-9) {
        lo -= 1.0;
        hi += 1.0;
    }
    const double pad = 0.06 * (hi - lo);
    lo -= pad;
    hi += pad;
    const auto sx = [&](double v) {
        return margin + (v - lo) / (hi - lo) * (width - 2 * margin);
    };
    const auto sy = [&](double v) {
        return height - margin - (v - lo) / (hi - lo) * (height - 2 * margin);
    };

    std::string out;
    out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(width, 0) +
           "\" height=\"" + num(height, 0) + "\" viewBox=\"0 0 " + num(width, 0) + " " +
           num(height, 0) + "\">\n";
    out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out += "<text x=\"" + num(width / 2) + "\" y=\"28\" text-anchor=\"middle\" "
           "font-family=\"sans-serif\" font-size=\"16\">" + escape(title) + "</text>\n";

    // Axes.
    out += "<line x1=\"" + num(margin) + "\" y1=\"" + num(height - margin) + "\" x2=\"" +
           num(width - margin) + "\" y2=\"" + num(height - margin) +
           "\" stroke=\"black\"/>\n";
    out += "<line x1=\"" + num(margin) + "\" y1=\"" + num(margin) + "\" x2=\"" + num(margin) +
           "\" y2=\"" + num(height - margin) + "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double v = lo + (hi - lo) * i / 4.0;
        out += "<text x=\"" + num(sx(v)) + "\" y=\"" + num(height - margin + 20) +
               "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" +
               num(v, 2) + "</text>\n";
        out += "<text x=\"" + num(margin - 10) + "\" y=\"" + num(sy(v) + 4) +
               "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" +
               num(v, 2) + "</text>\n";
    }
    out += "<text x=\"" + num(width / 2) + "\" y=\"" + num(height - 18) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" +
           escape(xlabel) + "</text>\n";
    out += "<text x=\"20\" y=\"" + num(height / 2) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
           "transform=\"rotate(-90 20 " + num(height / 2) + ")\">" + escape(ylabel) +
           "</text>\n";

    if (identity_diagonal) {
        out += "<line x1=\"" + num(sx(lo)) + "\" y1=\"" + num(sy(lo)) + "\" x2=\"" +
               num(sx(hi)) + "\" y2=\"" + num(sy(hi)) +
               "\" stroke=\"gray\" stroke-dasharray=\"6,4\"/>\n";
    }
    for (const auto& p : points) {
        out += "<circle cx=\"" + num(sx(p.x)) + "\" cy=\"" + num(sy(p.y)) +
               "\" r=\"3.5\" fill=\"#1f6fb4\" fill-opacity=\"0.75\"/>\n";
    }
    out += "</svg>\n";
    return out;
}

struct Bar {
    std::string label;
    double value = 0.0;
    double se = 0.0;
    std::string stars;     // significance annotation above the whisker
    std::string color = "#5b8db8";
};

// Vertical bars with SE whiskers and significance stars; baseline at zero.
inline std::string bar_chart(const std::string& title, const std::string& ylabel,
                             const std::vector<Bar>& bars) {
    const double width = std::max(480.0, 130.0 + 90.0 * static_cast<double>(bars.size()));
    const double height = 460, margin = 70;
    double lo = 0.0, hi = 0.0;
    for (const auto& b : bars) {
        lo = std::min({lo, b.value - b.se, 0.0});
        hi = std::max({hi, b.value + b.se, 0.0});
    }
    if (hi - lo < 1e-9) {
        hi = lo + 1.0;
    }
    const double pad = 0.12 * (hi - lo);
    lo -= pad;
    hi += pad;
    const auto sy = [&](double v) {
        return height - margin - (v - lo) / (hi - lo) * (height - 2 * margin);
    };

    std::string out;
    out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(width, 0) +
           "\" height=\"" + num(height, 0) + "\" viewBox=\"0 0 " + num(width, 0) + " " +
           num(height, 0) + "\">\n";
    out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out += "<text x=\"" + num(width / 2) + "\" y=\"28\" text-anchor=\"middle\" "
           "font-family=\"sans-serif\" font-size=\"16\">" + escape(title) + "</text>\n";
    out += "<text x=\"20\" y=\"" + num(height / 2) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
           "transform=\"rotate(-90 20 " + num(height / 2) + ")\">" + escape(ylabel) +
           "</text>\n";
    for (int i = 0; i <= 4; ++i) {
        const double v = lo + (hi - lo) * i / 4.0;
        out += "<text x=\"" + num(margin - 8) + "\" y=\"" + num(sy(v) + 4) +
               "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" +
               num(v, 2) + "</text>\n";
    }
    // Zero baseline.
    out += "<line x1=\"" + num(margin) + "\" y1=\"" + num(sy(0.0)) + "\" x2=\"" +
           num(width - margin / 2) + "\" y2=\"" + num(sy(0.0)) + "\" stroke=\"black\"/>\n";

    const double slot = (width - 1.5 * margin) / std::max<size_t>(bars.size(), 1);
    const double bar_width = slot * 0.55;
    for (size_t i = 0; i < bars.size(); ++i) {
        const auto& b = bars[i];
        const double cx = margin + slot * (static_cast<double>(i) + 0.5);
        const double top = sy(std::max(b.value, 0.0));
        const double bottom = sy(std::min(b.value, 0.0));
        out += "<rect x=\"" + num(cx - bar_width / 2) + "\" y=\"" + num(top) + "\" width=\"" +
               num(bar_width) + "\" height=\"" + num(std::max(bottom - top, 0.5)) +
               "\" fill=\"" + b.color + "\"/>\n";
        if (b.se > 0.0) {
            const double w_lo = sy(b.value - b.se);
            const double w_hi = sy(b.value + b.se);
            out += "<line x1=\"" + num(cx) + "\" y1=\"" + num(w_hi) + "\" x2=\"" + num(cx) +
                   "\" y2=\"" + num(w_lo) + "\" stroke=\"black\"/>\n";
            out += "<line x1=\"" + num(cx - 5) + "\" y1=\"" + num(w_hi) + "\" x2=\"" +
                   num(cx + 5) + "\" y2=\"" + num(w_hi) + "\" stroke=\"black\"/>\n";
            out += "<line x1=\"" + num(cx - 5) + "\" y1=\"" + num(w_lo) + "\" x2=\"" +
                   num(cx + 5) + "\" y2=\"" + num(w_lo) + "\" stroke=\"black\"/>\n";
        }
        if (!b.stars.empty()) {
            const double star_y = std::min(sy(std::max(b.value + b.se, b.value)) - 8.0,
                                           sy(0.0) - 8.0);
            out += "<text x=\"" + num(cx) + "\" y=\"" + num(star_y) +
                   "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
                   "font-size=\"13\">" + escape(b.stars) + "</text>\n";
        }
        out += "<text x=\"" + num(cx) + "\" y=\"" + num(height - margin + 18) +
               "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" +
               escape(b.label) + "</text>\n";
    }
    out += "</svg>\n";
    return out;
}

} // namespace blindfold::svg
