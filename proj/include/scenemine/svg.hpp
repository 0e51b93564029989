#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "scenemine/common.hpp"
#include "scenemine/miner.hpp"

namespace scenemine::svg {

// All coordinates are emitted with fixed precision so equal inputs yield
// byte-identical documents.

inline std::string num(double v) { return format_fixed(v, 2); }

inline std::string rgb(int r, int g, int b) {
    return "rgb(" + std::to_string(r) + "," + std::to_string(g) + "," + std::to_string(b) + ")";
}

class Document {
public:
    Document(double width, double height, const std::string& config_hash = "") : w_(width), h_(height) {
        body_ += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
        if (!config_hash.empty()) body_ += "<!-- config_hash=" + config_hash + " -->\n";
        body_ += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(w_) + "\" height=\"" + num(h_) +
                 "\" viewBox=\"0 0 " + num(w_) + " " + num(h_) + "\">\n";
    }

    void rect(double x, double y, double w, double h, const std::string& fill) {
        body_ += "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(w) + "\" height=\"" + num(h) +
                 "\" fill=\"" + fill + "\"/>\n";
    }

    void line(double x1, double y1, double x2, double y2, const std::string& stroke, double width = 1.0) {
        body_ += "<line x1=\"" + num(x1) + "\" y1=\"" + num(y1) + "\" x2=\"" + num(x2) + "\" y2=\"" + num(y2) +
                 "\" stroke=\"" + stroke + "\" stroke-width=\"" + num(width) + "\"/>\n";
    }

    void circle(double cx, double cy, double r, const std::string& fill) {
        body_ += "<circle cx=\"" + num(cx) + "\" cy=\"" + num(cy) + "\" r=\"" + num(r) + "\" fill=\"" + fill +
                 "\"/>\n";
    }

    void polyline(const std::vector<Vec2>& pts, const std::string& stroke, double width) {
        body_ += "<polyline fill=\"none\" stroke=\"" + stroke + "\" stroke-width=\"" + num(width) + "\" points=\"";
        for (std::size_t i = 0; i < pts.size(); ++i) {
            if (i) body_ += " ";
            body_ += num(pts[i].x) + "," + num(pts[i].y);
        }
        body_ += "\"/>\n";
    }

    void text(double x, double y, const std::string& s, int size = 12, const std::string& fill = "black") {
        body_ += "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" font-family=\"sans-serif\" font-size=\"" +
                 std::to_string(size) + "\" fill=\"" + fill + "\">" + escape(s) + "</text>\n";
    }

    std::string finish() {
        return body_ + "</svg>\n";
    }

private:
    static std::string escape(const std::string& s) {
        std::string out;
        for (char c : s) {
            switch (c) {
                case '&': out += "&amp;"; break;
                case '<': out += "&lt;"; break;
                case '>': out += "&gt;"; break;
                default: out += c;
            }
        }
        return out;
    }

    double w_, h_;
    std::string body_;
};

/// Relative-frequency bar chart with red bound lines at the trained attention
/// limits.
inline std::string histogram_chart(const std::vector<double>& freqs, double lo, double hi, double bound_lo,
                                   double bound_hi, const std::string& config_hash = "") {
    const double width = 640, height = 400;
    const double ml = 60, mr = 20, mt = 20, mb = 45;
    const double pw = width - ml - mr, ph = height - mt - mb;
    Document doc(width, height, config_hash);
    doc.rect(0, 0, width, height, "white");

    double fmax = 0.0;
    for (double f : freqs) fmax = std::max(fmax, f);
    if (fmax <= 0.0) fmax = 1.0;
    const double ymax = fmax * 1.15;

    auto x_of = [&](double v) { return ml + (v - lo) / (hi - lo) * pw; };
    auto y_of = [&](double f) { return mt + ph - f / ymax * ph; };

    const double bin_w = (hi - lo) / static_cast<double>(freqs.size());
    for (std::size_t i = 0; i < freqs.size(); ++i) {
        const double x = x_of(lo + static_cast<double>(i) * bin_w);
        doc.rect(x, y_of(freqs[i]), pw / static_cast<double>(freqs.size()) - 0.5, ph + mt - y_of(freqs[i]),
                 rgb(70, 110, 180));
    }
    // Axes and ticks.
    doc.line(ml, mt + ph, ml + pw, mt + ph, "black");
    doc.line(ml, mt, ml, mt + ph, "black");
    for (int i = 0; i <= 8; ++i) {
        const double v = lo + (hi - lo) * i / 8.0;
        doc.line(x_of(v), mt + ph, x_of(v), mt + ph + 4, "black");
        doc.text(x_of(v) - 12, mt + ph + 18, format_fixed(v, 2), 11);
    }
    for (int i = 0; i <= 4; ++i) {
        const double f = ymax * i / 4.0;
        doc.line(ml - 4, y_of(f), ml, y_of(f), "black");
        doc.text(8, y_of(f) + 4, format_fixed(f, 3), 11);
    }
    // Trained attention bounds.
    doc.line(x_of(bound_lo), mt, x_of(bound_lo), mt + ph, "red", 1.5);
    doc.line(x_of(bound_hi), mt, x_of(bound_hi), mt + ph, "red", 1.5);
    doc.text(ml + pw / 2 - 60, height - 10, "graph attention", 12);
    doc.text(8, 14, "relative frequency", 12);
    return doc.finish();
}

inline std::string scatter_chart(const std::vector<double>& xs, const std::vector<double>& ys,
                                 const std::string& xlabel, const std::string& ylabel,
                                 const std::string& config_hash = "") {
    const double width = 560, height = 420;
    const double ml = 60, mr = 20, mt = 20, mb = 45;
    const double pw = width - ml - mr, ph = height - mt - mb;
    Document doc(width, height, config_hash);
    doc.rect(0, 0, width, height, "white");

    double xmin = 0.0, xmax = 1.0, ymin = 0.0, ymax = 1.0;
    if (!xs.empty()) {
        xmin = *std::min_element(xs.begin(), xs.end());
        xmax = *std::max_element(xs.begin(), xs.end());
        ymin = *std::min_element(ys.begin(), ys.end());
        ymax = *std::max_element(ys.begin(), ys.end());
        if (xmax - xmin < 1e-9) xmax = xmin + 1.0;
        if (ymax - ymin < 1e-9) ymax = ymin + 1.0;
        const double px = (xmax - xmin) * 0.05, py = (ymax - ymin) * 0.05;
        xmin -= px;
        xmax += px;
        ymin -= py;
        ymax += py;
    }
    auto x_of = [&](double v) { return ml + (v - xmin) / (xmax - xmin) * pw; };
    auto y_of = [&](double v) { return mt + ph - (v - ymin) / (ymax - ymin) * ph; };

    doc.line(ml, mt + ph, ml + pw, mt + ph, "black");
    doc.line(ml, mt, ml, mt + ph, "black");
    for (int i = 0; i <= 5; ++i) {
        const double vx = xmin + (xmax - xmin) * i / 5.0;
        const double vy = ymin + (ymax - ymin) * i / 5.0;
        doc.line(x_of(vx), mt + ph, x_of(vx), mt + ph + 4, "black");
        doc.text(x_of(vx) - 14, mt + ph + 18, format_fixed(vx, 2), 11);
        doc.line(ml - 4, y_of(vy), ml, y_of(vy), "black");
        doc.text(8, y_of(vy) + 4, format_fixed(vy, 2), 11);
    }
    for (std::size_t i = 0; i < xs.size(); ++i) {
        doc.circle(x_of(xs[i]), y_of(ys[i]), 2.0, rgb(30, 90, 170));
    }
    doc.text(ml + pw / 2 - 30, height - 10, xlabel, 12);
    doc.text(8, 14, ylabel, 12);
    return doc.finish();
}

/// Fan plot of one attention sweep: trajectories colored from blue (image
/// only) to green (graph only), ground truth in white on a dark background.
inline std::string sweep_chart(const AttentionSweep& sweep, const std::vector<Vec2>& truth,
                               const std::string& config_hash = "") {
    const double width = 480, height = 480;
    const double margin = 30;
    Document doc(width, height, config_hash);
    doc.rect(0, 0, width, height, rgb(20, 20, 28));

    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    auto grow = [&](const std::vector<Vec2>& pts) {
        for (const auto& p : pts) {
            xmin = std::min(xmin, p.x);
            xmax = std::max(xmax, p.x);
            ymin = std::min(ymin, p.y);
            ymax = std::max(ymax, p.y);
        }
    };
    for (const auto& t : sweep.trajectories) grow(t);
    grow(truth);
    if (xmax - xmin < 1.0) xmax = xmin + 1.0;
    if (ymax - ymin < 1.0) ymax = ymin + 1.0;
    const double scale = std::min((width - 2 * margin) / (xmax - xmin), (height - 2 * margin) / (ymax - ymin));
    auto map = [&](Vec2 p) {
        return Vec2{margin + (p.x - xmin) * scale, height - margin - (p.y - ymin) * scale};
    };

    for (std::size_t i = 0; i < sweep.trajectories.size(); ++i) {
        const double a = sweep.alphas[i];  // 0 = image (blue), 1 = graph (green)
        const int r = static_cast<int>(std::lround(40.0 * (1.0 - a)));
        const int g = static_cast<int>(std::lround(90.0 + a * 100.0));
        const int b = static_cast<int>(std::lround(255.0 * (1.0 - a) + 60.0 * a));
        std::vector<Vec2> pts;
        pts.reserve(sweep.trajectories[i].size());
        for (const auto& p : sweep.trajectories[i]) pts.push_back(map(p));
        doc.polyline(pts, rgb(r, g, b), 1.0);
    }
    std::vector<Vec2> tp;
    tp.reserve(truth.size());
    for (const auto& p : truth) tp.push_back(map(p));
    doc.polyline(tp, "white", 2.0);
    doc.text(10, 16, "sweep " + sweep.sample_id, 12, "white");
    return doc.finish();
}

}  // namespace scenemine::svg
