#pragma once

#include <algorithm>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "scenemine/dataset.hpp"
#include "scenemine/metrics.hpp"
#include "scenemine/model.hpp"

namespace scenemine {

/// Per-sample interactivity record: attention split, path curvature, and
/// prediction errors.
struct SceneScore {
    std::string sample_id;
    std::string family;       // empty when unknown
    double alpha_g = 0.0;
    double alpha_i = 0.0;
    double kappa = 0.0;       // normalized curvature of the ground-truth future path
    double kappa_pred = 0.0;  // same measure on the best predicted path
    double ade = 0.0;         // min over modes
    double fde = 0.0;
};

/// Total signed heading change along the path divided by pi, clamped to
/// [0, 1]: 0 is straight, 1 a U-turn. Segments under 5 cm are skipped for
/// heading estimation.
inline double normalized_curvature(const std::vector<Vec2>& path) {
    if (path.size() < 3) throw InputError("normalized_curvature: need at least 3 points");
    constexpr double kMinSegment = 0.05;
    std::vector<double> headings;
    Vec2 prev = path.front();
    for (std::size_t i = 1; i < path.size(); ++i) {
        const Vec2 seg = path[i] - prev;
        if (seg.norm() < kMinSegment) continue;
        headings.push_back(std::atan2(seg.y, seg.x));
        prev = path[i];
    }
    if (headings.size() < 2) return 0.0;
    double total = 0.0;
    for (std::size_t i = 1; i < headings.size(); ++i) total += wrap_angle(headings[i] - headings[i - 1]);
    return std::min(1.0, std::abs(total) / M_PI);
}

/// Standard Pearson correlation coefficient.
inline double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.size() < 2) throw InputError("pearson: need two equal-length series, n >= 2");
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double dx = xs[i] - mx, dy = ys[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx <= 0.0 || syy <= 0.0) throw InputError("pearson: undefined correlation for zero-variance input");
    return sxy / std::sqrt(sxx * syy);
}

/// Relative frequencies over fixed-width bins spanning [lo, hi]; out-of-range
/// values are dropped, the upper edge falls into the last bin.
inline std::vector<double> histogram(const std::vector<double>& values, double bin_width = 0.02, double lo = 0.1,
                                     double hi = 0.9) {
    if (bin_width <= 0.0 || hi <= lo) throw ConfigError("histogram: bad binning");
    const int n_bins = static_cast<int>(std::ceil((hi - lo) / bin_width - 1e-9));
    std::vector<double> freq(static_cast<std::size_t>(n_bins), 0.0);
    std::size_t in_range = 0;
    for (double v : values) {
        if (v < lo || v > hi) continue;
        int bin = static_cast<int>((v - lo) / bin_width);
        bin = std::min(bin, n_bins - 1);
        freq[static_cast<std::size_t>(bin)] += 1.0;
        ++in_range;
    }
    if (in_range > 0) {
        for (auto& f : freq) f /= static_cast<double>(in_range);
    }
    return freq;
}

/// Scores every sample with a single deterministic forward pass.
inline std::vector<SceneScore> score_dataset(const HybridModel& model, const std::vector<Sample>& samples,
                                             const std::vector<std::size_t>* indices = nullptr) {
    std::vector<std::size_t> all;
    if (!indices) {
        all.resize(samples.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        indices = &all;
    }
    std::vector<SceneScore> out;
    out.reserve(indices->size());
    for (std::size_t i : *indices) {
        const Sample& s = samples[i];
        const auto pred = model.predict(s);
        SceneScore sc;
        sc.sample_id = s.id();
        sc.family = s.family;
        sc.alpha_g = pred.alpha_g;
        sc.alpha_i = pred.alpha_i;

        std::vector<Vec2> truth_path = {s.start.position()};
        truth_path.insert(truth_path.end(), s.truth_positions.begin(), s.truth_positions.end());
        sc.kappa = normalized_curvature(truth_path);

        double best_ade = std::numeric_limits<double>::infinity();
        double best_fde = 0.0;
        std::vector<Vec2> best_path;
        for (const auto& mode : pred.modes) {
            const auto path = integrate_trajectory(mode, s.start);
            const double a = ade(path, s.truth_positions);
            if (a < best_ade) {
                best_ade = a;
                best_fde = fde(path, s.truth_positions);
                best_path = path;
            }
        }
        sc.ade = best_ade;
        sc.fde = best_fde;
        std::vector<Vec2> pred_path = {s.start.position()};
        pred_path.insert(pred_path.end(), best_path.begin(), best_path.end());
        sc.kappa_pred = normalized_curvature(pred_path);
        out.push_back(std::move(sc));
    }
    return out;
}

/// Trajectories decoded on a uniform alpha_G grid over [0, 1] (the endpoints
/// are the pure-branch decodes, outside the trained [0.1, 0.9] bounds).
struct AttentionSweep {
    std::string sample_id;
    std::vector<double> alphas;
    std::vector<std::vector<Vec2>> trajectories;  // world positions
};

inline AttentionSweep attention_sweep(const HybridModel& model, const Sample& sample, int n = 50) {
    if (n < 2) throw ConfigError("attention_sweep: need at least 2 points");
    AttentionSweep out;
    out.sample_id = sample.id();
    for (int i = 0; i < n; ++i) {
        const double alpha = static_cast<double>(i) / static_cast<double>(n - 1);
        const auto pred = model.predict(sample, &alpha);
        out.alphas.push_back(alpha);
        out.trajectories.push_back(integrate_trajectory(pred.modes.front(), sample.start));
    }
    return out;
}

enum class RankOrder { most_interactive, least_interactive };

/// Stable sort by alpha_G (ties by sample id), truncated to top_k.
inline std::vector<SceneScore> rank_scenarios(std::vector<SceneScore> scores, std::size_t top_k, RankOrder order) {
    std::sort(scores.begin(), scores.end(), [order](const SceneScore& a, const SceneScore& b) {
        if (a.alpha_g != b.alpha_g) {
            return order == RankOrder::most_interactive ? a.alpha_g > b.alpha_g : a.alpha_g < b.alpha_g;
        }
        return a.sample_id < b.sample_id;
    });
    if (scores.size() > top_k) scores.resize(top_k);
    return scores;
}

// ---------------------------------------------------------------------------
// Scores CSV
// ---------------------------------------------------------------------------

inline std::string scores_to_csv(const std::vector<SceneScore>& scores, const std::string& config_hash) {
    std::string out;
    if (!config_hash.empty()) out += "# config_hash=" + config_hash + "\n";
    out += "sample_id,family,alpha_g,alpha_i,kappa,kappa_pred,ade,fde\n";
    for (const auto& s : scores) {
        out += s.sample_id + "," + s.family + "," + format_double(s.alpha_g) + "," + format_double(s.alpha_i) + "," +
               format_double(s.kappa) + "," + format_double(s.kappa_pred) + "," + format_double(s.ade) + "," +
               format_double(s.fde) + "\n";
    }
    return out;
}

inline std::vector<SceneScore> scores_from_csv(const std::string& text, std::string* config_hash = nullptr) {
    std::vector<SceneScore> out;
    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    bool header_seen = false;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (line[0] == '#') {
            const std::string key = "# config_hash=";
            if (config_hash && line.rfind(key, 0) == 0) *config_hash = line.substr(key.size());
            continue;
        }
        if (!header_seen) {
            header_seen = true;
            continue;
        }
        std::istringstream ls(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (cells.size() != 8) throw ParseError("scores line " + std::to_string(line_no) + ": expected 8 columns");
        SceneScore s;
        s.sample_id = cells[0];
        s.family = cells[1];
        try {
            s.alpha_g = std::stod(cells[2]);
            s.alpha_i = std::stod(cells[3]);
            s.kappa = std::stod(cells[4]);
            s.kappa_pred = std::stod(cells[5]);
            s.ade = std::stod(cells[6]);
            s.fde = std::stod(cells[7]);
        } catch (const std::exception&) {
            throw ParseError("scores line " + std::to_string(line_no) + ": bad numeric value");
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace scenemine
