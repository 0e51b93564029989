#pragma once

#include <functional>
#include <limits>
#include <vector>

#include "scenemine/common.hpp"

namespace scenemine {

/// Average Euclidean displacement between prediction and ground truth.
inline double ade(const std::vector<Vec2>& pred, const std::vector<Vec2>& truth) {
    if (pred.size() != truth.size() || pred.empty()) {
        throw InputError("ade: prediction and truth must have equal nonzero length");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) acc += (pred[i] - truth[i]).norm();
    return acc / static_cast<double>(pred.size());
}

/// Displacement of the last predicted position.
inline double fde(const std::vector<Vec2>& pred, const std::vector<Vec2>& truth) {
    if (pred.size() != truth.size() || pred.empty()) {
        throw InputError("fde: prediction and truth must have equal nonzero length");
    }
    return (pred.back() - truth.back()).norm();
}

/// Final-displacement thresholds: lateral is constant, longitudinal rises
/// linearly with the ground-truth speed between the two anchor points.
struct MissRateThresholds {
    double lateral = 1.0;    // m
    double lon_low = 1.0;    // m, at and below v_low
    double lon_high = 2.0;   // m, at and above v_high
    double v_low = 1.4;      // m/s
    double v_high = 11.0;    // m/s

    double longitudinal(double speed) const {
        if (speed <= v_low) return lon_low;
        if (speed >= v_high) return lon_high;
        return lon_low + (speed - v_low) / (v_high - v_low) * (lon_high - lon_low);
    }
};

struct MissRateSample {
    std::vector<std::vector<Vec2>> modes;  // K predicted paths
    std::vector<Vec2> truth;
    double truth_speed = 0.0;  // ground-truth speed at the final step
};

/// Fraction of samples whose every mode exceeds a final-step threshold. The
/// final error is decomposed in the ground-truth heading frame at the last
/// step (prediction-independent).
inline double miss_rate(const std::vector<MissRateSample>& samples, const MissRateThresholds& thr = {}) {
    if (samples.empty()) throw InputError("miss_rate: empty input");
    std::size_t misses = 0;
    for (const auto& s : samples) {
        if (s.modes.empty()) throw InputError("miss_rate: sample without modes");
        // Direction of the last resolvable ground-truth segment; +x fallback.
        Vec2 dir{1.0, 0.0};
        for (std::size_t i = s.truth.size(); i > 1; --i) {
            const Vec2 seg = s.truth[i - 1] - s.truth[i - 2];
            if (seg.norm() > 1e-9) {
                dir = seg * (1.0 / seg.norm());
                break;
            }
        }
        const double lon_thr = thr.longitudinal(s.truth_speed);
        bool all_missed = true;
        for (const auto& mode : s.modes) {
            if (mode.size() != s.truth.size() || mode.empty()) {
                throw InputError("miss_rate: mode and truth must have equal nonzero length");
            }
            const Vec2 err = mode.back() - s.truth.back();
            const double lon_err = std::abs(err.dot(dir));
            const double lat_err = std::abs(err.cross(dir));
            if (lon_err <= lon_thr && lat_err <= thr.lateral) {
                all_missed = false;
                break;
            }
        }
        if (all_missed) ++misses;
    }
    return static_cast<double>(misses) / static_cast<double>(samples.size());
}

/// Minimum of a displacement metric across prediction modes.
inline double min_over_modes(const std::function<double(const std::vector<Vec2>&, const std::vector<Vec2>&)>& metric,
                             const std::vector<std::vector<Vec2>>& modes, const std::vector<Vec2>& truth) {
    if (modes.empty()) throw InputError("min_over_modes: no modes");
    double best = std::numeric_limits<double>::infinity();
    for (const auto& m : modes) best = std::min(best, metric(m, truth));
    return best;
}

}  // namespace scenemine
