// Independent test oracles. Everything here recomputes expectations from
// first principles (dense sampling, exhaustive enumeration, closed forms) and
// must stay decoupled from the library implementations it checks.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "scenemine/common.hpp"
#include "scenemine/lane_map.hpp"
#include "scenemine/scene_graph.hpp"
#include "scenemine/tracks.hpp"

namespace oracles {

using scenemine::Lane;
using scenemine::LaneMap;
using scenemine::Rng;
using scenemine::TrackState;
using scenemine::Vec2;

// ---------------------------------------------------------------------------
// Dense-sampling projection oracle: walk the polyline in small arc steps and
// refine around the best candidate.
// ---------------------------------------------------------------------------

struct DenseProjection {
    double s = 0.0;
    double dist = 0.0;
};

inline DenseProjection dense_project(const Lane& lane, Vec2 p, double coarse_step = 1e-3, double fine_step = 1e-6) {
    auto point_at = [&](double s) {
        // Independent interpolation (linear over the vertex list).
        double remaining = s;
        for (std::size_t i = 0; i + 1 < lane.centerline.size(); ++i) {
            const Vec2 a = lane.centerline[i], b = lane.centerline[i + 1];
            const double len = std::hypot(b.x - a.x, b.y - a.y);
            if (remaining <= len) {
                const double t = remaining / len;
                return Vec2{a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)};
            }
            remaining -= len;
        }
        return lane.centerline.back();
    };
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < lane.centerline.size(); ++i) {
        total += (lane.centerline[i + 1] - lane.centerline[i]).norm();
    }
    double best_s = 0.0, best_d = std::numeric_limits<double>::infinity();
    for (double s = 0.0; s <= total; s += coarse_step) {
        const double d = (point_at(s) - p).norm();
        if (d < best_d) {
            best_d = d;
            best_s = s;
        }
    }
    const double lo = std::max(0.0, best_s - 2 * coarse_step);
    const double hi = std::min(total, best_s + 2 * coarse_step);
    for (double s = lo; s <= hi; s += fine_step) {
        const double d = (point_at(s) - p).norm();
        if (d < best_d) {
            best_d = d;
            best_s = s;
        }
    }
    return {best_s, best_d};
}

// ---------------------------------------------------------------------------
// Exhaustive-path relation oracle: enumerates every successor path up to the
// caps, derives candidate lanes, relation types, distances, and merged edge
// features without touching the LaneMap query methods.
// ---------------------------------------------------------------------------

struct OracleIdentity {
    int lane_id;
    double s;
    double d;
    double certainty;
};

/// Projection by direct per-segment arithmetic (written independently of
/// arc_length_project).
inline OracleIdentity project_exact(const Lane& lane, Vec2 p) {
    double best_d2 = std::numeric_limits<double>::infinity();
    double best_s = 0.0, best_side = 0.0;
    double cum = 0.0;
    for (std::size_t i = 0; i + 1 < lane.centerline.size(); ++i) {
        const Vec2 a = lane.centerline[i], b = lane.centerline[i + 1];
        const double len = (b - a).norm();
        double t = ((p.x - a.x) * (b.x - a.x) + (p.y - a.y) * (b.y - a.y)) / (len * len);
        t = std::clamp(t, 0.0, 1.0);
        const Vec2 foot{a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)};
        const double d2 = (p - foot).norm2();
        if (d2 < best_d2) {
            best_d2 = d2;
            best_s = cum + t * len;
            best_side = (b - a).cross(p - foot) >= 0.0 ? 1.0 : -1.0;
        }
        cum += len;
    }
    return {lane.id, best_s, best_side * std::sqrt(best_d2), 0.0};
}

inline std::vector<OracleIdentity> oracle_candidates(const LaneMap& map, Vec2 pos, double heading) {
    std::vector<OracleIdentity> out;
    double total = 0.0;
    for (const auto& lane : map.lanes) {
        OracleIdentity id = project_exact(lane, pos);
        if (std::abs(id.d) > 1.5 * lane.width) continue;
        // Heading of the segment containing s.
        double cum = 0.0;
        double lane_heading = 0.0;
        for (std::size_t i = 0; i + 1 < lane.centerline.size(); ++i) {
            const Vec2 a = lane.centerline[i], b = lane.centerline[i + 1];
            const double len = (b - a).norm();
            if (id.s <= cum + len || i + 2 == lane.centerline.size()) {
                lane_heading = std::atan2(b.y - a.y, b.x - a.x);
                break;
            }
            cum += len;
        }
        if (std::abs(scenemine::wrap_angle(heading - lane_heading)) > 60.0 * M_PI / 180.0) continue;
        const double sigma = lane.width / 4.0;
        id.certainty = std::exp(-(id.d * id.d) / (2.0 * sigma * sigma));
        total += id.certainty;
        out.push_back(id);
    }
    for (auto& id : out) id.certainty /= total;
    return out;
}

/// Every successor path from `from`, as (lane sequence) with entry distances.
inline void enumerate_paths(const LaneMap& map, int from, double base, int hops, std::vector<std::pair<int, double>>& reached) {
    if (hops > LaneMap::kMaxChainHops || base > LaneMap::kMaxChainMeters) return;
    for (const auto& [a, b] : map.successor_pairs) {
        if (a != from) continue;
        reached.emplace_back(b, base);
        enumerate_paths(map, b, base + map.lane(b).length(), hops + 1, reached);
    }
}

/// Minimum forward arc distance from (lane_a, s_a) to (lane_b, s_b), by
/// exhaustive enumeration.
inline std::optional<double> oracle_forward_distance(const LaneMap& map, int lane_a, double s_a, int lane_b,
                                                     double s_b) {
    std::vector<std::pair<int, double>> reached;
    enumerate_paths(map, lane_a, map.lane(lane_a).length() - s_a, 1, reached);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [lane, base] : reached) {
        if (lane == lane_b) best = std::min(best, base + s_b);
    }
    if (best == std::numeric_limits<double>::infinity()) return std::nullopt;
    return best;
}

inline std::optional<double> oracle_longitudinal(const LaneMap& map, int lane_a, double s_a, int lane_b, double s_b) {
    if (lane_a == lane_b) return s_b - s_a;
    const auto fwd = oracle_forward_distance(map, lane_a, s_a, lane_b, s_b);
    const auto bwd = oracle_forward_distance(map, lane_b, s_b, lane_a, s_a);
    if (fwd && bwd) {
        if (std::abs(*fwd) < std::abs(*bwd)) return *fwd;
        if (std::abs(*bwd) < std::abs(*fwd)) return -*bwd;
        return lane_a < lane_b ? *fwd : -*bwd;
    }
    if (fwd) return *fwd;
    if (bwd) return -*bwd;
    return std::nullopt;
}

/// All centerline crossings between two lanes by independent segment math.
inline std::vector<std::pair<double, double>> oracle_crossings(const Lane& a, const Lane& b) {
    std::vector<std::pair<double, double>> out;
    double cum_a = 0.0;
    for (std::size_t i = 0; i + 1 < a.centerline.size(); ++i) {
        const Vec2 p1 = a.centerline[i], p2 = a.centerline[i + 1];
        const double len_a = (p2 - p1).norm();
        double cum_b = 0.0;
        for (std::size_t j = 0; j + 1 < b.centerline.size(); ++j) {
            const Vec2 q1 = b.centerline[j], q2 = b.centerline[j + 1];
            const double len_b = (q2 - q1).norm();
            const Vec2 r = p2 - p1, s = q2 - q1;
            const double denom = r.cross(s);
            if (std::abs(denom) > 1e-12 * r.norm() * s.norm()) {
                const Vec2 qp = q1 - p1;
                const double t = qp.cross(s) / denom;
                const double u = qp.cross(r) / denom;
                if (t >= 0.0 && t <= 1.0 && u >= 0.0 && u <= 1.0) {
                    const double sa = cum_a + t * len_a;
                    const double sb = cum_b + u * len_b;
                    bool dup = false;
                    for (const auto& [xa, xb] : out) {
                        if (std::abs(xa - sa) < 1e-9) dup = true;
                    }
                    if (!dup) out.emplace_back(sa, sb);
                }
            }
            cum_b += len_b;
        }
        cum_a += len_a;
    }
    return out;
}

inline bool oracle_successor_linked(const LaneMap& map, int a, int b) {
    for (const auto& [x, y] : map.successor_pairs) {
        if ((x == a && y == b) || (x == b && y == a)) return true;
    }
    return false;
}

inline bool oracle_adjacent(const LaneMap& map, int a, int b) {
    for (const auto& [x, y] : map.adjacent_left_pairs) {
        if ((x == a && y == b) || (x == b && y == a)) return true;
    }
    return false;
}

/// Crossings of `lane_a` (filtered the way the map derives them: no successor
/// pairs, no adjacent pairs, no junction touches).
inline std::vector<std::pair<double, int>> oracle_lane_crossings(const LaneMap& map, int lane_a) {
    std::vector<std::pair<double, int>> out;  // (s on lane_a, other lane)
    const Lane& a = map.lane(lane_a);
    for (const auto& other : map.lanes) {
        if (other.id == lane_a) continue;
        if (oracle_successor_linked(map, lane_a, other.id) || oracle_adjacent(map, lane_a, other.id)) continue;
        double len_a = 0.0, len_b = 0.0;
        for (std::size_t i = 0; i + 1 < a.centerline.size(); ++i) len_a += (a.centerline[i + 1] - a.centerline[i]).norm();
        for (std::size_t i = 0; i + 1 < other.centerline.size(); ++i)
            len_b += (other.centerline[i + 1] - other.centerline[i]).norm();
        for (const auto& [sa, sb] : oracle_crossings(a, other)) {
            if (sa < 0.05 || sa > len_a - 0.05) continue;
            if (sb < 0.05 || sb > len_b - 0.05) continue;
            out.emplace_back(sa, other.id);
        }
    }
    return out;
}

inline std::optional<double> oracle_crossing_distance(const LaneMap& map, int lane_a, double s_a, int lane_b) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [s, other] : oracle_lane_crossings(map, lane_a)) {
        if (other == lane_b && s >= s_a) best = std::min(best, s - s_a);
    }
    std::vector<std::pair<int, double>> reached;
    enumerate_paths(map, lane_a, map.lane(lane_a).length() - s_a, 1, reached);
    for (const auto& [lane, base] : reached) {
        for (const auto& [s, other] : oracle_lane_crossings(map, lane)) {
            if (other == lane_b) best = std::min(best, base + s);
        }
    }
    if (best == std::numeric_limits<double>::infinity()) return std::nullopt;
    return best;
}

/// Full expected edge feature set for one ordered participant pair, or
/// nullopt when no relation exists. Mirrors the merge rules from scratch.
inline std::optional<scenemine::EdgeFeatures> oracle_edge(const LaneMap& map, const TrackState& origin,
                                                          const TrackState& target) {
    const auto ids_o = oracle_candidates(map, origin.position(), origin.heading);
    const auto ids_t = oracle_candidates(map, target.position(), target.heading);
    double lon = 0.0, lat = 0.0, inter = 0.0;
    double path_w = 0.0, path_acc = 0.0, int_w = 0.0, int_acc = 0.0;
    double best_path_cert = -1.0, best_int_cert = -1.0;
    double centerline = 0.0, int_centerline = 0.0;
    bool any = false;
    for (const auto& mi : ids_o) {
        for (const auto& mj : ids_t) {
            const double w = mi.certainty * mj.certainty;
            if (auto ld = oracle_longitudinal(map, mi.lane_id, mi.s, mj.lane_id, mj.s)) {
                any = true;
                lon += w;
                path_w += w;
                path_acc += w * *ld;
                if (mi.certainty > best_path_cert) {
                    best_path_cert = mi.certainty;
                    centerline = mi.d;
                }
            }
            if (oracle_adjacent(map, mi.lane_id, mj.lane_id)) {
                any = true;
                lat += w;
                const OracleIdentity on_origin = project_exact(map.lane(mi.lane_id), target.position());
                path_w += w;
                path_acc += w * (on_origin.s - mi.s);
                if (mi.certainty > best_path_cert) {
                    best_path_cert = mi.certainty;
                    centerline = mi.d;
                }
            }
            if (mi.lane_id != mj.lane_id) {
                if (auto cd = oracle_crossing_distance(map, mi.lane_id, mi.s, mj.lane_id)) {
                    any = true;
                    inter += w;
                    int_w += w;
                    int_acc += w * *cd;
                    if (mi.certainty > best_int_cert) {
                        best_int_cert = mi.certainty;
                        int_centerline = mi.d;
                    }
                }
            }
        }
    }
    if (!any) return std::nullopt;
    scenemine::EdgeFeatures f;
    auto q = [](double v) { return std::round(v * 1e6) / 1e6; };
    f.lon_certainty = q(std::min(1.0, lon));
    f.lat_certainty = q(std::min(1.0, lat));
    f.int_certainty = q(std::min(1.0, inter));
    f.path_distance = q(path_w > 0.0 ? path_acc / path_w : 0.0);
    f.int_path_distance = q(int_w > 0.0 ? int_acc / int_w : 0.0);
    f.centerline_distance = q(centerline);
    f.int_centerline_distance = q(int_centerline);
    return f;
}

// ---------------------------------------------------------------------------
// Random micro-map + vehicle generator for the oracle-equivalence sweep.
// ---------------------------------------------------------------------------

struct MicroScene {
    LaneMap map;
    std::vector<TrackState> states;
};

/// Random micro-maps (at most 6 lanes) composed of a successor chain, an
/// adjacent pair, and a crossing lane, under a random rigid placement, with
/// up to 5 vehicles placed on or near lanes.
inline MicroScene random_micro_scene(Rng& rng) {
    MicroScene out;
    const double angle = rng.uniform(0.0, 2.0 * M_PI);
    const Vec2 shift{rng.uniform(-200.0, 200.0), rng.uniform(-200.0, 200.0)};
    auto place = [&](Vec2 p) { return p.rotated(angle) + shift; };

    const double w = rng.uniform(3.0, 4.0);
    int next_id = 0;

    // Successor chain of 2-3 collinear lanes along +x (pre-rotation).
    const int chain_len = static_cast<int>(rng.uniform_int(2, 3));
    double x = 0.0;
    std::vector<int> chain;
    for (int i = 0; i < chain_len; ++i) {
        const double len = rng.uniform(25.0, 60.0);
        Lane lane;
        lane.id = next_id++;
        lane.centerline = {place({x, 0.0}), place({x + len, 0.0})};
        lane.width = w;
        out.map.lanes.push_back(lane);
        chain.push_back(lane.id);
        if (i > 0) out.map.successor_pairs.emplace_back(chain[static_cast<std::size_t>(i) - 1], lane.id);
        x += len;
    }
    const double chain_total = x;

    // Adjacent lane left of the first chain lane.
    if (rng.uniform() < 0.7) {
        Lane lane;
        lane.id = next_id++;
        const double len = rng.uniform(25.0, 60.0);
        lane.centerline = {place({0.0, w}), place({len, w})};
        lane.width = w;
        out.map.lanes.push_back(lane);
        out.map.adjacent_left_pairs.emplace_back(chain[0], lane.id);
    }

    // Crossing lane through the middle of the chain.
    if (rng.uniform() < 0.7) {
        Lane lane;
        lane.id = next_id++;
        const double cx = rng.uniform(10.0, chain_total - 10.0);
        lane.centerline = {place({cx, -40.0}), place({cx, 40.0})};
        lane.width = w;
        out.map.lanes.push_back(lane);
    }
    out.map.finalize();

    const int n_vehicles = static_cast<int>(rng.uniform_int(1, 5));
    for (int v = 0; v < n_vehicles; ++v) {
        const auto& lane = out.map.lanes[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(out.map.lanes.size()) - 1))];
        const double s = rng.uniform(1.0, lane.length() - 1.0);
        const double lateral = rng.uniform(-0.8, 0.8) * lane.width;
        const Vec2 base = lane.point_at(s);
        const Vec2 tangent = lane.tangent_at(s);
        const Vec2 normal{-tangent.y, tangent.x};
        TrackState st;
        st.track_id = v;
        st.frame = 0;
        const Vec2 pos = base + normal * lateral;
        st.x = pos.x;
        st.y = pos.y;
        const double heading = std::atan2(tangent.y, tangent.x) + rng.uniform(-0.3, 0.3);
        const double speed = rng.uniform(0.0, 15.0);
        st.vx = speed * std::cos(heading);
        st.vy = speed * std::sin(heading);
        st.heading = scenemine::wrap_angle(heading);
        st.length = 4.2;
        st.width = 1.8;
        st.agent_class = static_cast<scenemine::AgentClass>(rng.uniform_int(0, 3));
        out.states.push_back(st);
    }
    return out;
}

}  // namespace oracles
