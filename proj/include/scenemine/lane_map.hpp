#pragma once

#include <algorithm>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "scenemine/common.hpp"

namespace scenemine {

/// Arc-length coordinate on a lane: s along the centerline, d signed lateral
/// offset (left of driving direction is positive).
struct FrenetCoord {
    int lane_id = -1;
    double s = 0.0;
    double d = 0.0;
};

/// One candidate lane assignment for a vehicle.
struct ProjectionIdentity {
    std::int64_t vehicle_id = -1;
    FrenetCoord coord;
    double certainty = 0.0;
};

struct Aabb {
    double min_x = 0, min_y = 0, max_x = 0, max_y = 0;

    static Aabb of_points(const std::vector<Vec2>& pts) {
        Aabb b{pts[0].x, pts[0].y, pts[0].x, pts[0].y};
        for (const auto& p : pts) {
            b.min_x = std::min(b.min_x, p.x);
            b.min_y = std::min(b.min_y, p.y);
            b.max_x = std::max(b.max_x, p.x);
            b.max_y = std::max(b.max_y, p.y);
        }
        return b;
    }
    bool contains(Vec2 p, double margin) const {
        return p.x >= min_x - margin && p.x <= max_x + margin && p.y >= min_y - margin && p.y <= max_y + margin;
    }
    bool intersects(const Aabb& o, double margin) const {
        return min_x <= o.max_x + margin && o.min_x <= max_x + margin && min_y <= o.max_y + margin &&
               o.min_y <= max_y + margin;
    }
};

struct Lane {
    int id = -1;
    std::vector<Vec2> centerline;
    double width = 3.5;
    /// Virtual boundaries (junction connectors) render as dashed blue lines.
    bool virtual_boundary = false;

    std::vector<double> cum_s;  // cumulative arc length per vertex, cum_s[0] = 0

    double length() const { return cum_s.back(); }

    /// Index of the segment containing arc position s (clamped).
    std::size_t segment_at(double s) const {
        auto it = std::upper_bound(cum_s.begin(), cum_s.end(), s);
        std::size_t i = static_cast<std::size_t>(it - cum_s.begin());
        if (i == 0) return 0;
        if (i >= cum_s.size()) return cum_s.size() - 2;
        return i - 1;
    }

    Vec2 point_at(double s) const {
        s = std::clamp(s, 0.0, length());
        const std::size_t i = segment_at(s);
        const double t = (s - cum_s[i]) / (cum_s[i + 1] - cum_s[i]);
        return centerline[i] + (centerline[i + 1] - centerline[i]) * t;
    }

    Vec2 tangent_at(double s) const {
        s = std::clamp(s, 0.0, length());
        const std::size_t i = segment_at(s);
        const Vec2 dir = centerline[i + 1] - centerline[i];
        const double n = dir.norm();
        return {dir.x / n, dir.y / n};
    }

    double heading_at(double s) const {
        const Vec2 t = tangent_at(s);
        return std::atan2(t.y, t.x);
    }
};

/// Nearest-point projection onto the lane centerline. Ties at a shared vertex
/// resolve to the earlier segment.
inline FrenetCoord arc_length_project(const Lane& lane, Vec2 p) {
    double best_d2 = std::numeric_limits<double>::infinity();
    FrenetCoord out;
    out.lane_id = lane.id;
    for (std::size_t i = 0; i + 1 < lane.centerline.size(); ++i) {
        const Vec2 a = lane.centerline[i];
        const Vec2 ab = lane.centerline[i + 1] - a;
        const double len2 = ab.norm2();
        double t = (p - a).dot(ab) / len2;
        t = std::clamp(t, 0.0, 1.0);
        const Vec2 foot = a + ab * t;
        const double d2 = (p - foot).norm2();
        if (d2 < best_d2) {
            best_d2 = d2;
            const double seg_len = std::sqrt(len2);
            out.s = lane.cum_s[i] + t * seg_len;
            const double side = ab.cross(p - foot);
            out.d = (side >= 0.0 ? 1.0 : -1.0) * std::sqrt(d2);
        }
    }
    return out;
}

/// Crossing of this lane's centerline with another lane, by arc position.
struct LaneCrossing {
    int other_lane = -1;
    double s_here = 0.0;
    double s_other = 0.0;
};

/// Directed lane network with successor/adjacency topology and precomputed
/// centerline crossings. Immutable after finalize(); queries are read-only.
class LaneMap {
public:
    // Pinned query constants.
    static constexpr double kCaptureRadiusScale = 1.5;           // x lane width
    static constexpr double kHeadingGateRad = 60.0 * M_PI / 180.0;
    static constexpr double kSigmaWidthScale = 0.25;             // sigma = width / 4
    static constexpr int kMaxChainHops = 5;
    static constexpr double kMaxChainMeters = 200.0;
    static constexpr double kEndpointTolerance = 0.1;            // successor continuity
    static constexpr double kCrossingEndpointExclusion = 0.05;   // junction-touch filter

    std::vector<Lane> lanes;
    std::vector<std::pair<int, int>> successor_pairs;      // (from, to)
    std::vector<std::pair<int, int>> adjacent_left_pairs;  // (lane, its left neighbor)
    std::string config_hash;

    /// Validates invariants and builds the derived indexes. Must be called
    /// after the public fields are filled; from_json/load do it implicitly.
    void finalize() {
        index_.clear();
        for (std::size_t i = 0; i < lanes.size(); ++i) {
            Lane& ln = lanes[i];
            if (ln.centerline.size() < 2) throw IntegrityError("lane " + std::to_string(ln.id) + ": needs >= 2 points");
            if (ln.width <= 0.0) throw IntegrityError("lane " + std::to_string(ln.id) + ": width must be > 0");
            ln.cum_s.assign(ln.centerline.size(), 0.0);
            for (std::size_t j = 0; j + 1 < ln.centerline.size(); ++j) {
                const double seg = (ln.centerline[j + 1] - ln.centerline[j]).norm();
                if (seg <= 1e-12) {
                    throw IntegrityError("lane " + std::to_string(ln.id) + ": repeated centerline point at index " +
                                         std::to_string(j));
                }
                ln.cum_s[j + 1] = ln.cum_s[j] + seg;
            }
            if (!index_.emplace(ln.id, i).second) throw IntegrityError("duplicate lane id " + std::to_string(ln.id));
        }
        successors_.clear();
        predecessors_.clear();
        for (const auto& [from, to] : successor_pairs) {
            const Lane& a = lane(from);
            const Lane& b = lane(to);
            const double gap = (a.centerline.back() - b.centerline.front()).norm();
            if (gap > kEndpointTolerance) {
                throw IntegrityError("successor " + std::to_string(from) + "->" + std::to_string(to) +
                                     ": endpoint gap " + format_double(gap) + " m");
            }
            successors_[from].push_back(to);
            predecessors_[to].push_back(from);
        }
        adjacency_.clear();
        for (const auto& [a, b] : adjacent_left_pairs) {
            if (a == b) throw IntegrityError("lane " + std::to_string(a) + " adjacent to itself");
            lane(a);
            lane(b);
            adjacency_.insert({a, b});
            adjacency_.insert({b, a});
        }
        aabbs_.clear();
        aabbs_.reserve(lanes.size());
        for (const auto& ln : lanes) aabbs_.push_back(Aabb::of_points(ln.centerline));
        compute_crossings();
    }

    bool has_lane(int id) const { return index_.count(id) > 0; }

    const Lane& lane(int id) const {
        auto it = index_.find(id);
        if (it == index_.end()) throw IntegrityError("unknown lane id " + std::to_string(id));
        return lanes[it->second];
    }

    const std::vector<int>& successors_of(int id) const {
        static const std::vector<int> empty;
        auto it = successors_.find(id);
        return it == successors_.end() ? empty : it->second;
    }

    const std::vector<int>& predecessors_of(int id) const {
        static const std::vector<int> empty;
        auto it = predecessors_.find(id);
        return it == predecessors_.end() ? empty : it->second;
    }

    bool adjacent(int a, int b) const { return adjacency_.count({a, b}) > 0; }

    bool successor_linked(int a, int b) const {
        for (int s : successors_of(a))
            if (s == b) return true;
        for (int s : successors_of(b))
            if (s == a) return true;
        return false;
    }

    const std::vector<LaneCrossing>& crossings_of(int id) const {
        static const std::vector<LaneCrossing> empty;
        auto it = crossings_.find(id);
        return it == crossings_.end() ? empty : it->second;
    }

    /// Unordered crossing pairs, each listed once.
    const std::vector<std::pair<int, int>>& crossing_pairs() const { return crossing_pairs_; }

    const Aabb& lane_aabb(int id) const { return aabbs_[index_.at(id)]; }

    // -- queries ------------------------------------------------------------

    FrenetCoord project(int lane_id, Vec2 p) const { return arc_length_project(lane(lane_id), p); }

    /// All lanes passing the lateral capture and heading gates, certainties
    /// Gaussian in the lateral offset and normalized to sum 1.
    std::vector<ProjectionIdentity> candidate_projections(Vec2 pos, double heading) const {
        std::vector<ProjectionIdentity> out;
        double total = 0.0;
        for (const auto& ln : lanes) {
            const double capture = kCaptureRadiusScale * ln.width;
            if (!aabbs_[index_.at(ln.id)].contains(pos, capture)) continue;
            const FrenetCoord fc = arc_length_project(ln, pos);
            if (std::abs(fc.d) > capture) continue;
            if (std::abs(wrap_angle(heading - ln.heading_at(fc.s))) > kHeadingGateRad) continue;
            const double sigma = kSigmaWidthScale * ln.width;
            const double w = std::exp(-(fc.d * fc.d) / (2.0 * sigma * sigma));
            out.push_back(ProjectionIdentity{-1, fc, w});
            total += w;
        }
        for (auto& pi : out) pi.certainty /= total;
        return out;
    }

    /// Signed arc distance from a to b along successor chains (positive when b
    /// is ahead). Unreachable within the hop/length caps yields nullopt.
    std::optional<double> longitudinal_distance(const FrenetCoord& a, const FrenetCoord& b) const {
        if (a.lane_id == b.lane_id) return b.s - a.s;
        const auto fwd = chain_distance(a, b);
        const auto bwd = chain_distance(b, a);
        if (fwd && bwd) {
            if (std::abs(*fwd) < std::abs(*bwd)) return *fwd;
            if (std::abs(*bwd) < std::abs(*fwd)) return -*bwd;
            // Exact tie (loop): orient by lane id so antisymmetry holds.
            return a.lane_id < b.lane_id ? *fwd : -*bwd;
        }
        if (fwd) return *fwd;
        if (bwd) return -*bwd;
        return std::nullopt;
    }

    /// Arc distance from a to the first crossing of a's lane (or successor
    /// chain) with lane_b; nullopt when a is past every crossing point.
    std::optional<double> crossing_distance(const FrenetCoord& a, int lane_b) const {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& cr : crossings_of(a.lane_id)) {
            if (cr.other_lane == lane_b && cr.s_here >= a.s) best = std::min(best, cr.s_here - a.s);
        }
        const double residual = lane(a.lane_id).length() - a.s;
        crossing_search(a.lane_id, residual, 1, lane_b, best);
        if (best == std::numeric_limits<double>::infinity()) return std::nullopt;
        return best;
    }

    /// Returns the map rotated by `angle` and shifted by `offset` (test and
    /// experiment helper; topology is preserved).
    LaneMap transformed(double angle, Vec2 offset) const {
        LaneMap out;
        out.lanes = lanes;
        for (auto& ln : out.lanes) {
            for (auto& p : ln.centerline) p = p.rotated(angle) + offset;
            ln.cum_s.clear();
        }
        out.successor_pairs = successor_pairs;
        out.adjacent_left_pairs = adjacent_left_pairs;
        out.config_hash = config_hash;
        out.finalize();
        return out;
    }

    // -- serialization --------------------------------------------------------

    nlohmann::json to_json() const {
        nlohmann::json j;
        if (!config_hash.empty()) j["config_hash"] = config_hash;
        auto& jl = j["lanes"] = nlohmann::json::array();
        for (const auto& ln : lanes) {
            nlohmann::json e;
            e["id"] = ln.id;
            auto& pts = e["centerline"] = nlohmann::json::array();
            for (const auto& p : ln.centerline) pts.push_back({p.x, p.y});
            e["width"] = ln.width;
            if (ln.virtual_boundary) e["virtual"] = true;
            jl.push_back(std::move(e));
        }
        j["successors"] = successor_pairs;
        j["adjacent_left"] = adjacent_left_pairs;
        j["crossings"] = "derived";
        return j;
    }

    static LaneMap from_json(const nlohmann::json& j) {
        LaneMap m;
        m.config_hash = j.value("config_hash", "");
        if (!j.contains("lanes")) throw ParseError("map: missing \"lanes\"");
        for (const auto& e : j.at("lanes")) {
            Lane ln;
            ln.id = e.at("id").get<int>();
            for (const auto& p : e.at("centerline")) {
                ln.centerline.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
            }
            ln.width = e.at("width").get<double>();
            ln.virtual_boundary = e.value("virtual", false);
            m.lanes.push_back(std::move(ln));
        }
        for (const auto& p : j.value("successors", nlohmann::json::array())) {
            m.successor_pairs.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
        }
        for (const auto& p : j.value("adjacent_left", nlohmann::json::array())) {
            m.adjacent_left_pairs.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
        }
        m.finalize();
        return m;
    }

    static LaneMap load(const std::string& path) {
        try {
            return from_json(nlohmann::json::parse(read_file(path)));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("map " + path + ": " + e.what());
        }
    }

    void save(const std::string& path) const { write_file_atomic(path, to_json().dump(2) + "\n"); }

private:
    std::map<int, std::size_t> index_;
    std::map<int, std::vector<int>> successors_;
    std::map<int, std::vector<int>> predecessors_;
    std::set<std::pair<int, int>> adjacency_;
    std::map<int, std::vector<LaneCrossing>> crossings_;
    std::vector<std::pair<int, int>> crossing_pairs_;
    std::vector<Aabb> aabbs_;

    /// Min distance from a to b over successor chains only (nullopt if b is
    /// not downstream within the caps).
    std::optional<double> chain_distance(const FrenetCoord& a, const FrenetCoord& b) const {
        double best = std::numeric_limits<double>::infinity();
        const double residual = lane(a.lane_id).length() - a.s;
        chain_search(a.lane_id, residual, 1, b, best);
        if (best == std::numeric_limits<double>::infinity()) return std::nullopt;
        return best;
    }

    void chain_search(int lane_id, double base, int hops, const FrenetCoord& target, double& best) const {
        if (hops > kMaxChainHops || base > kMaxChainMeters) return;
        for (int nxt : successors_of(lane_id)) {
            if (nxt == target.lane_id) best = std::min(best, base + target.s);
            chain_search(nxt, base + lane(nxt).length(), hops + 1, target, best);
        }
    }

    void crossing_search(int lane_id, double base, int hops, int lane_b, double& best) const {
        if (hops > kMaxChainHops || base > kMaxChainMeters) return;
        for (int nxt : successors_of(lane_id)) {
            for (const auto& cr : crossings_of(nxt)) {
                if (cr.other_lane == lane_b) best = std::min(best, base + cr.s_here);
            }
            crossing_search(nxt, base + lane(nxt).length(), hops + 1, lane_b, best);
        }
    }

    void compute_crossings() {
        crossings_.clear();
        crossing_pairs_.clear();
        for (std::size_t ia = 0; ia < lanes.size(); ++ia) {
            for (std::size_t ib = ia + 1; ib < lanes.size(); ++ib) {
                const Lane& a = lanes[ia];
                const Lane& b = lanes[ib];
                if (successor_linked(a.id, b.id) || adjacent(a.id, b.id)) continue;
                if (!aabbs_[ia].intersects(aabbs_[ib], 0.0)) continue;
                bool any = false;
                for (std::size_t i = 0; i + 1 < a.centerline.size(); ++i) {
                    for (std::size_t j = 0; j + 1 < b.centerline.size(); ++j) {
                        double t, u;
                        if (!segment_intersection(a.centerline[i], a.centerline[i + 1], b.centerline[j],
                                                  b.centerline[j + 1], t, u)) {
                            continue;
                        }
                        const double sa = a.cum_s[i] + t * (a.cum_s[i + 1] - a.cum_s[i]);
                        const double sb = b.cum_s[j] + u * (b.cum_s[j + 1] - b.cum_s[j]);
                        // Junction touches at lane ends are topology, not crossings.
                        if (sa < kCrossingEndpointExclusion || sa > a.length() - kCrossingEndpointExclusion) continue;
                        if (sb < kCrossingEndpointExclusion || sb > b.length() - kCrossingEndpointExclusion) continue;
                        if (already_listed(a.id, sa, b.id)) continue;
                        crossings_[a.id].push_back({b.id, sa, sb});
                        crossings_[b.id].push_back({a.id, sb, sa});
                        any = true;
                    }
                }
                if (any) crossing_pairs_.emplace_back(a.id, b.id);
            }
        }
        for (auto& [id, list] : crossings_) {
            std::sort(list.begin(), list.end(), [](const LaneCrossing& x, const LaneCrossing& y) {
                return x.s_here != y.s_here ? x.s_here < y.s_here : x.other_lane < y.other_lane;
            });
        }
    }

    bool already_listed(int lane_a, double sa, int lane_b) const {
        auto it = crossings_.find(lane_a);
        if (it == crossings_.end()) return false;
        for (const auto& cr : it->second) {
            if (cr.other_lane == lane_b && std::abs(cr.s_here - sa) < 1e-9) return true;
        }
        return false;
    }

    static bool segment_intersection(Vec2 p1, Vec2 p2, Vec2 q1, Vec2 q2, double& t, double& u) {
        const Vec2 r = p2 - p1;
        const Vec2 s = q2 - q1;
        const double denom = r.cross(s);
        const double scale = r.norm() * s.norm();
        if (std::abs(denom) < 1e-12 * scale) return false;  // parallel
        const Vec2 qp = q1 - p1;
        t = qp.cross(s) / denom;
        u = qp.cross(r) / denom;
        return t >= 0.0 && t <= 1.0 && u >= 0.0 && u <= 1.0;
    }
};

}  // namespace scenemine
