#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "scenemine/common.hpp"
#include "scenemine/lane_map.hpp"
#include "scenemine/tracks.hpp"

namespace scenemine {

/// Synthetic scenario generator configuration. Identical (config, seed) pairs
/// produce bit-identical output.
struct SynthConfig {
    enum class Family { follow_brake, lone_curve, crossing, lane_merge, mixed };

    Family family = Family::mixed;
    int n_episodes = 10;
    std::uint64_t seed = 0;

    double speed_min = 6.0;        // m/s
    double speed_max = 13.0;       // m/s
    double gap_slack_min = 4.0;    // m beyond car-following equilibrium
    double gap_slack_max = 14.0;   // m
    double radius_min = 15.0;      // m, lone_curve
    double radius_max = 60.0;      // m
    double episode_duration = 12.0;  // s

    static Family family_from_name(const std::string& s) {
        if (s == "follow_brake") return Family::follow_brake;
        if (s == "lone_curve") return Family::lone_curve;
        if (s == "crossing") return Family::crossing;
        if (s == "lane_merge") return Family::lane_merge;
        if (s == "mixed") return Family::mixed;
        throw ConfigError("unknown scenario family: " + s);
    }

    static const char* family_name(Family f) {
        switch (f) {
            case Family::follow_brake: return "follow_brake";
            case Family::lone_curve: return "lone_curve";
            case Family::crossing: return "crossing";
            case Family::lane_merge: return "lane_merge";
            case Family::mixed: return "mixed";
        }
        return "mixed";
    }

    void validate() const {
        if (n_episodes < 1) throw ConfigError("synth: n_episodes must be >= 1");
        if (!(speed_min > 0.0 && speed_max >= speed_min)) throw ConfigError("synth: bad speed range");
        if (!(gap_slack_min >= 0.0 && gap_slack_max >= gap_slack_min)) throw ConfigError("synth: bad gap range");
        if (!(radius_min > 1.0 && radius_max >= radius_min)) throw ConfigError("synth: bad radius range");
        if (episode_duration < 5.0) throw ConfigError("synth: episode_duration must cover at least one window");
    }
};

struct EpisodeMeta {
    int id = 0;
    std::string family;
    std::vector<std::int64_t> track_ids;
    std::vector<int> lane_ids;
};

struct SynthResult {
    LaneMap map;
    TrackSet tracks;
    std::vector<EpisodeMeta> episodes;
};

namespace detail {

// Episodes are laid out on a 1 km spatial grid and 100 s apart in time so
// graphs and rasters never mix vehicles of different episodes.
constexpr double kEpisodeSpacing = 1000.0;
constexpr std::int64_t kEpisodeFrameOffset = 1000;
constexpr double kCarLength = 4.2;
constexpr double kCarWidth = 1.8;
constexpr double kLaneWidth = 3.5;
constexpr double kDt = 0.1;

// Car-following parameters (intelligent-driver style).
struct IdmParams {
    double a_max = 2.0;   // m/s^2
    double b = 3.0;       // comfortable braking, m/s^2
    double T = 1.5;       // time headway, s
    double s0 = 2.5;      // standstill gap, m
};

inline double idm_accel(double v, double v_des, double gap, double dv, const IdmParams& p) {
    const double vr = v / std::max(v_des, 0.1);
    double a = p.a_max * (1.0 - vr * vr * vr * vr);
    if (gap < 1e9) {
        const double s_star = p.s0 + std::max(0.0, v * p.T + v * dv / (2.0 * std::sqrt(p.a_max * p.b)));
        const double g = std::max(gap, 0.1);
        a -= p.a_max * (s_star / g) * (s_star / g);
    }
    return a;
}

struct Polyline {
    std::vector<Vec2> pts;
    std::vector<double> cum;

    explicit Polyline(std::vector<Vec2> p) : pts(std::move(p)) {
        cum.assign(pts.size(), 0.0);
        for (std::size_t i = 0; i + 1 < pts.size(); ++i) cum[i + 1] = cum[i] + (pts[i + 1] - pts[i]).norm();
    }
    double length() const { return cum.back(); }

    Vec2 point_at(double s) const {
        s = std::clamp(s, 0.0, length());
        auto it = std::upper_bound(cum.begin(), cum.end(), s);
        std::size_t i = it == cum.begin() ? 0 : static_cast<std::size_t>(it - cum.begin()) - 1;
        if (i + 1 >= pts.size()) i = pts.size() - 2;
        const double t = (s - cum[i]) / (cum[i + 1] - cum[i]);
        return pts[i] + (pts[i + 1] - pts[i]) * t;
    }

    double heading_at(double s) const {
        s = std::clamp(s, 0.0, length());
        auto it = std::upper_bound(cum.begin(), cum.end(), s);
        std::size_t i = it == cum.begin() ? 0 : static_cast<std::size_t>(it - cum.begin()) - 1;
        if (i + 1 >= pts.size()) i = pts.size() - 2;
        const Vec2 d = pts[i + 1] - pts[i];
        return std::atan2(d.y, d.x);
    }
};

/// Turns per-frame path positions s_t into a track whose velocities satisfy
/// p_{t+1} = p_t + v_t * dt exactly (forward differences).
inline Track track_from_path(std::int64_t id, const Polyline& path, const std::vector<double>& arc_positions,
                             std::int64_t frame_offset) {
    Track t;
    t.id = id;
    const std::size_t n = arc_positions.size();
    std::vector<Vec2> pos(n);
    for (std::size_t i = 0; i < n; ++i) pos[i] = path.point_at(arc_positions[i]);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        TrackState s;
        s.track_id = id;
        s.frame = frame_offset + static_cast<std::int64_t>(i);
        s.x = pos[i].x;
        s.y = pos[i].y;
        s.vx = (pos[i + 1].x - pos[i].x) / kDt;
        s.vy = (pos[i + 1].y - pos[i].y) / kDt;
        s.heading = wrap_angle(path.heading_at(arc_positions[i]));
        s.length = kCarLength;
        s.width = kCarWidth;
        s.agent_class = AgentClass::car;
        t.states.push_back(s);
    }
    return t;
}

/// Integrates a speed profile into arc positions: s_{t+1} = s_t + u_t * dt.
inline std::vector<double> integrate_speeds(double s0, const std::vector<double>& speeds) {
    std::vector<double> s(speeds.size() + 1);
    s[0] = s0;
    for (std::size_t i = 0; i < speeds.size(); ++i) s[i + 1] = s[i] + speeds[i] * kDt;
    return s;
}

inline std::vector<Vec2> arc_points(Vec2 center, double radius, double a0, double a1, double step_m) {
    const int n = std::max(2, static_cast<int>(std::ceil(std::abs(a1 - a0) * radius / step_m)) + 1);
    std::vector<Vec2> pts(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double a = a0 + (a1 - a0) * static_cast<double>(i) / (n - 1);
        pts[static_cast<std::size_t>(i)] = {center.x + radius * std::cos(a), center.y + radius * std::sin(a)};
    }
    return pts;
}

struct EpisodeBuild {
    std::vector<Lane> lanes;
    std::vector<std::pair<int, int>> successors;
    std::vector<std::pair<int, int>> adjacent_left;
    std::vector<Track> tracks;
};

inline EpisodeBuild build_follow_brake(Rng& rng, const SynthConfig& cfg, Vec2 origin, std::int64_t frame_offset,
                                       int lane_base, std::int64_t track_base) {
    EpisodeBuild out;
    Lane lane;
    lane.id = lane_base;
    lane.centerline = {origin, origin + Vec2{400.0, 0.0}};
    lane.width = kLaneWidth;
    out.lanes.push_back(lane);
    Polyline path(lane.centerline);

    const IdmParams idm;
    const double v0 = rng.uniform(cfg.speed_min, cfg.speed_max);
    const double slack = rng.uniform(cfg.gap_slack_min, cfg.gap_slack_max);
    const double t_brake = rng.uniform(1.5, 4.0);
    const double decel = rng.uniform(2.0, 4.0);
    const double v_end = rng.uniform(0.0, 2.5);

    const int steps = static_cast<int>(std::llround(cfg.episode_duration / kDt)) + 1;
    const double follower_s0 = 20.0;
    const double leader_s0 = follower_s0 + kCarLength + idm.s0 + v0 * idm.T + slack;

    std::vector<double> leader_speed(static_cast<std::size_t>(steps));
    std::vector<double> follower_speed(static_cast<std::size_t>(steps));
    double vl = v0, vf = v0;
    double sl = leader_s0, sf = follower_s0;
    for (int i = 0; i < steps; ++i) {
        leader_speed[static_cast<std::size_t>(i)] = vl;
        follower_speed[static_cast<std::size_t>(i)] = vf;
        const double gap = sl - sf - kCarLength;
        const double a_f = idm_accel(vf, v0, gap, vf - vl, idm);
        const double a_l = (i * kDt >= t_brake && vl > v_end) ? -decel : 0.0;
        sl += vl * kDt;
        sf += vf * kDt;
        vl = std::max(v_end, vl + a_l * kDt);
        vf = std::max(0.0, vf + a_f * kDt);
    }
    out.tracks.push_back(track_from_path(track_base, path, integrate_speeds(leader_s0, leader_speed), frame_offset));
    out.tracks.push_back(
        track_from_path(track_base + 1, path, integrate_speeds(follower_s0, follower_speed), frame_offset));
    return out;
}

inline EpisodeBuild build_lone_curve(Rng& rng, const SynthConfig& cfg, Vec2 origin, std::int64_t frame_offset,
                                     int lane_base, std::int64_t track_base) {
    EpisodeBuild out;
    const double radius = rng.uniform(cfg.radius_min, cfg.radius_max);
    const double dir = rng.uniform() < 0.5 ? 1.0 : -1.0;  // +1 turns left
    const double span = rng.uniform(M_PI / 3.0, M_PI);
    const double v = rng.uniform(cfg.speed_min, cfg.speed_max);
    const double entry_len = 20.0;

    // Straight entry along +x, arc of the chosen span, straight exit; the exit
    // is sized so a constant-speed vehicle never runs off the lane.
    std::vector<Vec2> pts = {origin, origin + Vec2{entry_len, 0.0}};
    const Vec2 center = origin + Vec2{entry_len, dir * radius};
    const double a0 = -dir * M_PI / 2.0;
    const double a1 = a0 + dir * span;
    auto arc = arc_points(center, radius, a0, a1, 2.0);
    pts.insert(pts.end(), arc.begin() + 1, arc.end());
    const double exit_heading = dir * span;
    const double exit_len = cfg.speed_max * cfg.episode_duration + 40.0;
    pts.push_back(pts.back() + Vec2{std::cos(exit_heading), std::sin(exit_heading)} * exit_len);

    Lane lane;
    lane.id = lane_base;
    lane.centerline = pts;
    lane.width = kLaneWidth;
    out.lanes.push_back(lane);
    Polyline path(pts);

    const int steps = static_cast<int>(std::llround(cfg.episode_duration / kDt)) + 1;
    std::vector<double> speed(static_cast<std::size_t>(steps), v);
    out.tracks.push_back(track_from_path(track_base, path, integrate_speeds(5.0, speed), frame_offset));
    return out;
}

inline EpisodeBuild build_crossing(Rng& rng, const SynthConfig& cfg, Vec2 origin, std::int64_t frame_offset,
                                   int lane_base, std::int64_t track_base) {
    EpisodeBuild out;
    const double cross_s = 125.0;
    Lane la;  // priority lane, along +x
    la.id = lane_base;
    la.centerline = {origin + Vec2{0.0, cross_s}, origin + Vec2{250.0, cross_s}};
    la.width = kLaneWidth;
    Lane lb;  // yielding lane, along +y
    lb.id = lane_base + 1;
    lb.centerline = {origin + Vec2{cross_s, 0.0}, origin + Vec2{cross_s, 250.0}};
    lb.width = kLaneWidth;
    out.lanes = {la, lb};
    Polyline pa(la.centerline), pb(lb.centerline);

    const IdmParams idm;
    const double va = rng.uniform(cfg.speed_min, cfg.speed_max);
    const double vb = rng.uniform(cfg.speed_min, cfg.speed_max);
    const double t_meet = rng.uniform(4.0, 6.0);
    const double dt_b = rng.uniform(-0.5, 1.0);  // B would arrive this much later
    const double sa0 = cross_s - va * t_meet;
    const double sb0 = cross_s - vb * (t_meet + dt_b);
    const double clearance = 6.0;   // conflict half-width plus car length
    const double stop_line = cross_s - 4.0;

    const int steps = static_cast<int>(std::llround(cfg.episode_duration / kDt)) + 1;
    std::vector<double> speed_a(static_cast<std::size_t>(steps)), speed_b(static_cast<std::size_t>(steps));
    double sa = sa0, sb = sb0, vb_t = vb;
    for (int i = 0; i < steps; ++i) {
        speed_a[static_cast<std::size_t>(i)] = va;
        speed_b[static_cast<std::size_t>(i)] = vb_t;
        const bool a_cleared = sa > cross_s + clearance;
        double accel;
        if (!a_cleared && sb < stop_line) {
            // Hold at the stop line until the priority vehicle clears.
            accel = idm_accel(vb_t, vb, stop_line - sb, vb_t, idm);
        } else {
            accel = idm_accel(vb_t, vb, 1e18, 0.0, idm);
        }
        sa += va * kDt;
        sb += vb_t * kDt;
        vb_t = std::max(0.0, vb_t + accel * kDt);
    }
    out.tracks.push_back(track_from_path(track_base, pa, integrate_speeds(sa0, speed_a), frame_offset));
    out.tracks.push_back(track_from_path(track_base + 1, pb, integrate_speeds(sb0, speed_b), frame_offset));
    return out;
}

inline EpisodeBuild build_lane_merge(Rng& rng, const SynthConfig& cfg, Vec2 origin, std::int64_t frame_offset,
                                     int lane_base, std::int64_t track_base) {
    EpisodeBuild out;
    const double junction_x = 150.0;
    Lane la;  // main approach
    la.id = lane_base;
    la.centerline = {origin, origin + Vec2{junction_x, 0.0}};
    la.width = kLaneWidth;
    Lane lc;  // continuation
    lc.id = lane_base + 1;
    lc.centerline = {origin + Vec2{junction_x, 0.0}, origin + Vec2{420.0, 0.0}};
    lc.width = kLaneWidth;
    Lane lb;  // merge ramp, approaches from the right at a shallow angle
    lb.id = lane_base + 2;
    {
        std::vector<Vec2> pts;
        const Vec2 start = origin + Vec2{40.0, -28.0};
        const Vec2 end = origin + Vec2{junction_x, 0.0};
        const Vec2 ctrl = origin + Vec2{110.0, -4.0};
        for (int i = 0; i <= 24; ++i) {
            const double t = static_cast<double>(i) / 24.0;
            const double u = 1.0 - t;
            pts.push_back(start * (u * u) + ctrl * (2.0 * u * t) + end * (t * t));
        }
        lb.centerline = pts;
        lb.width = kLaneWidth;
        lb.virtual_boundary = true;
    }
    out.lanes = {la, lc, lb};
    out.successors = {{la.id, lc.id}, {lb.id, lc.id}};

    Polyline pa({la.centerline.front(), lc.centerline.back()});
    std::vector<Vec2> b_path = lb.centerline;
    b_path.push_back(lc.centerline.back());
    Polyline pb(b_path);
    const double junc_a = junction_x;       // arc position of the junction on A's path
    const double junc_b = Polyline(lb.centerline).length();

    const IdmParams idm;
    const double va = rng.uniform(cfg.speed_min, cfg.speed_max);
    const double vb = rng.uniform(cfg.speed_min, cfg.speed_max);
    const double t_meet = rng.uniform(4.0, 6.0);
    const double lead = rng.uniform(0.2, 1.5);  // A reaches the junction this much earlier
    const double sa0 = junc_a - va * t_meet;
    const double sb0 = std::max(0.0, junc_b - vb * (t_meet + lead));

    const int steps = static_cast<int>(std::llround(cfg.episode_duration / kDt)) + 1;
    std::vector<double> speed_a(static_cast<std::size_t>(steps)), speed_b(static_cast<std::size_t>(steps));
    double sa = sa0, sb = sb0, vb_t = vb;
    for (int i = 0; i < steps; ++i) {
        speed_a[static_cast<std::size_t>(i)] = va;
        speed_b[static_cast<std::size_t>(i)] = vb_t;
        // Junction-relative positions give the merge ordering.
        const double rel_a = sa - junc_a;
        const double rel_b = sb - junc_b;
        double accel;
        if (rel_a > rel_b) {
            accel = idm_accel(vb_t, vb, rel_a - rel_b - kCarLength, vb_t - va, idm);
        } else {
            accel = idm_accel(vb_t, vb, 1e18, 0.0, idm);
        }
        sa += va * kDt;
        sb += vb_t * kDt;
        vb_t = std::max(0.0, vb_t + accel * kDt);
    }
    out.tracks.push_back(track_from_path(track_base, pa, integrate_speeds(sa0, speed_a), frame_offset));
    out.tracks.push_back(track_from_path(track_base + 1, pb, integrate_speeds(sb0, speed_b), frame_offset));
    return out;
}

}  // namespace detail

/// Generates a deterministic synthetic dataset: one map holding every
/// episode's lanes (episodes spaced 1 km and 100 s apart) plus all tracks.
inline SynthResult generate_synthetic(const SynthConfig& cfg) {
    cfg.validate();
    SynthResult out;
    static const SynthConfig::Family kMixOrder[4] = {
        SynthConfig::Family::follow_brake, SynthConfig::Family::lone_curve, SynthConfig::Family::crossing,
        SynthConfig::Family::lane_merge};

    int lane_base = 0;
    std::int64_t track_base = 0;
    for (int e = 0; e < cfg.n_episodes; ++e) {
        const SynthConfig::Family fam =
            cfg.family == SynthConfig::Family::mixed ? kMixOrder[e % 4] : cfg.family;
        Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(e)));
        const Vec2 origin{detail::kEpisodeSpacing * static_cast<double>(e), 0.0};
        const std::int64_t frame_offset = detail::kEpisodeFrameOffset * static_cast<std::int64_t>(e);

        detail::EpisodeBuild build;
        switch (fam) {
            case SynthConfig::Family::follow_brake:
                build = detail::build_follow_brake(rng, cfg, origin, frame_offset, lane_base, track_base);
                break;
            case SynthConfig::Family::lone_curve:
                build = detail::build_lone_curve(rng, cfg, origin, frame_offset, lane_base, track_base);
                break;
            case SynthConfig::Family::crossing:
                build = detail::build_crossing(rng, cfg, origin, frame_offset, lane_base, track_base);
                break;
            case SynthConfig::Family::lane_merge:
                build = detail::build_lane_merge(rng, cfg, origin, frame_offset, lane_base, track_base);
                break;
            case SynthConfig::Family::mixed:
                throw ConfigError("unreachable");
        }

        EpisodeMeta meta;
        meta.id = e;
        meta.family = SynthConfig::family_name(fam);
        for (auto& lane : build.lanes) {
            meta.lane_ids.push_back(lane.id);
            out.map.lanes.push_back(std::move(lane));
        }
        for (auto& p : build.successors) out.map.successor_pairs.push_back(p);
        for (auto& p : build.adjacent_left) out.map.adjacent_left_pairs.push_back(p);
        for (auto& t : build.tracks) {
            meta.track_ids.push_back(t.id);
            out.tracks.tracks.emplace(t.id, std::move(t));
        }
        lane_base += static_cast<int>(build.lanes.size());
        track_base += static_cast<std::int64_t>(build.tracks.size());
        out.episodes.push_back(std::move(meta));
    }
    out.map.finalize();
    return out;
}

// Episode metadata sidecar (family labels for evaluation grouping).

inline void save_episode_meta(const std::vector<EpisodeMeta>& episodes, const std::string& config_hash,
                              const std::string& path) {
    nlohmann::json j;
    j["config_hash"] = config_hash;
    auto& arr = j["episodes"] = nlohmann::json::array();
    for (const auto& e : episodes) {
        nlohmann::json je;
        je["id"] = e.id;
        je["family"] = e.family;
        je["tracks"] = e.track_ids;
        je["lanes"] = e.lane_ids;
        arr.push_back(std::move(je));
    }
    write_file_atomic(path, j.dump(2) + "\n");
}

struct EpisodeMetaFile {
    std::string config_hash;
    std::vector<EpisodeMeta> episodes;

    /// Family label of a track id, or "" when unknown.
    std::string family_of_track(std::int64_t track_id) const {
        for (const auto& e : episodes) {
            for (auto id : e.track_ids) {
                if (id == track_id) return e.family;
            }
        }
        return "";
    }
};

inline EpisodeMetaFile load_episode_meta(const std::string& path) {
    EpisodeMetaFile out;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("meta " + path + ": " + e.what());
    }
    out.config_hash = j.value("config_hash", "");
    for (const auto& je : j.value("episodes", nlohmann::json::array())) {
        EpisodeMeta e;
        e.id = je.at("id").get<int>();
        e.family = je.at("family").get<std::string>();
        e.track_ids = je.value("tracks", std::vector<std::int64_t>{});
        e.lane_ids = je.value("lanes", std::vector<int>{});
        out.episodes.push_back(std::move(e));
    }
    return out;
}

}  // namespace scenemine
