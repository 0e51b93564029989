#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "scenemine/common.hpp"

namespace scenemine {

enum class AgentClass { car, truck, pedestrian, bike };

inline const char* agent_class_name(AgentClass c) {
    switch (c) {
        case AgentClass::car: return "car";
        case AgentClass::truck: return "truck";
        case AgentClass::pedestrian: return "pedestrian";
        case AgentClass::bike: return "bike";
    }
    return "car";
}

/// Unknown strings map to car (with a warning from the CSV loader).
inline AgentClass agent_class_from_name(const std::string& s, bool* known = nullptr) {
    if (known) *known = true;
    if (s == "car") return AgentClass::car;
    if (s == "truck") return AgentClass::truck;
    if (s == "pedestrian") return AgentClass::pedestrian;
    if (s == "bike") return AgentClass::bike;
    if (known) *known = false;
    return AgentClass::car;
}

/// One object-list row: pose, velocity, and extent at a 10 Hz frame.
struct TrackState {
    std::int64_t track_id = 0;
    std::int64_t frame = 0;  // 10 Hz index
    double x = 0, y = 0;     // meters, world frame
    double vx = 0, vy = 0;   // m/s
    double heading = 0;      // radians, (-pi, pi]
    double length = 0, width = 0;
    AgentClass agent_class = AgentClass::car;

    double speed() const { return std::hypot(vx, vy); }
    Vec2 position() const { return {x, y}; }
    Vec2 velocity() const { return {vx, vy}; }
};

struct Track {
    std::int64_t id = 0;
    std::vector<TrackState> states;  // contiguous, strictly increasing frames

    std::int64_t first_frame() const { return states.front().frame; }
    std::int64_t last_frame() const { return states.back().frame; }

    bool covers(std::int64_t from, std::int64_t to) const {
        return !states.empty() && first_frame() <= from && last_frame() >= to;
    }

    const TrackState& at_frame(std::int64_t frame) const {
        return states.at(static_cast<std::size_t>(frame - first_frame()));
    }

    bool has_frame(std::int64_t frame) const {
        return !states.empty() && frame >= first_frame() && frame <= last_frame();
    }
};

struct TrackSet {
    std::map<std::int64_t, Track> tracks;
    double frame_period = 0.1;  // seconds
    std::string config_hash;    // carried through export for cache validation
};

/// One training/evaluation window: `history_len` observed steps ending at t0
/// plus `future_len` steps to predict.
struct SampleWindow {
    std::int64_t ego_id = 0;
    std::int64_t t0 = 0;
    int history_len = 10;
    int future_len = 30;

    std::string id() const { return std::to_string(ego_id) + "@" + std::to_string(t0); }
};

// ---------------------------------------------------------------------------
// CSV format:
//   track_id,frame_id,timestamp_ms,agent_type,x,y,vx,vy,psi_rad,length,width
// An optional leading "# config_hash=..." comment line is preserved on export.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline double parse_num(const std::string& s, int line_no, const char* col) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ParseError("line " + std::to_string(line_no) + ": bad value '" + s + "' for column " + col);
    }
}

inline std::int64_t parse_int(const std::string& s, int line_no, const char* col) {
    try {
        std::size_t pos = 0;
        const std::int64_t v = std::stoll(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ParseError("line " + std::to_string(line_no) + ": bad integer '" + s + "' for column " + col);
    }
}

constexpr const char* kTrackColumns[11] = {"track_id", "frame_id", "timestamp_ms", "agent_type", "x",     "y",
                                           "vx",       "vy",       "psi_rad",      "length",     "width"};

/// Linear interpolation of a track onto the 100 ms grid. Inputs already on
/// the grid pass through bit-identically.
inline Track resample_track_10hz(const Track& raw, const std::vector<std::int64_t>& timestamps_ms) {
    bool on_grid = true;
    for (std::size_t i = 0; i < timestamps_ms.size(); ++i) {
        if (timestamps_ms[i] % 100 != 0) on_grid = false;
        if (i > 0 && timestamps_ms[i] - timestamps_ms[i - 1] != 100) on_grid = false;
    }
    if (on_grid) {
        Track t = raw;
        for (std::size_t i = 0; i < t.states.size(); ++i) t.states[i].frame = timestamps_ms[i] / 100;
        return t;
    }
    Track out;
    out.id = raw.id;
    const std::int64_t t_begin = (timestamps_ms.front() + 99) / 100 * 100;
    const std::int64_t t_end = timestamps_ms.back() / 100 * 100;
    std::size_t j = 0;
    for (std::int64_t ts = t_begin; ts <= t_end; ts += 100) {
        while (j + 1 < timestamps_ms.size() && timestamps_ms[j + 1] < ts) ++j;
        const std::int64_t ta = timestamps_ms[j];
        const std::int64_t tb = timestamps_ms[std::min(j + 1, timestamps_ms.size() - 1)];
        const TrackState& a = raw.states[j];
        const TrackState& b = raw.states[std::min(j + 1, raw.states.size() - 1)];
        const double u = tb == ta ? 0.0 : static_cast<double>(ts - ta) / static_cast<double>(tb - ta);
        TrackState s = a;
        s.frame = ts / 100;
        s.x = a.x + u * (b.x - a.x);
        s.y = a.y + u * (b.y - a.y);
        s.vx = a.vx + u * (b.vx - a.vx);
        s.vy = a.vy + u * (b.vy - a.vy);
        s.heading = wrap_angle(a.heading + u * wrap_angle(b.heading - a.heading));
        out.states.push_back(s);
    }
    return out;
}

}  // namespace detail

inline TrackSet load_tracks_csv(std::istream& in) {
    TrackSet ts;
    std::string line;
    int line_no = 0;
    bool header_seen = false;
    std::vector<int> col_of(11, -1);  // canonical column -> file column
    struct RawTrack {
        Track track;
        std::vector<std::int64_t> timestamps;
    };
    std::map<std::int64_t, RawTrack> raw;
    std::vector<std::int64_t> order;

    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') {
            const std::string key = "# config_hash=";
            if (line.rfind(key, 0) == 0) ts.config_hash = line.substr(key.size());
            continue;
        }
        auto cells = detail::split_csv_line(line);
        if (!header_seen) {
            header_seen = true;
            for (int c = 0; c < 11; ++c) {
                for (std::size_t f = 0; f < cells.size(); ++f) {
                    if (cells[f] == detail::kTrackColumns[c]) col_of[c] = static_cast<int>(f);
                }
                if (col_of[c] < 0) {
                    throw ParseError("line " + std::to_string(line_no) + ": missing column '" +
                                     detail::kTrackColumns[c] + "'");
                }
            }
            continue;
        }
        if (cells.size() < 11) {
            throw ParseError("line " + std::to_string(line_no) + ": expected 11 columns, got " +
                             std::to_string(cells.size()));
        }
        auto cell = [&](int c) -> const std::string& { return cells[static_cast<std::size_t>(col_of[c])]; };
        TrackState s;
        s.track_id = detail::parse_int(cell(0), line_no, "track_id");
        s.frame = detail::parse_int(cell(1), line_no, "frame_id");
        const std::int64_t timestamp = detail::parse_int(cell(2), line_no, "timestamp_ms");
        bool known = true;
        s.agent_class = agent_class_from_name(cell(3), &known);
        if (!known) {
            warn("line " + std::to_string(line_no) + ": unknown agent_type '" + cell(3) + "' mapped to car");
        }
        s.x = detail::parse_num(cell(4), line_no, "x");
        s.y = detail::parse_num(cell(5), line_no, "y");
        s.vx = detail::parse_num(cell(6), line_no, "vx");
        s.vy = detail::parse_num(cell(7), line_no, "vy");
        s.heading = wrap_angle(detail::parse_num(cell(8), line_no, "psi_rad"));
        s.length = detail::parse_num(cell(9), line_no, "length");
        s.width = detail::parse_num(cell(10), line_no, "width");
        if (s.length <= 0.0 || s.width <= 0.0) {
            throw IntegrityError("line " + std::to_string(line_no) + ": non-positive extent for track " +
                                 std::to_string(s.track_id));
        }
        auto [it, inserted] = raw.try_emplace(s.track_id);
        if (inserted) {
            it->second.track.id = s.track_id;
            order.push_back(s.track_id);
        }
        auto& rt = it->second;
        if (!rt.track.states.empty() && s.frame <= rt.track.states.back().frame) {
            throw IntegrityError("track " + std::to_string(s.track_id) + ": non-monotonic frame " +
                                 std::to_string(s.frame) + " at line " + std::to_string(line_no));
        }
        rt.track.states.push_back(s);
        rt.timestamps.push_back(timestamp);
    }
    if (!header_seen) throw ParseError("empty input: missing header row");

    for (std::int64_t id : order) {
        Track t = detail::resample_track_10hz(raw[id].track, raw[id].timestamps);
        if (t.states.empty()) {
            warn("track " + std::to_string(id) + ": too short to resample to 10 Hz, dropped");
            continue;
        }
        for (std::size_t i = 1; i < t.states.size(); ++i) {
            if (t.states[i].frame != t.states[i - 1].frame + 1) {
                throw IntegrityError("track " + std::to_string(id) + ": frame gap at " +
                                     std::to_string(t.states[i].frame));
            }
        }
        ts.tracks.emplace(id, std::move(t));
    }
    return ts;
}

inline TrackSet load_tracks(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open tracks file: " + path);
    try {
        return load_tracks_csv(in);
    } catch (ParseError& e) {
        throw ParseError(path + ": " + e.what());
    }
}

inline void export_tracks_csv(const TrackSet& ts, std::ostream& out) {
    if (!ts.config_hash.empty()) out << "# config_hash=" << ts.config_hash << "\n";
    out << "track_id,frame_id,timestamp_ms,agent_type,x,y,vx,vy,psi_rad,length,width\n";
    for (const auto& [id, track] : ts.tracks) {
        for (const auto& s : track.states) {
            out << id << ',' << s.frame << ',' << s.frame * 100 << ',' << agent_class_name(s.agent_class) << ','
                << format_double(s.x) << ',' << format_double(s.y) << ',' << format_double(s.vx) << ','
                << format_double(s.vy) << ',' << format_double(s.heading) << ',' << format_double(s.length) << ','
                << format_double(s.width) << "\n";
        }
    }
}

inline void export_tracks(const TrackSet& ts, const std::string& path) {
    std::ostringstream os;
    export_tracks_csv(ts, os);
    write_file_atomic(path, os.str());
}

// ---------------------------------------------------------------------------
// Windowing
// ---------------------------------------------------------------------------

/// Enumerates fully covered windows per track: t0 such that the track spans
/// [t0 - history_len + 1, t0 + future_len], stepping by `stride`.
inline std::vector<SampleWindow> window_samples(const TrackSet& ts, int history_len = 10, int future_len = 30,
                                                int stride = 1) {
    if (history_len < 1 || future_len < 1 || stride < 1) {
        throw ConfigError("window_samples: history_len, future_len, and stride must be >= 1");
    }
    std::vector<SampleWindow> out;
    for (const auto& [id, track] : ts.tracks) {
        if (track.states.empty()) continue;
        const std::int64_t lo = track.first_frame() + history_len - 1;
        const std::int64_t hi = track.last_frame() - future_len;
        for (std::int64_t t0 = lo; t0 <= hi; t0 += stride) {
            out.push_back(SampleWindow{id, t0, history_len, future_len});
        }
    }
    return out;
}

/// All states present at one frame, ordered by track id.
inline std::vector<TrackState> states_at_frame(const TrackSet& ts, std::int64_t frame) {
    std::vector<TrackState> out;
    for (const auto& [id, track] : ts.tracks) {
        if (track.has_frame(frame)) out.push_back(track.at_frame(frame));
    }
    return out;
}

}  // namespace scenemine
