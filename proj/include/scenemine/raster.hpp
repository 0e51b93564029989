#pragma once

#include <algorithm>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "scenemine/common.hpp"
#include "scenemine/lane_map.hpp"
#include "scenemine/tracks.hpp"

namespace scenemine {

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;

    Rgb scaled(double f) const {
        auto s = [f](std::uint8_t c) {
            return static_cast<std::uint8_t>(std::clamp(std::llround(c * f), 0ll, 255ll));
        };
        return {s(r), s(g), s(b)};
    }
    bool operator==(const Rgb&) const = default;
};

/// Ego-centric bird's-eye rendering parameters. The image edge covers
/// resolution * pixel_size meters.
struct RasterConfig {
    int resolution = 96;        // pixels per side (224 for full fidelity)
    double pixel_size = 0.25;   // meters per pixel
    int history_states = 10;    // past rectangles per participant

    Rgb background{0, 0, 0};
    Rgb lane_edge{255, 255, 255};
    Rgb marking{128, 128, 128};
    Rgb virtual_boundary{0, 0, 255};
    Rgb ego{255, 0, 0};

    static constexpr int kDashOn = 8;   // px
    static constexpr int kDashOff = 8;  // px

    void validate() const {
        if (resolution <= 0 || resolution % 2 != 0) throw ConfigError("raster: resolution must be even and > 0");
        if (pixel_size <= 0.0) throw ConfigError("raster: pixel_size must be > 0");
        if (history_states < 0) throw ConfigError("raster: history_states must be >= 0");
    }

    double extent() const { return resolution * pixel_size; }
};

struct RasterImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

    static RasterImage filled(int w, int h, Rgb c) {
        RasterImage img;
        img.width = w;
        img.height = h;
        img.rgb.resize(static_cast<std::size_t>(w) * h * 3);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) img.set(x, y, c);
        return img;
    }

    bool in_bounds(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }

    void set(int x, int y, Rgb c) {
        if (!in_bounds(x, y)) return;
        const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
        rgb[i] = c.r;
        rgb[i + 1] = c.g;
        rgb[i + 2] = c.b;
    }

    Rgb at(int x, int y) const {
        const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
        return {rgb[i], rgb[i + 1], rgb[i + 2]};
    }
};

/// Fading law for motion history: age 0 renders at full brightness, the
/// oldest state at 0.1.
inline double fading_factor(int age, int history_states) {
    if (history_states <= 0) return 1.0;
    return 1.0 - 0.9 * static_cast<double>(age) / static_cast<double>(history_states);
}

/// Deterministic per-track color using only the G/B channels (red is the ego's).
inline Rgb track_color(std::int64_t track_id) {
    const std::uint64_t h = mix_seed(0x5ce9e8f2u, static_cast<std::uint64_t>(track_id));
    const auto g = static_cast<std::uint8_t>(64 + (h >> 8) % 192);
    const auto b = static_cast<std::uint8_t>(64 + (h >> 24) % 192);
    return {0, g, b};
}

/// Continuous pixel coordinates: ego at the image center, ego heading along
/// +x, image y growing downward.
inline Vec2 world_to_pixel_f(const Pose& ego, Vec2 point, const RasterConfig& cfg) {
    const Vec2 rel = (point - Vec2{ego.x, ego.y}).rotated(-ego.heading);
    const double c = cfg.resolution / 2;
    return {c + rel.x / cfg.pixel_size, c - rel.y / cfg.pixel_size};
}

inline std::pair<int, int> world_to_pixel(const Pose& ego, Vec2 point, const RasterConfig& cfg) {
    const Vec2 p = world_to_pixel_f(ego, point, cfg);
    return {static_cast<int>(std::llround(p.x)), static_cast<int>(std::llround(p.y))};
}

namespace detail {

/// Bresenham stroke with an optional dash pattern whose phase accumulates
/// along consecutive segments (reset per polyline).
struct LinePen {
    RasterImage* img;
    Rgb color;
    bool dashed = false;
    int phase = 0;

    void segment(Vec2 a, Vec2 b) {
        int x0 = static_cast<int>(std::llround(a.x));
        int y0 = static_cast<int>(std::llround(a.y));
        const int x1 = static_cast<int>(std::llround(b.x));
        const int y1 = static_cast<int>(std::llround(b.y));
        const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
        const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
        int err = dx + dy;
        while (true) {
            const bool on = !dashed || (phase % (RasterConfig::kDashOn + RasterConfig::kDashOff)) < RasterConfig::kDashOn;
            if (on) img->set(x0, y0, color);
            ++phase;
            if (x0 == x1 && y0 == y1) break;
            const int e2 = 2 * err;
            if (e2 >= dy) {
                err += dy;
                x0 += sx;
            }
            if (e2 <= dx) {
                err += dx;
                y0 += sy;
            }
        }
    }
};

/// Fills a convex polygon given in continuous pixel coordinates; a pixel (x,y)
/// is covered when the point (x,y) lies inside under a half-open rule.
inline void fill_convex(RasterImage& img, const std::vector<Vec2>& poly, Rgb color) {
    double ymin = poly[0].y, ymax = poly[0].y;
    for (const auto& p : poly) {
        ymin = std::min(ymin, p.y);
        ymax = std::max(ymax, p.y);
    }
    const int y0 = std::max(0, static_cast<int>(std::ceil(ymin)));
    const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(ymax)) - 1);
    for (int y = y0; y <= y1; ++y) {
        double xl = std::numeric_limits<double>::infinity();
        double xr = -std::numeric_limits<double>::infinity();
        const double fy = static_cast<double>(y);
        for (std::size_t i = 0; i < poly.size(); ++i) {
            const Vec2 p1 = poly[i];
            const Vec2 p2 = poly[(i + 1) % poly.size()];
            if ((p1.y <= fy && p2.y > fy) || (p2.y <= fy && p1.y > fy)) {
                const double x = p1.x + (fy - p1.y) * (p2.x - p1.x) / (p2.y - p1.y);
                xl = std::min(xl, x);
                xr = std::max(xr, x);
            }
        }
        if (xl > xr) continue;
        const int xa = std::max(0, static_cast<int>(std::ceil(xl)));
        const int xb = std::min(img.width - 1, static_cast<int>(std::ceil(xr)) - 1);
        for (int x = xa; x <= xb; ++x) img.set(x, y, color);
    }
}

/// Vehicle rectangle corners in pixel space.
inline std::vector<Vec2> vehicle_polygon(const Pose& ego, const TrackState& s, const RasterConfig& cfg) {
    const double hl = s.length / 2.0, hw = s.width / 2.0;
    const Vec2 fwd = Vec2{1.0, 0.0}.rotated(s.heading);
    const Vec2 left = Vec2{0.0, 1.0}.rotated(s.heading);
    const Vec2 pos = s.position();
    std::vector<Vec2> corners = {
        pos + fwd * hl + left * hw,
        pos + fwd * hl + left * (-hw),
        pos + fwd * (-hl) + left * (-hw),
        pos + fwd * (-hl) + left * hw,
    };
    for (auto& c : corners) c = world_to_pixel_f(ego, c, cfg);
    return corners;
}

/// Offsets a polyline laterally using averaged vertex normals (left positive).
inline std::vector<Vec2> offset_polyline(const std::vector<Vec2>& pts, double offset) {
    std::vector<Vec2> out(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        Vec2 dir{0, 0};
        if (i > 0) {
            const Vec2 d = pts[i] - pts[i - 1];
            const double n = d.norm();
            if (n > 0) dir += Vec2{d.x / n, d.y / n};
        }
        if (i + 1 < pts.size()) {
            const Vec2 d = pts[i + 1] - pts[i];
            const double n = d.norm();
            if (n > 0) dir += Vec2{d.x / n, d.y / n};
        }
        const double n = dir.norm();
        if (n > 0) dir = {dir.x / n, dir.y / n};
        const Vec2 normal{-dir.y, dir.x};
        out[i] = pts[i] + normal * offset;
    }
    return out;
}

inline void stroke_polyline(RasterImage& img, const Pose& ego, const std::vector<Vec2>& world_pts,
                            const RasterConfig& cfg, Rgb color, bool dashed) {
    LinePen pen{&img, color, dashed, 0};
    const double lim = 4.0 * cfg.resolution;
    Vec2 prev = world_to_pixel_f(ego, world_pts[0], cfg);
    for (std::size_t i = 1; i < world_pts.size(); ++i) {
        const Vec2 cur = world_to_pixel_f(ego, world_pts[i], cfg);
        const bool prev_far = prev.x < -lim || prev.x > lim || prev.y < -lim || prev.y > lim;
        const bool cur_far = cur.x < -lim || cur.x > lim || cur.y < -lim || cur.y > lim;
        if (!(prev_far && cur_far)) pen.segment(prev, cur);
        prev = cur;
    }
}

}  // namespace detail

/// Renders the ego-centric scene image at the window's reference frame t0:
/// map markings, fading motion histories, current participants, ego last.
inline RasterImage rasterize(const LaneMap& map, const TrackSet& tracks, const SampleWindow& window,
                             const RasterConfig& cfg) {
    cfg.validate();
    auto ego_it = tracks.tracks.find(window.ego_id);
    if (ego_it == tracks.tracks.end() || !ego_it->second.has_frame(window.t0)) {
        throw InputError("rasterize: ego track " + std::to_string(window.ego_id) + " has no state at frame " +
                         std::to_string(window.t0));
    }
    const TrackState& ego_state = ego_it->second.at_frame(window.t0);
    const Pose ego{ego_state.x, ego_state.y, ego_state.heading};

    RasterImage img = RasterImage::filled(cfg.resolution, cfg.resolution, cfg.background);

    // Map markings: lane boundaries (white, or dashed blue when virtual) and
    // the centerline as a gray marking.
    const double view_margin = cfg.extent() * 0.75;
    for (const auto& lane : map.lanes) {
        if (!map.lane_aabb(lane.id).contains(ego.position(), view_margin + lane.width)) continue;
        const Rgb edge_color = lane.virtual_boundary ? cfg.virtual_boundary : cfg.lane_edge;
        const bool dashed = lane.virtual_boundary;
        detail::stroke_polyline(img, ego, detail::offset_polyline(lane.centerline, lane.width / 2.0), cfg, edge_color,
                                dashed);
        detail::stroke_polyline(img, ego, detail::offset_polyline(lane.centerline, -lane.width / 2.0), cfg, edge_color,
                                dashed);
        detail::stroke_polyline(img, ego, lane.centerline, cfg, cfg.marking, false);
    }

    // Motion history, oldest first so newer states overdraw older ones.
    for (int age = cfg.history_states; age >= 1; --age) {
        const std::int64_t frame = window.t0 - age;
        for (const auto& [id, track] : tracks.tracks) {
            if (!track.has_frame(frame)) continue;
            const TrackState& s = track.at_frame(frame);
            if ((s.position() - ego.position()).norm() > cfg.extent()) continue;
            const Rgb base = id == window.ego_id ? cfg.ego : track_color(id);
            detail::fill_convex(img, detail::vehicle_polygon(ego, s, cfg),
                                base.scaled(fading_factor(age, cfg.history_states)));
        }
    }

    // Current participants, ego drawn last and axis-aligned by construction.
    for (const auto& [id, track] : tracks.tracks) {
        if (id == window.ego_id || !track.has_frame(window.t0)) continue;
        const TrackState& s = track.at_frame(window.t0);
        if ((s.position() - ego.position()).norm() > cfg.extent()) continue;
        detail::fill_convex(img, detail::vehicle_polygon(ego, s, cfg), track_color(id));
    }
    {
        const double c = cfg.resolution / 2;
        const double hl = ego_state.length / (2.0 * cfg.pixel_size);
        const double hw = ego_state.width / (2.0 * cfg.pixel_size);
        detail::fill_convex(img, {{c + hl, c - hw}, {c + hl, c + hw}, {c - hl, c + hw}, {c - hl, c - hw}}, cfg.ego);
    }
    return img;
}

// ---------------------------------------------------------------------------
// PPM (P6) io with an optional config-hash comment
// ---------------------------------------------------------------------------

inline std::string to_ppm(const RasterImage& img, const std::string& config_hash = "") {
    std::ostringstream os;
    os << "P6\n";
    if (!config_hash.empty()) os << "# config_hash=" << config_hash << "\n";
    os << img.width << " " << img.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
    return os.str();
}

inline RasterImage from_ppm(const std::string& data, std::string* config_hash = nullptr) {
    std::istringstream is(data);
    std::string magic;
    is >> magic;
    if (magic != "P6") throw ParseError("PPM: expected P6 header");
    is.get();  // newline
    // Comments may appear between header tokens.
    auto next_token = [&]() {
        std::string tok;
        while (true) {
            const int c = is.peek();
            if (c == '#') {
                std::string line;
                std::getline(is, line);  // line includes the leading '#'
                const std::string key = "# config_hash=";
                if (config_hash && line.rfind(key, 0) == 0) *config_hash = line.substr(key.size());
                continue;
            }
            if (std::isspace(c)) {
                is.get();
                continue;
            }
            is >> tok;
            return tok;
        }
    };
    RasterImage img;
    img.width = std::stoi(next_token());
    img.height = std::stoi(next_token());
    const int maxval = std::stoi(next_token());
    if (maxval != 255) throw ParseError("PPM: expected maxval 255");
    is.get();  // single whitespace before payload
    img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
    is.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
    if (is.gcount() != static_cast<std::streamsize>(img.rgb.size())) throw ParseError("PPM: truncated payload");
    return img;
}

inline void save_ppm(const RasterImage& img, const std::string& path, const std::string& config_hash = "") {
    write_file_atomic(path, to_ppm(img, config_hash));
}

inline RasterImage load_ppm(const std::string& path, std::string* config_hash = nullptr) {
    return from_ppm(read_file(path), config_hash);
}

/// Fraction of pixels whose RGB bytes match exactly.
inline double pixel_match_fraction(const RasterImage& a, const RasterImage& b) {
    if (a.width != b.width || a.height != b.height) return 0.0;
    std::size_t same = 0;
    for (std::size_t i = 0; i < a.rgb.size(); i += 3) {
        if (a.rgb[i] == b.rgb[i] && a.rgb[i + 1] == b.rgb[i + 1] && a.rgb[i + 2] == b.rgb[i + 2]) ++same;
    }
    return static_cast<double>(same) / (static_cast<double>(a.rgb.size()) / 3.0);
}

}  // namespace scenemine
