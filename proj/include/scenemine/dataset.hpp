#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "scenemine/common.hpp"
#include "scenemine/lane_map.hpp"
#include "scenemine/raster.hpp"
#include "scenemine/scene_graph.hpp"
#include "scenemine/synth.hpp"
#include "scenemine/tracks.hpp"

namespace scenemine {

/// One model input/target pair: graph history, ego-centric raster, and the
/// future velocity sequence in the ego frame at t0.
///
/// Velocity convention: component k of the target is the world velocity at
/// frame t0+k rotated by -heading(t0); integrating p_{k+1} = p_k + v_k * dt
/// from the t0 position reproduces the recorded future positions.
struct Sample {
    std::int64_t ego_id = 0;
    std::int64_t t0 = 0;
    std::string family;  // episode label when known, else empty

    std::vector<std::shared_ptr<const SceneGraph>> graphs;  // oldest first, history_len entries
    RasterImage raster;

    std::vector<double> truth_velocity;  // interleaved (vx, vy), 2 * future_len
    Pose start;                          // ego pose at t0
    Vec2 start_velocity_ego;             // ego-frame velocity at t0 (baseline input)
    std::vector<Vec2> truth_positions;   // future_len world positions
    double truth_final_speed = 0.0;

    int future_len() const { return static_cast<int>(truth_velocity.size() / 2); }
    std::string id() const { return std::to_string(ego_id) + "@" + std::to_string(t0); }
};

/// Builds full samples for the given windows. Graphs are built once per frame
/// and shared across windows; `graph_cache` supplies precomputed graphs.
inline std::vector<Sample> build_samples(const TrackSet& tracks, const LaneMap& map,
                                         const std::vector<SampleWindow>& windows, const RasterConfig& raster_cfg,
                                         const EpisodeMetaFile* meta = nullptr,
                                         const GraphCache* graph_cache = nullptr) {
    std::map<std::int64_t, std::shared_ptr<const SceneGraph>> frame_graphs;
    auto graph_at = [&](std::int64_t frame) -> std::shared_ptr<const SceneGraph> {
        auto it = frame_graphs.find(frame);
        if (it != frame_graphs.end()) return it->second;
        std::shared_ptr<const SceneGraph> g;
        if (graph_cache) {
            auto cit = graph_cache->by_frame.find(frame);
            if (cit != graph_cache->by_frame.end()) g = std::make_shared<const SceneGraph>(cit->second);
        }
        if (!g) g = std::make_shared<const SceneGraph>(build_scene_graph(map, states_at_frame(tracks, frame)));
        frame_graphs.emplace(frame, g);
        return g;
    };

    std::vector<Sample> out;
    out.reserve(windows.size());
    for (const auto& w : windows) {
        const auto it = tracks.tracks.find(w.ego_id);
        if (it == tracks.tracks.end()) throw InputError("build_samples: unknown ego track " + std::to_string(w.ego_id));
        const Track& ego = it->second;
        if (!ego.covers(w.t0 - w.history_len + 1, w.t0 + w.future_len)) {
            throw InputError("build_samples: window " + w.id() + " not covered by its ego track");
        }
        Sample s;
        s.ego_id = w.ego_id;
        s.t0 = w.t0;
        if (meta) s.family = meta->family_of_track(w.ego_id);

        for (int k = w.history_len - 1; k >= 0; --k) s.graphs.push_back(graph_at(w.t0 - k));
        s.raster = rasterize(map, tracks, w, raster_cfg);

        const TrackState& now = ego.at_frame(w.t0);
        s.start = Pose{now.x, now.y, now.heading};
        s.start_velocity_ego = now.velocity().rotated(-now.heading);
        s.truth_velocity.reserve(2 * static_cast<std::size_t>(w.future_len));
        for (int k = 0; k < w.future_len; ++k) {
            const TrackState& st = ego.at_frame(w.t0 + k);
            const Vec2 v = st.velocity().rotated(-now.heading);
            s.truth_velocity.push_back(v.x);
            s.truth_velocity.push_back(v.y);
            s.truth_positions.push_back(ego.at_frame(w.t0 + 1 + k).position());
        }
        s.truth_final_speed = ego.at_frame(w.t0 + w.future_len).speed();
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset splitting
// ---------------------------------------------------------------------------

struct SplitIndices {
    std::vector<std::size_t> train, val, holdout;
};

/// Seeded-shuffle split into train/val/holdout. Val and holdout sizes round
/// to the nearest integer; the remainder goes to train.
inline SplitIndices split_dataset(std::size_t n, const std::array<double, 3>& fractions, std::uint64_t seed) {
    if (n == 0) throw InputError("split_dataset: empty dataset");
    const double sum = fractions[0] + fractions[1] + fractions[2];
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split_dataset: fractions must sum to 1");
    for (double f : fractions) {
        if (f < 0.0) throw ConfigError("split_dataset: negative fraction");
    }
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(seed);
    rng.shuffle(idx);

    const auto n_val = static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(n)));
    const auto n_hold = static_cast<std::size_t>(std::llround(fractions[2] * static_cast<double>(n)));
    if (n_val + n_hold > n) throw ConfigError("split_dataset: rounding exceeded dataset size");
    const std::size_t n_train = n - n_val - n_hold;
    if (fractions[1] > 0.0 && n_val == 0) warn("split_dataset: validation split rounded to zero samples");
    if (fractions[2] > 0.0 && n_hold == 0) warn("split_dataset: holdout split rounded to zero samples");

    SplitIndices out;
    out.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.val.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                   idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    out.holdout.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
    return out;
}

}  // namespace scenemine
