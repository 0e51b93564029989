#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scenemine/common.hpp"
#include "scenemine/lane_map.hpp"
#include "scenemine/tracks.hpp"

namespace scenemine {

/// Node input: speed plus one-hot class, feature width 5.
struct NodeFeatures {
    static constexpr int kWidth = 5;

    double velocity = 0.0;  // norm of the velocity vector, m/s
    std::array<double, 4> class_onehot{1.0, 0.0, 0.0, 0.0};  // car, truck, pedestrian, bike

    std::array<double, kWidth> to_array() const {
        return {velocity, class_onehot[0], class_onehot[1], class_onehot[2], class_onehot[3]};
    }
};

/// Merged directed edge, feature width 7. Certainties live in [0,1]; distance
/// slots are zero whenever their certainty is zero.
struct EdgeFeatures {
    static constexpr int kWidth = 7;

    double lon_certainty = 0.0;
    double lat_certainty = 0.0;
    double int_certainty = 0.0;
    double path_distance = 0.0;            // signed, + when the target is ahead
    double int_path_distance = 0.0;        // origin to the lane crossing point
    double centerline_distance = 0.0;      // origin's lateral offset, left +
    double int_centerline_distance = 0.0;

    std::array<double, kWidth> to_array() const {
        return {lon_certainty,     lat_certainty,        int_certainty,          path_distance,
                int_path_distance, centerline_distance, int_centerline_distance};
    }
};

struct SceneGraphNode {
    std::int64_t id = 0;
    NodeFeatures features;
};

struct SceneGraphEdge {
    std::int64_t origin = 0;
    std::int64_t target = 0;
    EdgeFeatures features;
};

/// Per-timestep directed graph over traffic participants. At most one edge
/// per ordered pair, no self edges.
struct SceneGraph {
    std::int64_t frame = 0;
    std::vector<SceneGraphNode> nodes;  // sorted by id
    std::vector<SceneGraphEdge> edges;  // sorted by (origin, target)

    const SceneGraphNode* find_node(std::int64_t id) const {
        for (const auto& n : nodes)
            if (n.id == id) return &n;
        return nullptr;
    }
};

/// One typed relation between a pair of projection identities, before merging.
struct RawRelation {
    enum class Type { longitudinal, lateral, intersecting };
    Type type = Type::longitudinal;
    double weight = 0.0;       // product of the two projection certainties
    double distance = 0.0;     // meaning depends on type
    double origin_d = 0.0;     // origin identity's centerline offset
    double origin_certainty = 0.0;
};

/// Features carry no information below a micrometer; rounding them makes
/// graph features bit-stable under rigid transforms of the whole scene.
inline double quantize_feature(double v) { return std::round(v * 1e6) / 1e6; }

/// Collapses the raw typed relations of one ordered pair into edge features:
/// per-type certainty is the clamped weight sum, distances are weight-weighted
/// means, centerline offsets come from the strongest participating identity.
inline EdgeFeatures merge_parallel_edges(const std::vector<RawRelation>& relations) {
    EdgeFeatures out;
    double path_weight = 0.0, path_acc = 0.0;
    double int_weight = 0.0, int_acc = 0.0;
    double best_path_cert = -1.0, best_int_cert = -1.0;
    for (const auto& r : relations) {
        switch (r.type) {
            case RawRelation::Type::longitudinal:
            case RawRelation::Type::lateral: {
                if (r.type == RawRelation::Type::longitudinal) {
                    out.lon_certainty += r.weight;
                } else {
                    out.lat_certainty += r.weight;
                }
                path_weight += r.weight;
                path_acc += r.weight * r.distance;
                if (r.origin_certainty > best_path_cert) {
                    best_path_cert = r.origin_certainty;
                    out.centerline_distance = r.origin_d;
                }
                break;
            }
            case RawRelation::Type::intersecting: {
                out.int_certainty += r.weight;
                int_weight += r.weight;
                int_acc += r.weight * r.distance;
                if (r.origin_certainty > best_int_cert) {
                    best_int_cert = r.origin_certainty;
                    out.int_centerline_distance = r.origin_d;
                }
                break;
            }
        }
    }
    out.lon_certainty = std::min(1.0, out.lon_certainty);
    out.lat_certainty = std::min(1.0, out.lat_certainty);
    out.int_certainty = std::min(1.0, out.int_certainty);
    out.path_distance = path_weight > 0.0 ? path_acc / path_weight : 0.0;
    out.int_path_distance = int_weight > 0.0 ? int_acc / int_weight : 0.0;

    out.lon_certainty = quantize_feature(out.lon_certainty);
    out.lat_certainty = quantize_feature(out.lat_certainty);
    out.int_certainty = quantize_feature(out.int_certainty);
    out.path_distance = quantize_feature(out.path_distance);
    out.int_path_distance = quantize_feature(out.int_path_distance);
    out.centerline_distance = quantize_feature(out.centerline_distance);
    out.int_centerline_distance = quantize_feature(out.int_centerline_distance);
    return out;
}

/// Builds the scene graph for one frame. Participants with no candidate lane
/// become isolated nodes. Relation typing: same lane or successor chain is
/// longitudinal, adjacent lanes lateral, crossing lanes intersecting.
inline SceneGraph build_scene_graph(const LaneMap& map, const std::vector<TrackState>& states) {
    SceneGraph g;
    if (states.empty()) return g;
    g.frame = states.front().frame;
    for (const auto& s : states) {
        if (s.frame != g.frame) throw IntegrityError("build_scene_graph: states span multiple frames");
    }

    struct Participant {
        const TrackState* state;
        std::vector<ProjectionIdentity> identities;
    };
    std::vector<Participant> parts;
    parts.reserve(states.size());
    for (const auto& s : states) {
        Participant p;
        p.state = &s;
        p.identities = map.candidate_projections(s.position(), s.heading);
        for (auto& pi : p.identities) pi.vehicle_id = s.track_id;
        parts.push_back(std::move(p));
    }
    std::sort(parts.begin(), parts.end(),
              [](const Participant& a, const Participant& b) { return a.state->track_id < b.state->track_id; });

    for (const auto& p : parts) {
        SceneGraphNode node;
        node.id = p.state->track_id;
        node.features.velocity = quantize_feature(p.state->speed());
        node.features.class_onehot = {0.0, 0.0, 0.0, 0.0};
        node.features.class_onehot[static_cast<std::size_t>(p.state->agent_class)] = 1.0;
        g.nodes.push_back(node);
    }

    for (const auto& origin : parts) {
        for (const auto& target : parts) {
            if (origin.state->track_id == target.state->track_id) continue;
            std::vector<RawRelation> relations;
            for (const auto& mi : origin.identities) {
                for (const auto& mj : target.identities) {
                    const double w = mi.certainty * mj.certainty;
                    // Longitudinal: same lane or connected by a successor chain.
                    if (auto ld = map.longitudinal_distance(mi.coord, mj.coord)) {
                        relations.push_back({RawRelation::Type::longitudinal, w, *ld, mi.coord.d, mi.certainty});
                    }
                    // Lateral: adjacent lanes; distance measured along the origin's lane.
                    if (map.adjacent(mi.coord.lane_id, mj.coord.lane_id)) {
                        const FrenetCoord on_origin = map.project(mi.coord.lane_id, target.state->position());
                        relations.push_back(
                            {RawRelation::Type::lateral, w, on_origin.s - mi.coord.s, mi.coord.d, mi.certainty});
                    }
                    // Intersecting: origin upstream of a crossing with the target's lane.
                    if (mi.coord.lane_id != mj.coord.lane_id) {
                        if (auto cd = map.crossing_distance(mi.coord, mj.coord.lane_id)) {
                            relations.push_back({RawRelation::Type::intersecting, w, *cd, mi.coord.d, mi.certainty});
                        }
                    }
                }
            }
            if (!relations.empty()) {
                g.edges.push_back(
                    {origin.state->track_id, target.state->track_id, merge_parallel_edges(relations)});
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// JSON-lines cache: one meta line, then one graph per line.
// ---------------------------------------------------------------------------

inline nlohmann::json scene_graph_to_json(const SceneGraph& g) {
    nlohmann::json j;
    j["t"] = g.frame;
    auto& nodes = j["nodes"] = nlohmann::json::array();
    for (const auto& n : g.nodes) {
        nodes.push_back({{"id", n.id},
                         {"velocity", n.features.velocity},
                         {"class", n.features.class_onehot}});
    }
    auto& edges = j["edges"] = nlohmann::json::array();
    for (const auto& e : g.edges) {
        edges.push_back({{"origin", e.origin}, {"target", e.target}, {"features", e.features.to_array()}});
    }
    return j;
}

inline SceneGraph scene_graph_from_json(const nlohmann::json& j) {
    SceneGraph g;
    g.frame = j.at("t").get<std::int64_t>();
    for (const auto& jn : j.at("nodes")) {
        SceneGraphNode n;
        n.id = jn.at("id").get<std::int64_t>();
        n.features.velocity = jn.at("velocity").get<double>();
        const auto cls = jn.at("class").get<std::vector<double>>();
        for (std::size_t i = 0; i < 4 && i < cls.size(); ++i) n.features.class_onehot[i] = cls[i];
        g.nodes.push_back(n);
    }
    for (const auto& je : j.at("edges")) {
        SceneGraphEdge e;
        e.origin = je.at("origin").get<std::int64_t>();
        e.target = je.at("target").get<std::int64_t>();
        const auto f = je.at("features").get<std::vector<double>>();
        if (f.size() != EdgeFeatures::kWidth) throw ParseError("graph edge: expected 7 features");
        e.features.lon_certainty = f[0];
        e.features.lat_certainty = f[1];
        e.features.int_certainty = f[2];
        e.features.path_distance = f[3];
        e.features.int_path_distance = f[4];
        e.features.centerline_distance = f[5];
        e.features.int_centerline_distance = f[6];
        g.edges.push_back(e);
    }
    return g;
}

inline void write_graphs_jsonl(std::ostream& out, const std::vector<SceneGraph>& graphs,
                               const std::string& config_hash) {
    nlohmann::json meta;
    meta["format"] = "scenemine-graphs-v1";
    meta["config_hash"] = config_hash;
    out << meta.dump() << "\n";
    for (const auto& g : graphs) out << scene_graph_to_json(g).dump() << "\n";
}

struct GraphCache {
    std::string config_hash;
    std::map<std::int64_t, SceneGraph> by_frame;
};

inline GraphCache read_graphs_jsonl(std::istream& in) {
    GraphCache cache;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("graphs line " + std::to_string(line_no) + ": " + e.what());
        }
        if (line_no == 1 && j.contains("format")) {
            cache.config_hash = j.value("config_hash", "");
            continue;
        }
        SceneGraph g = scene_graph_from_json(j);
        cache.by_frame.emplace(g.frame, std::move(g));
    }
    return cache;
}

}  // namespace scenemine
