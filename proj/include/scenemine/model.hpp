#pragma once

#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scenemine/dataset.hpp"
#include "scenemine/nn.hpp"
#include "scenemine/scene_graph.hpp"
#include "scenemine/tensor.hpp"

namespace scenemine {

using ad::Tensor;

/// Architecture hyperparameters. The defaults are the desk-scale setup; the
/// node feature width is fixed at 5 and the edge width at 7 by the scene
/// graph contract.
struct ModelConfig {
    int history_len = 10;
    int future_len = 30;
    int modes = 1;               // parallel decoder heads
    int embed_width = 128;       // snapshot/GRU/fusion embedding width
    int edge_hidden = 32;        // edge-MLP hidden width
    int scorer_hidden = 64;      // attention scorer hidden width
    int decoder_hidden = 256;
    std::string cnn_preset = "small";  // small | micro | vgg16
    int resolution = 96;               // expected raster edge, pixels
    double leaky_slope = 0.01;

    void validate() const {
        if (history_len < 1 || future_len < 1 || modes < 1) throw ConfigError("model: lengths/modes must be >= 1");
        if (embed_width < 1 || edge_hidden < 1 || scorer_hidden < 1 || decoder_hidden < 1) {
            throw ConfigError("model: widths must be >= 1");
        }
        if (cnn_preset != "small" && cnn_preset != "micro" && cnn_preset != "vgg16") {
            throw ConfigError("model: unknown cnn preset '" + cnn_preset + "'");
        }
        if (resolution < 4) throw ConfigError("model: resolution too small");
    }

    nlohmann::json to_json() const {
        return {{"history_len", history_len},   {"future_len", future_len},
                {"modes", modes},               {"embed_width", embed_width},
                {"edge_hidden", edge_hidden},   {"scorer_hidden", scorer_hidden},
                {"decoder_hidden", decoder_hidden}, {"cnn_preset", cnn_preset},
                {"resolution", resolution},     {"leaky_slope", leaky_slope}};
    }

    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig c;
        c.history_len = j.value("history_len", c.history_len);
        c.future_len = j.value("future_len", c.future_len);
        c.modes = j.value("modes", c.modes);
        c.embed_width = j.value("embed_width", c.embed_width);
        c.edge_hidden = j.value("edge_hidden", c.edge_hidden);
        c.scorer_hidden = j.value("scorer_hidden", c.scorer_hidden);
        c.decoder_hidden = j.value("decoder_hidden", c.decoder_hidden);
        c.cnn_preset = j.value("cnn_preset", c.cnn_preset);
        c.resolution = j.value("resolution", c.resolution);
        c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
        c.validate();
        return c;
    }
};

/// Integrates an ego-frame velocity sequence into world positions, one per
/// step: p_{k+1} = p_k + v_k * dt starting from the last observed position.
inline std::vector<Vec2> integrate_trajectory(const std::vector<double>& velocities_ego, const Pose& start,
                                              double dt = 0.1) {
    std::vector<Vec2> out;
    out.reserve(velocities_ego.size() / 2);
    Vec2 p{start.x, start.y};
    for (std::size_t k = 0; k + 1 < velocities_ego.size(); k += 2) {
        const Vec2 v = Vec2{velocities_ego[k], velocities_ego[k + 1]}.rotated(start.heading);
        p += v * dt;
        out.push_back(p);
    }
    return out;
}

/// The repeated-current-velocity baseline over `future_len` steps.
inline std::vector<double> constant_velocity_sequence(const Sample& s) {
    std::vector<double> out(2 * static_cast<std::size_t>(s.future_len()));
    for (int k = 0; k < s.future_len(); ++k) {
        out[2 * static_cast<std::size_t>(k)] = s.start_velocity_ego.x;
        out[2 * static_cast<std::size_t>(k) + 1] = s.start_velocity_ego.y;
    }
    return out;
}

/// Two-branch predictor: an edge-conditioned graph convolution + GRU branch
/// over the social graph history, a CNN branch over the ego-centric raster,
/// attention-weighted fusion, and a velocity-sequence decoder.
class HybridModel {
public:
    // Fixed input conditioning: distances in meters and speeds in m/s are
    // brought to unit scale before entering the MLPs.
    static constexpr double kNodeVelocityScale = 0.1;
    static constexpr double kEdgeDistanceScale = 0.02;
    static constexpr double kEdgeCenterlineScale = 0.2;

    HybridModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
        cfg_.validate();
        Rng rng(mix_seed(seed, 0xa11c));
        const int E = cfg_.embed_width;
        edge_mlp_ = nn::Mlp::create(store_, "graph.edge_mlp", EdgeFeatures::kWidth, cfg_.edge_hidden,
                                    NodeFeatures::kWidth * NodeFeatures::kWidth, rng, cfg_.leaky_slope);
        root_w_ = store_.add("graph.root.w", {NodeFeatures::kWidth, NodeFeatures::kWidth});
        nn::init_xavier(root_w_, NodeFeatures::kWidth, NodeFeatures::kWidth, rng);
        root_b_ = store_.add("graph.root.b", {NodeFeatures::kWidth});
        node_mlp_ = nn::Mlp::create(store_, "graph.node_mlp", NodeFeatures::kWidth, E, E, rng, cfg_.leaky_slope,
                                    /*activate_output=*/true);
        gru1_ = nn::GruWeights::create(store_, "graph.gru1", E, E, rng);
        gru2_ = nn::GruWeights::create(store_, "graph.gru2", E, E, rng);

        build_cnn(rng);
        scorer_ = nn::Mlp::create(store_, "fusion.scorer", E, cfg_.scorer_hidden, 1, rng, cfg_.leaky_slope);
        decoder_w1_ = store_.add("decoder.w1", {cfg_.decoder_hidden, E});
        nn::init_xavier(decoder_w1_, E, cfg_.decoder_hidden, rng);
        decoder_b1_ = store_.add("decoder.b1", {cfg_.decoder_hidden});
        const int out_width = 2 * cfg_.future_len;
        for (int k = 0; k < cfg_.modes; ++k) {
            Tensor w = store_.add("decoder.head" + std::to_string(k) + ".w", {out_width, cfg_.decoder_hidden});
            nn::init_xavier(w, cfg_.decoder_hidden, out_width, rng);
            Tensor b = store_.add("decoder.head" + std::to_string(k) + ".b", {out_width});
            head_w_.push_back(w);
            head_b_.push_back(b);
        }
    }

    const ModelConfig& config() const { return cfg_; }
    nn::ParameterStore& params() { return store_; }
    const nn::ParameterStore& params() const { return store_; }

    // -- branches -------------------------------------------------------------

    /// Scaled node feature tensor for one participant.
    static Tensor node_input(const NodeFeatures& f) {
        const auto a = f.to_array();
        return Tensor::from({NodeFeatures::kWidth},
                            {a[0] * kNodeVelocityScale, a[1], a[2], a[3], a[4]});
    }

    /// Scaled edge feature tensor.
    static Tensor edge_input(const EdgeFeatures& f) {
        const auto a = f.to_array();
        return Tensor::from({EdgeFeatures::kWidth},
                            {a[0], a[1], a[2], a[3] * kEdgeDistanceScale, a[4] * kEdgeDistanceScale,
                             a[5] * kEdgeCenterlineScale, a[6] * kEdgeCenterlineScale});
    }

    /// One edge-conditioned convolution step for the ego node of one graph:
    /// x' = W x_ego + mean_j Theta(e_j->ego) x_j + b, mean over the empty
    /// neighborhood being the zero vector.
    Tensor ego_node_update(const SceneGraph& g, std::int64_t ego_id) const {
        const SceneGraphNode* ego = g.find_node(ego_id);
        if (!ego) throw InputError("graph_encode: ego " + std::to_string(ego_id) + " missing from frame " +
                                   std::to_string(g.frame));
        const Tensor x = node_input(ego->features);
        Tensor agg;
        int count = 0;
        for (const auto& e : g.edges) {
            if (e.target != ego_id) continue;
            const SceneGraphNode* origin = g.find_node(e.origin);
            if (!origin) continue;
            const Tensor theta =
                ad::reshape(edge_mlp_.forward(edge_input(e.features)), {NodeFeatures::kWidth, NodeFeatures::kWidth});
            const Tensor msg = ad::matmul(theta, node_input(origin->features));
            agg = count == 0 ? msg : ad::add(agg, msg);
            ++count;
        }
        if (count == 0) {
            agg = Tensor::zeros({NodeFeatures::kWidth});
        } else if (count > 1) {
            agg = ad::scale(agg, 1.0 / static_cast<double>(count));
        }
        return ad::add(ad::add(ad::matmul(root_w_, x), agg), root_b_);
    }

    /// Social-history embedding: per-snapshot ECC + MLP, then a two-layer GRU
    /// across the snapshots in time order; the final hidden state is e_G.
    Tensor graph_encode(const std::vector<std::shared_ptr<const SceneGraph>>& graphs, std::int64_t ego_id) const {
        if (graphs.empty()) throw InputError("graph_encode: empty graph history");
        Tensor h1 = Tensor::zeros({cfg_.embed_width});
        Tensor h2 = Tensor::zeros({cfg_.embed_width});
        for (const auto& g : graphs) {
            const Tensor snapshot = node_mlp_.forward(ego_node_update(*g, ego_id));
            h1 = nn::gru_cell(snapshot, h1, gru1_);
            h2 = nn::gru_cell(h1, h2, gru2_);
        }
        return h2;
    }

    /// Image embedding: CNN backbone, global average pool, linear head.
    Tensor image_encode(const RasterImage& img) const {
        if (img.width != cfg_.resolution || img.height != cfg_.resolution) {
            throw ad::ShapeError("image_encode: raster is " + std::to_string(img.width) + "x" +
                                 std::to_string(img.height) + ", model expects " + std::to_string(cfg_.resolution));
        }
        std::vector<double> planar(static_cast<std::size_t>(3) * img.width * img.height);
        const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
        for (std::size_t p = 0; p < plane; ++p) {
            planar[p] = img.rgb[3 * p] / 255.0;
            planar[plane + p] = img.rgb[3 * p + 1] / 255.0;
            planar[2 * plane + p] = img.rgb[3 * p + 2] / 255.0;
        }
        Tensor x = Tensor::from({3, img.height, img.width}, std::move(planar));
        for (const auto& blk : cnn_) {
            x = ad::leaky_relu(blk.conv.forward(x), cfg_.leaky_slope);
            if (blk.pool_after) x = ad::max_pool2d(x, 2, 2);
        }
        x = ad::mean_over_axis(ad::mean_over_axis(x, 2), 1);  // global average pool -> [C]
        return ad::add(ad::matmul(image_head_w_, x), image_head_b_);
    }

    // -- fusion ----------------------------------------------------------------

    struct Attention {
        Tensor alphas;  // [alpha_G, alpha_I]
        Tensor graph_normalized;
        Tensor image_normalized;
    };

    /// Normalizes both embeddings, scores them with the shared MLP, and maps
    /// the 2-way softmax into [0.1, 0.9] with an exact sum of 1.
    Attention attend(const Tensor& graph_embed, const Tensor& image_embed) const {
        Attention out;
        out.graph_normalized = ad::l2_normalize(graph_embed);
        out.image_normalized = ad::l2_normalize(image_embed);
        const Tensor logits =
            ad::concat(scorer_.forward(out.graph_normalized), scorer_.forward(out.image_normalized));
        out.alphas = ad::affine(ad::softmax(logits), 0.8, 0.1);
        return out;
    }

    /// e_C = alpha_G * e_G + alpha_I * e_I on the normalized embeddings.
    static Tensor combine(const Tensor& alphas, const Tensor& graph_normalized, const Tensor& image_normalized) {
        return ad::add(ad::smul(graph_normalized, ad::slice(alphas, 0, 0, 1)),
                       ad::smul(image_normalized, ad::slice(alphas, 0, 1, 1)));
    }

    /// Fixed-weight fusion used by attention sweeps and ablations; bypasses
    /// the learned bounds.
    static Tensor combine_fixed(double alpha_g, const Tensor& graph_normalized, const Tensor& image_normalized) {
        return ad::add(ad::scale(graph_normalized, alpha_g), ad::scale(image_normalized, 1.0 - alpha_g));
    }

    /// Decoder heads: shared LeakyReLU hidden layer, one linear output of
    /// 2*future_len interleaved velocity components per mode.
    std::vector<Tensor> decode(const Tensor& combined) const {
        const Tensor hidden = ad::leaky_relu(ad::add(ad::matmul(decoder_w1_, combined), decoder_b1_), cfg_.leaky_slope);
        std::vector<Tensor> out;
        out.reserve(head_w_.size());
        for (std::size_t k = 0; k < head_w_.size(); ++k) {
            out.push_back(ad::add(ad::matmul(head_w_[k], hidden), head_b_[k]));
        }
        return out;
    }

    /// L1 loss over all velocity components; multiple modes train
    /// winner-takes-all (minimum per-mode loss).
    Tensor loss(const std::vector<Tensor>& modes, const Tensor& truth, int* best_mode = nullptr) const {
        if (modes.empty()) throw InputError("loss: no decoded modes");
        Tensor best;
        int best_k = 0;
        for (std::size_t k = 0; k < modes.size(); ++k) {
            if (modes[k].shape() != truth.shape()) {
                throw ad::ShapeError("loss: prediction " + ad::shape_str(modes[k].shape()) + " vs truth " +
                                     ad::shape_str(truth.shape()));
            }
            Tensor l = ad::abs_sum(ad::sub(modes[k], truth));
            if (!best.defined() || l.scalar_value() < best.scalar_value()) {
                best = l;
                best_k = static_cast<int>(k);
            }
        }
        if (best_mode) *best_mode = best_k;
        return best;
    }

    // -- full passes -------------------------------------------------------------

    struct Forward {
        Tensor loss;
        double alpha_g = 0.0;
        double alpha_i = 0.0;
        int best_mode = 0;
    };

    /// Taped forward pass producing the training loss for one sample.
    Forward forward(const Sample& sample) const {
        const Tensor eg = graph_encode(sample.graphs, sample.ego_id);
        const Tensor ei = image_encode(sample.raster);
        const Attention att = attend(eg, ei);
        const Tensor combined = combine(att.alphas, att.graph_normalized, att.image_normalized);
        const std::vector<Tensor> modes = decode(combined);
        const Tensor truth = Tensor::from({2 * cfg_.future_len}, sample.truth_velocity);
        Forward out;
        out.loss = loss(modes, truth, &out.best_mode);
        out.alpha_g = att.alphas.value_at(0);
        out.alpha_i = att.alphas.value_at(1);
        return out;
    }

    struct PredictOut {
        double alpha_g = 0.0;
        double alpha_i = 0.0;
        std::vector<std::vector<double>> modes;  // each 2*future_len, ego frame
    };

    /// Inference pass without tape. `alpha_override`, when given, replaces the
    /// learned fusion weights by (alpha_g, 1 - alpha_g), values in [0, 1].
    PredictOut predict(const Sample& sample, const double* alpha_override = nullptr) const {
        ad::NoGradGuard ng;
        const Tensor eg = graph_encode(sample.graphs, sample.ego_id);
        const Tensor ei = image_encode(sample.raster);
        const Attention att = attend(eg, ei);
        PredictOut out;
        out.alpha_g = att.alphas.value_at(0);
        out.alpha_i = att.alphas.value_at(1);
        const Tensor combined = alpha_override
                                    ? combine_fixed(*alpha_override, att.graph_normalized, att.image_normalized)
                                    : combine(att.alphas, att.graph_normalized, att.image_normalized);
        for (const Tensor& m : decode(combined)) out.modes.push_back(m.values());
        return out;
    }

    // -- persistence ---------------------------------------------------------------

    void save(const std::string& prefix, std::uint64_t seed, const std::string& config_hash) const {
        nn::save_checkpoint(store_, cfg_.to_json(), prefix, seed, config_hash);
    }

    static HybridModel load(const std::string& prefix, nn::CheckpointManifest* manifest_out = nullptr) {
        // Peek the manifest for the architecture, then load values.
        nlohmann::json manifest;
        try {
            manifest = nlohmann::json::parse(read_file(prefix + ".json"));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("checkpoint manifest " + prefix + ".json: " + e.what());
        }
        HybridModel model(ModelConfig::from_json(manifest.at("model_config")), 0);
        const nn::CheckpointManifest m = nn::load_checkpoint(model.store_, prefix);
        if (manifest_out) *manifest_out = m;
        return model;
    }

private:
    struct CnnBlock {
        nn::ConvLayer conv;
        bool pool_after = false;
    };

    void build_cnn(Rng& rng) {
        auto block = [&](int idx, int c_in, int c_out, int stride, bool pool) {
            CnnBlock b;
            b.conv = nn::ConvLayer::create(store_, "image.conv" + std::to_string(idx), c_in, c_out, 3, stride, 1, rng);
            b.pool_after = pool;
            cnn_.push_back(b);
        };
        int feat = 0;
        if (cfg_.cnn_preset == "small") {
            block(0, 3, 8, 2, false);
            block(1, 8, 16, 2, false);
            block(2, 16, 32, 2, false);
            block(3, 32, 64, 2, false);
            feat = 64;
        } else if (cfg_.cnn_preset == "micro") {
            block(0, 3, 4, 2, false);
            block(1, 4, 8, 2, false);
            feat = 8;
        } else {  // vgg16 layout, classifier replaced by GAP + linear head
            const int plan[13][2] = {{3, 64},   {64, 64},   {64, 128},  {128, 128}, {128, 256}, {256, 256}, {256, 256},
                                     {256, 512}, {512, 512}, {512, 512}, {512, 512}, {512, 512}, {512, 512}};
            const bool pool[13] = {false, true, false, true, false, false, true, false, false, true, false, false, true};
            for (int i = 0; i < 13; ++i) block(i, plan[i][0], plan[i][1], 1, pool[i]);
            feat = 512;
        }
        image_head_w_ = store_.add("image.head.w", {cfg_.embed_width, feat});
        nn::init_xavier(image_head_w_, feat, cfg_.embed_width, rng);
        image_head_b_ = store_.add("image.head.b", {cfg_.embed_width});
    }

    ModelConfig cfg_;
    nn::ParameterStore store_;

    nn::Mlp edge_mlp_;
    Tensor root_w_, root_b_;
    nn::Mlp node_mlp_;
    nn::GruWeights gru1_, gru2_;

    std::vector<CnnBlock> cnn_;
    Tensor image_head_w_, image_head_b_;

    nn::Mlp scorer_;
    Tensor decoder_w1_, decoder_b1_;
    std::vector<Tensor> head_w_, head_b_;
};

}  // namespace scenemine
