#pragma once

#include <initializer_list>
#include <string>

#include <nlohmann/json.hpp>

#include "scenemine/common.hpp"
#include "scenemine/metrics.hpp"
#include "scenemine/model.hpp"
#include "scenemine/raster.hpp"
#include "scenemine/synth.hpp"
#include "scenemine/train.hpp"

namespace scenemine {

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                                const std::string& context) {
    for (const auto& item : j.items()) {
        bool ok = false;
        for (const char* a : allowed) {
            if (item.key() == a) {
                ok = true;
                break;
            }
        }
        if (!ok) throw ConfigError("unknown key '" + item.key() + "' in " + context);
    }
}

}  // namespace detail

/// One merged configuration for the whole pipeline. Every stage resolves the
/// same file (plus flag overrides), logs it, and embeds its hash into every
/// artifact it writes; stages refuse inputs carrying a different hash.
struct PipelineConfig {
    std::uint64_t seed = 7;

    struct Data {
        int history_len = 10;
        int future_len = 30;
        int stride = 5;  // window stride over the recordings
    } data;

    SynthConfig synth;        // seed is taken from the global seed
    RasterConfig raster;

    struct Model {
        int modes = 1;
        int embed_width = 128;
        int edge_hidden = 32;
        int scorer_hidden = 64;
        int decoder_hidden = 256;
        std::string cnn_preset = "small";
        double leaky_slope = 0.01;
    } model;

    TrainConfig train;        // seed is taken from the global seed
    MissRateThresholds metrics;

    struct Mine {
        double bin_width = 0.02;
        double hist_lo = 0.1;
        double hist_hi = 0.9;
        int sweep_n = 50;
        int top_k = 10;
    } mine;

    // -- assembled per-module configs -------------------------------------------

    SynthConfig synth_config() const {
        SynthConfig c = synth;
        c.seed = seed;
        return c;
    }

    RasterConfig raster_config() const { return raster; }

    ModelConfig model_config() const {
        ModelConfig c;
        c.history_len = data.history_len;
        c.future_len = data.future_len;
        c.modes = model.modes;
        c.embed_width = model.embed_width;
        c.edge_hidden = model.edge_hidden;
        c.scorer_hidden = model.scorer_hidden;
        c.decoder_hidden = model.decoder_hidden;
        c.cnn_preset = model.cnn_preset;
        c.resolution = raster.resolution;
        c.leaky_slope = model.leaky_slope;
        c.validate();
        return c;
    }

    TrainConfig train_config() const {
        TrainConfig c = train;
        c.seed = seed;
        c.validate();
        return c;
    }

    // -- serialization -----------------------------------------------------------

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["seed"] = seed;
        j["data"] = {{"history_len", data.history_len}, {"future_len", data.future_len}, {"stride", data.stride}};
        j["synth"] = {{"family", SynthConfig::family_name(synth.family)},
                      {"episodes", synth.n_episodes},
                      {"speed_min", synth.speed_min},
                      {"speed_max", synth.speed_max},
                      {"gap_slack_min", synth.gap_slack_min},
                      {"gap_slack_max", synth.gap_slack_max},
                      {"radius_min", synth.radius_min},
                      {"radius_max", synth.radius_max},
                      {"episode_duration", synth.episode_duration}};
        j["raster"] = {{"resolution", raster.resolution},
                       {"pixel_size", raster.pixel_size},
                       {"history_states", raster.history_states}};
        j["model"] = {{"modes", model.modes},
                      {"embed_width", model.embed_width},
                      {"edge_hidden", model.edge_hidden},
                      {"scorer_hidden", model.scorer_hidden},
                      {"decoder_hidden", model.decoder_hidden},
                      {"cnn_preset", model.cnn_preset},
                      {"leaky_slope", model.leaky_slope}};
        j["train"] = {{"batch_size", train.batch_size},
                      {"lr0", train.lr0},
                      {"patience", train.patience},
                      {"lr_decay", train.lr_decay},
                      {"max_epochs", train.max_epochs},
                      {"fractions", train.fractions},
                      {"min_improvement", train.min_improvement},
                      {"min_lr", train.min_lr}};
        j["metrics"] = {{"lateral", metrics.lateral},
                        {"lon_low", metrics.lon_low},
                        {"lon_high", metrics.lon_high},
                        {"v_low", metrics.v_low},
                        {"v_high", metrics.v_high}};
        j["mine"] = {{"bin_width", mine.bin_width},
                     {"hist_lo", mine.hist_lo},
                     {"hist_hi", mine.hist_hi},
                     {"sweep_n", mine.sweep_n},
                     {"top_k", mine.top_k}};
        return j;
    }

    static PipelineConfig from_json(const nlohmann::json& j) {
        PipelineConfig c;
        detail::reject_unknown_keys(j, {"seed", "data", "synth", "raster", "model", "train", "metrics", "mine"},
                                    "config");
        c.seed = j.value("seed", c.seed);
        if (j.contains("data")) {
            const auto& d = j.at("data");
            detail::reject_unknown_keys(d, {"history_len", "future_len", "stride"}, "config.data");
            c.data.history_len = d.value("history_len", c.data.history_len);
            c.data.future_len = d.value("future_len", c.data.future_len);
            c.data.stride = d.value("stride", c.data.stride);
        }
        if (j.contains("synth")) {
            const auto& s = j.at("synth");
            detail::reject_unknown_keys(s,
                                        {"family", "episodes", "speed_min", "speed_max", "gap_slack_min",
                                         "gap_slack_max", "radius_min", "radius_max", "episode_duration"},
                                        "config.synth");
            if (s.contains("family")) c.synth.family = SynthConfig::family_from_name(s.at("family").get<std::string>());
            c.synth.n_episodes = s.value("episodes", c.synth.n_episodes);
            c.synth.speed_min = s.value("speed_min", c.synth.speed_min);
            c.synth.speed_max = s.value("speed_max", c.synth.speed_max);
            c.synth.gap_slack_min = s.value("gap_slack_min", c.synth.gap_slack_min);
            c.synth.gap_slack_max = s.value("gap_slack_max", c.synth.gap_slack_max);
            c.synth.radius_min = s.value("radius_min", c.synth.radius_min);
            c.synth.radius_max = s.value("radius_max", c.synth.radius_max);
            c.synth.episode_duration = s.value("episode_duration", c.synth.episode_duration);
        }
        if (j.contains("raster")) {
            const auto& r = j.at("raster");
            detail::reject_unknown_keys(r, {"resolution", "pixel_size", "history_states"}, "config.raster");
            c.raster.resolution = r.value("resolution", c.raster.resolution);
            c.raster.pixel_size = r.value("pixel_size", c.raster.pixel_size);
            c.raster.history_states = r.value("history_states", c.raster.history_states);
        }
        if (j.contains("model")) {
            const auto& m = j.at("model");
            detail::reject_unknown_keys(
                m, {"modes", "embed_width", "edge_hidden", "scorer_hidden", "decoder_hidden", "cnn_preset",
                    "leaky_slope"},
                "config.model");
            c.model.modes = m.value("modes", c.model.modes);
            c.model.embed_width = m.value("embed_width", c.model.embed_width);
            c.model.edge_hidden = m.value("edge_hidden", c.model.edge_hidden);
            c.model.scorer_hidden = m.value("scorer_hidden", c.model.scorer_hidden);
            c.model.decoder_hidden = m.value("decoder_hidden", c.model.decoder_hidden);
            c.model.cnn_preset = m.value("cnn_preset", c.model.cnn_preset);
            c.model.leaky_slope = m.value("leaky_slope", c.model.leaky_slope);
        }
        if (j.contains("train")) {
            const auto& t = j.at("train");
            detail::reject_unknown_keys(t,
                                        {"batch_size", "lr0", "patience", "lr_decay", "max_epochs", "fractions",
                                         "min_improvement", "min_lr"},
                                        "config.train");
            c.train.batch_size = t.value("batch_size", c.train.batch_size);
            c.train.lr0 = t.value("lr0", c.train.lr0);
            c.train.patience = t.value("patience", c.train.patience);
            c.train.lr_decay = t.value("lr_decay", c.train.lr_decay);
            c.train.max_epochs = t.value("max_epochs", c.train.max_epochs);
            if (t.contains("fractions")) {
                const auto f = t.at("fractions").get<std::vector<double>>();
                if (f.size() != 3) throw ConfigError("config.train.fractions: expected 3 values");
                c.train.fractions = {f[0], f[1], f[2]};
            }
            c.train.min_improvement = t.value("min_improvement", c.train.min_improvement);
            c.train.min_lr = t.value("min_lr", c.train.min_lr);
        }
        if (j.contains("metrics")) {
            const auto& m = j.at("metrics");
            detail::reject_unknown_keys(m, {"lateral", "lon_low", "lon_high", "v_low", "v_high"}, "config.metrics");
            c.metrics.lateral = m.value("lateral", c.metrics.lateral);
            c.metrics.lon_low = m.value("lon_low", c.metrics.lon_low);
            c.metrics.lon_high = m.value("lon_high", c.metrics.lon_high);
            c.metrics.v_low = m.value("v_low", c.metrics.v_low);
            c.metrics.v_high = m.value("v_high", c.metrics.v_high);
        }
        if (j.contains("mine")) {
            const auto& m = j.at("mine");
            detail::reject_unknown_keys(m, {"bin_width", "hist_lo", "hist_hi", "sweep_n", "top_k"}, "config.mine");
            c.mine.bin_width = m.value("bin_width", c.mine.bin_width);
            c.mine.hist_lo = m.value("hist_lo", c.mine.hist_lo);
            c.mine.hist_hi = m.value("hist_hi", c.mine.hist_hi);
            c.mine.sweep_n = m.value("sweep_n", c.mine.sweep_n);
            c.mine.top_k = m.value("top_k", c.mine.top_k);
        }
        return c;
    }

    static PipelineConfig load(const std::string& path) {
        try {
            return from_json(nlohmann::json::parse(read_file(path)));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("config " + path + ": " + e.what());
        }
    }

    /// Content hash of the resolved configuration (canonical JSON).
    std::string hash() const { return hex64(fnv1a64(to_json().dump())); }
};

/// Hash guard shared by the pipeline stages: inputs that declare a different
/// config hash are refused unless forced.
inline void check_config_hash(const std::string& declared, const std::string& expected, const std::string& what,
                              bool force) {
    if (declared.empty() || declared == expected) return;
    if (force) {
        warn(what + ": config hash mismatch (" + declared + " != " + expected + "), continuing under --force");
        return;
    }
    throw InputError(what + " was produced under config " + declared + " but the current config hashes to " +
                     expected + " (use --force to override)");
}

}  // namespace scenemine
