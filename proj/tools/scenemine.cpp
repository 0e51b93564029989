// Command-line pipeline: synth | build-graphs | rasterize | train | evaluate |
// mine | sweep | report. Stages compose through files; every artifact embeds
// the hash of the resolved configuration and stages refuse mismatched inputs
// unless --force is given.

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "scenemine/dataset.hpp"
#include "scenemine/metrics.hpp"
#include "scenemine/miner.hpp"
#include "scenemine/model.hpp"
#include "scenemine/pipeline.hpp"
#include "scenemine/raster.hpp"
#include "scenemine/svg.hpp"
#include "scenemine/synth.hpp"
#include "scenemine/train.hpp"

namespace fs = std::filesystem;
using namespace scenemine;

namespace {

struct GlobalArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed_override;
    int jobs = 1;
    bool force = false;
};

PipelineConfig resolve_config(const GlobalArgs& g) {
    PipelineConfig cfg = g.config_path.empty() ? PipelineConfig{} : PipelineConfig::load(g.config_path);
    if (g.seed_override) cfg.seed = *g.seed_override;
    return cfg;
}

void log_config(const PipelineConfig& cfg) {
    std::cerr << "[config] hash=" << cfg.hash() << " " << cfg.to_json().dump() << "\n";
}

struct LoadedData {
    TrackSet tracks;
    LaneMap map;
    EpisodeMetaFile meta;
    bool has_meta = false;
};

LoadedData load_inputs(const std::string& tracks_path, const std::string& map_path, const std::string& meta_path,
                       const PipelineConfig& cfg, bool force) {
    LoadedData d;
    d.tracks = load_tracks(tracks_path);
    check_config_hash(d.tracks.config_hash, cfg.hash(), "tracks " + tracks_path, force);
    d.map = LaneMap::load(map_path);
    check_config_hash(d.map.config_hash, cfg.hash(), "map " + map_path, force);
    if (!meta_path.empty()) {
        d.meta = load_episode_meta(meta_path);
        check_config_hash(d.meta.config_hash, cfg.hash(), "meta " + meta_path, force);
        d.has_meta = true;
    }
    return d;
}

std::vector<SampleWindow> config_windows(const TrackSet& tracks, const PipelineConfig& cfg) {
    return window_samples(tracks, cfg.data.history_len, cfg.data.future_len, cfg.data.stride);
}

std::vector<Sample> assemble(const LoadedData& d, const PipelineConfig& cfg, const GraphCache* graphs = nullptr) {
    return build_samples(d.tracks, d.map, config_windows(d.tracks, cfg), cfg.raster_config(),
                         d.has_meta ? &d.meta : nullptr, graphs);
}

std::vector<std::size_t> split_selection(std::size_t n, const PipelineConfig& cfg, const std::string& which) {
    const SplitIndices split = split_dataset(n, cfg.train.fractions, cfg.seed);
    if (which == "train") return split.train;
    if (which == "val") return split.val;
    if (which == "holdout") return split.holdout;
    if (which == "all") {
        std::vector<std::size_t> all(n);
        for (std::size_t i = 0; i < n; ++i) all[i] = i;
        return all;
    }
    throw ConfigError("unknown split '" + which + "' (use train|val|holdout|all)");
}

int run_synth(const GlobalArgs& g, const std::string& family, int episodes, const std::string& out_dir) {
    PipelineConfig cfg = resolve_config(g);
    if (!family.empty()) cfg.synth.family = SynthConfig::family_from_name(family);
    if (episodes > 0) cfg.synth.n_episodes = episodes;
    log_config(cfg);

    SynthResult res = generate_synthetic(cfg.synth_config());
    res.tracks.config_hash = cfg.hash();
    res.map.config_hash = cfg.hash();
    fs::create_directories(out_dir);
    export_tracks(res.tracks, out_dir + "/tracks.csv");
    res.map.save(out_dir + "/map.json");
    save_episode_meta(res.episodes, cfg.hash(), out_dir + "/meta.json");
    std::cerr << "[synth] wrote " << res.tracks.tracks.size() << " tracks, " << res.map.lanes.size() << " lanes to "
              << out_dir << "\n";
    return 0;
}

int run_build_graphs(const GlobalArgs& g, const std::string& tracks_path, const std::string& map_path,
                     const std::string& out_path) {
    PipelineConfig cfg = resolve_config(g);
    log_config(cfg);
    LoadedData d = load_inputs(tracks_path, map_path, "", cfg, g.force);

    // Frames needed by any window of the configured geometry.
    std::set<std::int64_t> frames;
    for (const auto& w : config_windows(d.tracks, cfg)) {
        for (int k = 0; k < w.history_len; ++k) frames.insert(w.t0 - k);
    }
    std::vector<std::int64_t> frame_list(frames.begin(), frames.end());
    std::vector<SceneGraph> graphs(frame_list.size());
    parallel_for(frame_list.size(), g.jobs, [&](std::size_t i) {
        graphs[i] = build_scene_graph(d.map, states_at_frame(d.tracks, frame_list[i]));
    });
    std::ostringstream os;
    write_graphs_jsonl(os, graphs, cfg.hash());
    write_file_atomic(out_path, os.str());
    std::cerr << "[build-graphs] wrote " << graphs.size() << " graphs to " << out_path << "\n";
    return 0;
}

int run_rasterize(const GlobalArgs& g, const std::string& tracks_path, const std::string& map_path,
                  const std::string& out_dir) {
    PipelineConfig cfg = resolve_config(g);
    log_config(cfg);
    LoadedData d = load_inputs(tracks_path, map_path, "", cfg, g.force);
    const auto windows = config_windows(d.tracks, cfg);
    fs::create_directories(out_dir);
    const RasterConfig rc = cfg.raster_config();
    parallel_for(windows.size(), g.jobs, [&](std::size_t i) {
        const RasterImage img = rasterize(d.map, d.tracks, windows[i], rc);
        save_ppm(img, out_dir + "/sample_" + windows[i].id() + ".ppm", cfg.hash());
    });
    std::cerr << "[rasterize] wrote " << windows.size() << " images to " << out_dir << "\n";
    return 0;
}

int run_train(const GlobalArgs& g, const std::string& tracks_path, const std::string& map_path,
              const std::string& meta_path, const std::string& graphs_path, const std::string& out_prefix,
              int epochs_override) {
    PipelineConfig cfg = resolve_config(g);
    if (epochs_override > 0) cfg.train.max_epochs = epochs_override;
    log_config(cfg);
    LoadedData d = load_inputs(tracks_path, map_path, meta_path, cfg, g.force);

    GraphCache cache;
    const GraphCache* cache_ptr = nullptr;
    if (!graphs_path.empty()) {
        std::ifstream in(graphs_path);
        if (!in) throw InputError("cannot open graphs file: " + graphs_path);
        cache = read_graphs_jsonl(in);
        check_config_hash(cache.config_hash, cfg.hash(), "graphs " + graphs_path, g.force);
        cache_ptr = &cache;
    }

    const auto samples = assemble(d, cfg, cache_ptr);
    if (samples.empty()) throw InputError("train: no samples (tracks too short for the configured windows?)");
    const SplitIndices split = split_dataset(samples.size(), cfg.train.fractions, cfg.seed);
    std::cerr << "[train] samples=" << samples.size() << " train=" << split.train.size() << " val=" << split.val.size()
              << " holdout=" << split.holdout.size() << "\n";

    HybridModel model(cfg.model_config(), cfg.seed);
    const TrainResult result = train(model, samples, split, cfg.train_config(), [](const EpochStats& e) {
        std::cerr << "[train] epoch " << e.epoch << " train=" << format_double(e.train_loss)
                  << " val=" << format_double(e.val_loss) << " lr=" << format_double(e.lr) << "\n";
    });

    if (out_prefix.find('/') != std::string::npos) {
        fs::create_directories(fs::path(out_prefix).parent_path());
    }
    model.save(out_prefix, cfg.seed, cfg.hash());
    write_file_atomic(out_prefix + "_curve.csv", curve_to_csv(result.curve, cfg.hash()));
    std::cerr << "[train] best epoch " << result.best_epoch << " val=" << format_double(result.best_val)
              << ", checkpoint at " << out_prefix << ".json/.bin\n";
    return 0;
}

HybridModel load_model_checked(const std::string& ckpt, const PipelineConfig& cfg, bool force) {
    if (!fs::exists(ckpt + ".json")) throw InputError("checkpoint not found: " + ckpt + ".json");
    nn::CheckpointManifest manifest;
    HybridModel model = HybridModel::load(ckpt, &manifest);
    check_config_hash(manifest.config_hash, cfg.hash(), "checkpoint " + ckpt, force);
    return model;
}

int run_evaluate(const GlobalArgs& g, const std::string& ckpt, const std::string& tracks_path,
                 const std::string& map_path, const std::string& meta_path, const std::string& which,
                 const std::string& out_path) {
    PipelineConfig cfg = resolve_config(g);
    log_config(cfg);
    HybridModel model = load_model_checked(ckpt, cfg, g.force);
    LoadedData d = load_inputs(tracks_path, map_path, meta_path, cfg, g.force);
    const auto samples = assemble(d, cfg);
    const auto selection = split_selection(samples.size(), cfg, which);
    if (selection.empty()) throw InputError("evaluate: selected split is empty");

    struct Row {
        std::size_t n = 0;
        double ade_sum = 0.0, fde_sum = 0.0;
        std::vector<MissRateSample> mr;
    };
    std::map<std::string, Row> rows;
    for (std::size_t i : selection) {
        const Sample& s = samples[i];
        const auto pred = model.predict(s);
        std::vector<std::vector<Vec2>> mode_paths;
        for (const auto& m : pred.modes) mode_paths.push_back(integrate_trajectory(m, s.start));
        const double a = min_over_modes(ade, mode_paths, s.truth_positions);
        const double f = min_over_modes(fde, mode_paths, s.truth_positions);
        const std::string family = s.family.empty() ? "all" : s.family;
        for (const std::string key : {family, std::string("Total")}) {
            Row& r = rows[key];
            r.n += 1;
            r.ade_sum += a;
            r.fde_sum += f;
            r.mr.push_back(MissRateSample{mode_paths, s.truth_positions, s.truth_final_speed});
        }
    }

    std::string csv = "# config_hash=" + cfg.hash() + "\nname,type,n,min_ade,min_fde,miss_rate\n";
    for (const auto& [name, r] : rows) {
        csv += name + "," + (name == "Total" ? "All" : name) + "," + std::to_string(r.n) + "," +
               format_double(r.ade_sum / static_cast<double>(r.n)) + "," +
               format_double(r.fde_sum / static_cast<double>(r.n)) + "," +
               format_double(miss_rate(r.mr, cfg.metrics)) + "\n";
    }
    write_file_atomic(out_path, csv);
    std::cerr << "[evaluate] wrote " << rows.size() << " rows to " << out_path << "\n";
    return 0;
}

int run_mine(const GlobalArgs& g, const std::string& ckpt, const std::string& tracks_path, const std::string& map_path,
             const std::string& meta_path, const std::string& which, const std::string& out_path) {
    PipelineConfig cfg = resolve_config(g);
    log_config(cfg);
    HybridModel model = load_model_checked(ckpt, cfg, g.force);
    LoadedData d = load_inputs(tracks_path, map_path, meta_path, cfg, g.force);
    const auto samples = assemble(d, cfg);
    const auto selection = split_selection(samples.size(), cfg, which);
    if (selection.empty()) throw InputError("mine: selected split is empty");

    std::vector<SceneScore> scores(selection.size());
    parallel_for(selection.size(), g.jobs, [&](std::size_t i) {
        const std::vector<std::size_t> one{selection[i]};
        scores[i] = score_dataset(model, samples, &one).front();
    });
    write_file_atomic(out_path, scores_to_csv(scores, cfg.hash()));

    const auto ranked = rank_scenarios(scores, static_cast<std::size_t>(cfg.mine.top_k), RankOrder::most_interactive);
    std::string ranked_csv = "# config_hash=" + cfg.hash() + "\nrank,sample_id,family,alpha_g,kappa,ade,fde\n";
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        const auto& s = ranked[i];
        ranked_csv += std::to_string(i + 1) + "," + s.sample_id + "," + s.family + "," + format_double(s.alpha_g) +
                      "," + format_double(s.kappa) + "," + format_double(s.ade) + "," + format_double(s.fde) + "\n";
    }
    const fs::path ranked_path = fs::path(out_path).parent_path() / "ranked.csv";
    write_file_atomic(ranked_path.string(), ranked_csv);
    std::cerr << "[mine] wrote " << scores.size() << " scores to " << out_path << " and top " << ranked.size()
              << " to " << ranked_path.string() << "\n";
    return 0;
}

int run_sweep(const GlobalArgs& g, const std::string& ckpt, const std::string& tracks_path,
              const std::string& map_path, const std::string& meta_path, const std::vector<std::string>& sample_ids,
              int top_k, const std::string& which, const std::string& out_dir) {
    PipelineConfig cfg = resolve_config(g);
    log_config(cfg);
    HybridModel model = load_model_checked(ckpt, cfg, g.force);
    LoadedData d = load_inputs(tracks_path, map_path, meta_path, cfg, g.force);
    const auto samples = assemble(d, cfg);

    std::vector<std::size_t> chosen;
    if (!sample_ids.empty()) {
        for (const auto& id : sample_ids) {
            bool found = false;
            for (std::size_t i = 0; i < samples.size(); ++i) {
                if (samples[i].id() == id) {
                    chosen.push_back(i);
                    found = true;
                    break;
                }
            }
            if (!found) throw InputError("sweep: unknown sample id " + id);
        }
    } else {
        const auto selection = split_selection(samples.size(), cfg, which);
        if (selection.empty()) throw InputError("sweep: selected split is empty");
        auto scores = score_dataset(model, samples, &selection);
        const auto ranked = rank_scenarios(scores, static_cast<std::size_t>(top_k), RankOrder::most_interactive);
        for (const auto& r : ranked) {
            for (std::size_t i = 0; i < samples.size(); ++i) {
                if (samples[i].id() == r.sample_id) {
                    chosen.push_back(i);
                    break;
                }
            }
        }
    }

    fs::create_directories(out_dir);
    for (std::size_t i : chosen) {
        const AttentionSweep sweep = attention_sweep(model, samples[i], cfg.mine.sweep_n);
        std::vector<Vec2> truth = {samples[i].start.position()};
        truth.insert(truth.end(), samples[i].truth_positions.begin(), samples[i].truth_positions.end());
        write_file_atomic(out_dir + "/sweep_" + samples[i].id() + ".svg",
                          svg::sweep_chart(sweep, truth, cfg.hash()));
    }
    std::cerr << "[sweep] wrote " << chosen.size() << " fan plots to " << out_dir << "\n";
    return 0;
}

int run_report(const GlobalArgs& g, const std::string& scores_path, const std::string& out_dir) {
    PipelineConfig cfg = resolve_config(g);
    log_config(cfg);
    std::string declared;
    const auto scores = scores_from_csv(read_file(scores_path), &declared);
    check_config_hash(declared, cfg.hash(), "scores " + scores_path, g.force);
    if (scores.empty()) throw InputError("report: no scores in " + scores_path);

    std::vector<double> alphas, kappas;
    for (const auto& s : scores) {
        alphas.push_back(s.alpha_g);
        kappas.push_back(s.kappa);
    }
    fs::create_directories(out_dir);
    const auto freqs = histogram(alphas, cfg.mine.bin_width, cfg.mine.hist_lo, cfg.mine.hist_hi);
    write_file_atomic(out_dir + "/histogram.svg",
                      svg::histogram_chart(freqs, cfg.mine.hist_lo, cfg.mine.hist_hi, 0.1, 0.9, cfg.hash()));
    write_file_atomic(out_dir + "/scatter.svg",
                      svg::scatter_chart(alphas, kappas, "graph attention", "normalized curvature", cfg.hash()));
    std::cerr << "[report] wrote histogram.svg and scatter.svg to " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hybrid graph/image trajectory prediction and scene-interactivity mining"};
    app.require_subcommand(1);

    GlobalArgs g;
    app.add_option("--config", g.config_path, "pipeline config JSON")->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed_override, "override the config seed");
    app.add_option("--jobs", g.jobs, "worker threads for stateless stages")->check(CLI::PositiveNumber);
    app.add_flag("--force", g.force, "accept inputs with mismatched config hashes");

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    std::string family, out_dir;
    int episodes = 0;
    synth->add_option("--family", family, "follow_brake|lone_curve|crossing|lane_merge|mixed");
    synth->add_option("--episodes", episodes, "number of episodes");
    synth->add_option("--out", out_dir, "output directory")->required();

    // build-graphs
    auto* bg = app.add_subcommand("build-graphs", "cache scene graphs as JSON lines");
    std::string tracks_path, map_path, out_path;
    bg->add_option("--tracks", tracks_path, "tracks CSV")->required()->check(CLI::ExistingFile);
    bg->add_option("--map", map_path, "map JSON")->required()->check(CLI::ExistingFile);
    bg->add_option("--out", out_path, "output JSONL path")->required();

    // rasterize
    auto* ras = app.add_subcommand("rasterize", "render one PPM per sample window");
    std::string r_tracks, r_map, r_out;
    ras->add_option("--tracks", r_tracks, "tracks CSV")->required()->check(CLI::ExistingFile);
    ras->add_option("--map", r_map, "map JSON")->required()->check(CLI::ExistingFile);
    ras->add_option("--out-dir", r_out, "output directory")->required();

    // train
    auto* tr = app.add_subcommand("train", "train the hybrid model");
    std::string t_tracks, t_map, t_meta, t_graphs, t_out;
    int t_epochs = 0;
    tr->add_option("--tracks", t_tracks, "tracks CSV")->required()->check(CLI::ExistingFile);
    tr->add_option("--map", t_map, "map JSON")->required()->check(CLI::ExistingFile);
    tr->add_option("--meta", t_meta, "episode metadata JSON")->check(CLI::ExistingFile);
    tr->add_option("--graphs", t_graphs, "cached graphs JSONL")->check(CLI::ExistingFile);
    tr->add_option("--out", t_out, "checkpoint path prefix")->required();
    tr->add_option("--epochs", t_epochs, "override train.max_epochs");

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "displacement metrics per scenario family");
    std::string e_ckpt, e_tracks, e_map, e_meta, e_split = "holdout", e_out;
    ev->add_option("--ckpt", e_ckpt, "checkpoint path prefix")->required();
    ev->add_option("--tracks", e_tracks, "tracks CSV")->required()->check(CLI::ExistingFile);
    ev->add_option("--map", e_map, "map JSON")->required()->check(CLI::ExistingFile);
    ev->add_option("--meta", e_meta, "episode metadata JSON")->check(CLI::ExistingFile);
    ev->add_option("--split", e_split, "train|val|holdout|all");
    ev->add_option("--out", e_out, "output CSV")->required();

    // mine
    auto* mi = app.add_subcommand("mine", "score scenes by graph attention");
    std::string m_ckpt, m_tracks, m_map, m_meta, m_split = "holdout", m_out;
    mi->add_option("--ckpt", m_ckpt, "checkpoint path prefix")->required();
    mi->add_option("--tracks", m_tracks, "tracks CSV")->required()->check(CLI::ExistingFile);
    mi->add_option("--map", m_map, "map JSON")->required()->check(CLI::ExistingFile);
    mi->add_option("--meta", m_meta, "episode metadata JSON")->check(CLI::ExistingFile);
    mi->add_option("--split", m_split, "train|val|holdout|all");
    mi->add_option("--out", m_out, "scores CSV path")->required();

    // sweep
    auto* sw = app.add_subcommand("sweep", "attention sweep fan plots");
    std::string s_ckpt, s_tracks, s_map, s_meta, s_split = "holdout", s_out;
    std::vector<std::string> s_samples;
    int s_top = 3;
    sw->add_option("--ckpt", s_ckpt, "checkpoint path prefix")->required();
    sw->add_option("--tracks", s_tracks, "tracks CSV")->required()->check(CLI::ExistingFile);
    sw->add_option("--map", s_map, "map JSON")->required()->check(CLI::ExistingFile);
    sw->add_option("--meta", s_meta, "episode metadata JSON")->check(CLI::ExistingFile);
    sw->add_option("--samples", s_samples, "explicit sample ids (trackid@t0)");
    sw->add_option("--top", s_top, "sweep the top-K most interactive samples");
    sw->add_option("--split", s_split, "train|val|holdout|all");
    sw->add_option("--out-dir", s_out, "output directory")->required();

    // report
    auto* rp = app.add_subcommand("report", "histogram and scatter charts from scores");
    std::string p_scores, p_out;
    rp->add_option("--scores", p_scores, "scores CSV")->required()->check(CLI::ExistingFile);
    rp->add_option("--out-dir", p_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (synth->parsed()) return run_synth(g, family, episodes, out_dir);
        if (bg->parsed()) return run_build_graphs(g, tracks_path, map_path, out_path);
        if (ras->parsed()) return run_rasterize(g, r_tracks, r_map, r_out);
        if (tr->parsed()) return run_train(g, t_tracks, t_map, t_meta, t_graphs, t_out, t_epochs);
        if (ev->parsed()) return run_evaluate(g, e_ckpt, e_tracks, e_map, e_meta, e_split, e_out);
        if (mi->parsed()) return run_mine(g, m_ckpt, m_tracks, m_map, m_meta, m_split, m_out);
        if (sw->parsed()) return run_sweep(g, s_ckpt, s_tracks, s_map, s_meta, s_samples, s_top, s_split, s_out);
        if (rp->parsed()) return run_report(g, p_scores, p_out);
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const IntegrityError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
