#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "g3dm/config.hpp"
#include "g3dm/evaluation.hpp"
#include "g3dm/geometry.hpp"
#include "g3dm/graphnet.hpp"
#include "g3dm/io.hpp"
#include "g3dm/rng.hpp"
#include "g3dm/synthgen.hpp"
#include "g3dm/training.hpp"

namespace g3dm::cli {

namespace detail {

inline std::string network_config_json(const NetworkConfig& cfg) {
    std::ostringstream s;
    auto list = [&s](const std::vector<std::size_t>& v) {
        s << '[';
        for (std::size_t i = 0; i < v.size(); ++i) s << (i ? "," : "") << v[i];
        s << ']';
    };
    s << "{\"k\":" << cfg.k << ",\"input_dim\":" << cfg.input_dim << ",\"edgeconv_widths\":";
    list(cfg.edgeconv_widths);
    s << ",\"stn_mlp_widths\":";
    list(cfg.stn_mlp_widths);
    s << ",\"embed_mlp_widths\":";
    list(cfg.embed_mlp_widths);
    s << ",\"residual_layers\":";
    list(cfg.residual_layers);
    s << ",\"normalization\":" << (cfg.normalization ? "true" : "false") << ",\"angle_bounds\":["
      << num9(cfg.angle_bounds[0]) << ',' << num9(cfg.angle_bounds[1]) << ','
      << num9(cfg.angle_bounds[2]) << "]}";
    return s.str();
}

inline NetworkConfig network_config_from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    NetworkConfig cfg;
    cfg.k = j.at("k").get<std::size_t>();
    cfg.input_dim = j.at("input_dim").get<std::size_t>();
    cfg.edgeconv_widths = j.at("edgeconv_widths").get<std::vector<std::size_t>>();
    cfg.stn_mlp_widths = j.at("stn_mlp_widths").get<std::vector<std::size_t>>();
    cfg.embed_mlp_widths = j.at("embed_mlp_widths").get<std::vector<std::size_t>>();
    cfg.residual_layers = j.at("residual_layers").get<std::vector<std::size_t>>();
    cfg.normalization = j.at("normalization").get<bool>();
    const auto b = j.at("angle_bounds");
    cfg.angle_bounds = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>()};
    return cfg;
}

inline ParamSet add_prefix(const ParamSet& p, const std::string& prefix) {
    ParamSet out;
    for (std::size_t i = 0; i < p.size(); ++i) out.add(prefix + p.names()[i], p.at(i));
    return out;
}

inline ParamSet take_prefix(const ParamSet& p, const std::string& prefix) {
    ParamSet out;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const std::string& name = p.names()[i];
        if (name.rfind(prefix, 0) == 0) out.add(name.substr(prefix.size()), p.at(i));
    }
    return out;
}

struct LoadedModel {
    NetworkConfig cfg;
    ParamSet embed;
    std::optional<ParamSet> stn;
};

inline LoadedModel load_model(const std::string& path) {
    const io::Checkpoint ck = io::load_checkpoint(path);
    LoadedModel m;
    m.cfg = network_config_from_json(ck.config_echo);
    m.embed = take_prefix(ck.params, "embed.");
    if (m.embed.size() == 0)
        throw std::runtime_error("checkpoint " + path + " holds no embedder parameters");
    ParamSet stn = take_prefix(ck.params, "stn.");
    if (stn.size() > 0) m.stn = std::move(stn);
    return m;
}

// Embedding function for one model; templates that cannot be embedded
// (fewer than 4 minutiae) yield no value and are scored 0 by the protocol.
inline Matcher model_matcher(const LoadedModel& model, bool plain) {
    return [&model, plain](const Template3D& tpl) -> std::optional<Embedding> {
        try {
            if (model.stn && !plain)
                return correct_and_embed(tpl, *model.stn, model.embed, model.cfg);
            const Tensor feats = model.cfg.input_dim == 6
                                     ? PaddedSet::template_features(tpl)
                                     : PaddedSet::template_features_2d(tpl);
            return embed(PaddedSet::from_features(feats, feats.rows()), model.embed, model.cfg);
        } catch (const std::exception&) {
            return std::nullopt;
        }
    };
}

inline std::vector<io::ScoreRow> matrix_to_rows(const ScoreMatrix& m) {
    std::vector<io::ScoreRow> rows;
    if (m.symmetric) {
        const std::size_t n = m.probe_ids.size();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j)
                rows.push_back({m.probe_ids[i], m.gallery_ids[j], m.scores.at(i, j)});
    } else {
        for (std::size_t p = 0; p < m.probe_ids.size(); ++p)
            for (std::size_t g = 0; g < m.gallery_ids.size(); ++g)
                rows.push_back({m.probe_ids[p], m.gallery_ids[g], m.scores.at(p, g)});
    }
    return rows;
}

inline void apply_2d_mode(NetworkConfig& cfg) {
    cfg.input_dim = 3;
    cfg.stn_mlp_widths.back() = 3;
}

inline std::vector<double> parse_pose_list(const std::string& poses) {
    std::vector<double> out;
    std::stringstream ss(poses);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        out.push_back(std::stod(item));
    }
    if (out.empty()) throw std::runtime_error("--poses: expected a comma-separated list");
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Subcommand bodies

struct SynthArgs {
    std::string out;
    std::string name = "synthetic";
    std::size_t fingers = 10;
    std::string poses = "0,20,40";
    std::size_t impressions = 1;
    std::size_t minutiae = 40;
    double dropout = 0.0;
    double jitter = 0.0;
    double theta_jitter = 0.0;
    std::size_t contacts = 0;
    std::size_t contact_impressions = 3;
    bool no_grids = false;
    std::uint64_t seed = 0;
};

inline int run_synth(const SynthArgs& a) {
    namespace fs = std::filesystem;
    const auto poses = detail::parse_pose_list(a.poses);
    fs::create_directories(fs::path(a.out) / "templates");
    if (!a.no_grids) fs::create_directories(fs::path(a.out) / "grids");

    FingerParams fparams;
    fparams.minutiae_count = a.minutiae;

    io::DatasetManifest manifest;
    manifest.name = a.name;
    manifest.alpha = kDefaultAlpha;

    for (std::size_t f = 0; f < a.fingers; ++f) {
        const std::string finger_id = "f" + std::to_string(f);
        const SyntheticFinger finger =
            generate_finger(mix_seed(a.seed, f), fparams, finger_id);
        for (std::size_t p = 0; p < poses.size(); ++p) {
            for (std::size_t imp = 0; imp < a.impressions; ++imp) {
                ObservationSpec spec;
                spec.yaw_deg = poses[p];
                spec.dropout = a.dropout;
                spec.position_jitter = a.jitter;
                spec.orientation_jitter = a.theta_jitter;
                spec.seed = mix_seed(finger.seed, p * 1000 + imp);

                Observation obs = observe(finger, spec);
                std::string tid = finger_id + "_y" + std::to_string(static_cast<int>(poses[p]));
                if (a.impressions > 1) tid += "_i" + std::to_string(imp);
                obs.tpl.template_id = tid;
                obs.tpl.pose_label = "yaw" + std::to_string(static_cast<int>(poses[p]));

                io::ManifestRecord rec;
                rec.template_id = tid;
                rec.finger_id = finger_id;
                rec.pose_label = obs.tpl.pose_label;
                rec.yaw_deg = poses[p];
                rec.template_path = "templates/" + tid + ".jsonl";
                io::save_templates({obs.tpl}, (fs::path(a.out) / rec.template_path).string());
                if (!a.no_grids) {
                    rec.gradient_grid_path = "grids/" + tid + ".grad.csv";
                    rec.depth_grid_path = "grids/" + tid + ".depth.csv";
                    rec.grid_scale = spec.grid_scale;
                    io::save_gradient_grid(obs.grad,
                                           (fs::path(a.out) / rec.gradient_grid_path).string());
                    io::save_depth_grid(obs.depth,
                                        (fs::path(a.out) / rec.depth_grid_path).string());
                }
                manifest.records.push_back(std::move(rec));
            }
        }
    }
    io::save_manifest(manifest, (fs::path(a.out) / "manifest.json").string());

    if (a.contacts > 0) {
        ContactParams cparams;
        cparams.minutiae_count = a.minutiae;
        cparams.impressions = a.contact_impressions;
        std::vector<io::MinutiaSet2D> sets;
        for (std::size_t i = 0; i < a.contacts; ++i) {
            const auto imps = generate_contact_set(mix_seed(a.seed, 0xc0ffee + i), cparams,
                                                   "c" + std::to_string(i));
            for (const auto& imp : imps)
                sets.push_back({imp.set_id, imp.identity_id, imp.minutiae});
        }
        io::save_minutiae_2d(sets, (fs::path(a.out) / "contacts.jsonl").string());
    }
    std::printf("synth: wrote %zu templates%s to %s\n", manifest.records.size(),
                a.contacts ? " and contact sets" : "", a.out.c_str());
    return 0;
}

struct LiftArgs {
    std::string mode;  // sphere | flat | grids
    std::string sets;
    std::string out;
    std::string grad_path, depth_path;
    double grid_scale = 1.0;
    double c = kDefaultSphereC;
    double alpha = kDefaultAlpha;
    std::string name = "lifted";
};

inline int run_lift(const LiftArgs& a) {
    namespace fs = std::filesystem;
    const auto sets = io::load_minutiae_2d(a.sets);
    if (a.mode == "grids") {
        const GradientGrid grad = io::load_gradient_grid(a.grad_path, a.grid_scale);
        const DepthGrid depth = io::load_depth_grid(a.depth_path, a.grid_scale);
        std::vector<Template3D> out;
        for (const auto& set : sets) {
            Template3D t;
            t.template_id = set.set_id;
            t.finger_id = set.identity_id;
            t.pose_label = "lifted";
            for (const auto& m : set.minutiae)
                t.minutiae.push_back(lift_minutia(m, grad, depth, a.alpha));
            out.push_back(std::move(t));
        }
        io::save_templates(out, a.out);
        std::printf("lift: wrote %zu templates to %s\n", out.size(), a.out.c_str());
        return 0;
    }

    fs::create_directories(fs::path(a.out) / "templates");
    io::DatasetManifest manifest;
    manifest.name = a.name;
    manifest.alpha = a.alpha;
    for (const auto& set : sets) {
        Template3D t;
        t.template_id = set.set_id;
        t.finger_id = set.identity_id;
        t.pose_label = "contact";
        t.yaw_deg = 0.0;
        if (a.mode == "sphere") {
            t.minutiae = spherical_lift(set.minutiae, a.c, a.alpha);
        } else {  // flat: keep the plane, encode the 2D angle in the orientation
            for (const auto& m : set.minutiae) {
                Minutia3D v;
                v.p = {m.x, m.y, 0.0};
                v.o = {a.alpha * std::cos(m.theta), a.alpha * std::sin(m.theta), 0.0};
                t.minutiae.push_back(v);
            }
        }
        io::ManifestRecord rec;
        rec.template_id = t.template_id;
        rec.finger_id = t.finger_id;
        rec.pose_label = t.pose_label;
        rec.template_path = "templates/" + t.template_id + ".jsonl";
        io::save_templates({t}, (fs::path(a.out) / rec.template_path).string());
        manifest.records.push_back(std::move(rec));
    }
    io::save_manifest(manifest, (fs::path(a.out) / "manifest.json").string());
    std::printf("lift: wrote %zu templates to %s\n", sets.size(), a.out.c_str());
    return 0;
}

struct TrainArgs {
    std::string data;
    std::string config_path;
    std::string init;  // finetune only
    std::string out;
    std::string dual_out;
    std::string trace;
    bool mode_2d = false;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> batch;
};

inline int run_pretrain(const TrainArgs& a) {
    RunConfig cfg = a.config_path.empty() ? RunConfig{} : load_config(a.config_path);
    if (a.seed) cfg.seed = *a.seed;
    if (a.mode_2d) detail::apply_2d_mode(cfg.network);

    const io::DatasetManifest manifest = io::load_manifest(a.data);
    const auto templates = io::load_manifest_templates(a.data, manifest);
    const auto pairs = genuine_pairs(templates, cfg.pair_weights);

    TrainConfig tcfg = cfg.pretrain_config();
    if (a.epochs) tcfg.epochs = *a.epochs;
    if (a.batch) tcfg.batch_size = *a.batch;

    const ParamSet init = init_params(cfg.network, NetKind::Embedder, mix_seed(cfg.seed, 0xE));
    const TrainResult res =
        train(templates, pairs, cfg.network, tcfg, cfg.augment, cfg.pair_weights, init);
    if (res.aborted_on_nan)
        std::fprintf(stderr, "pretrain: aborted on non-finite loss; last good state saved\n");

    io::save_checkpoint(detail::add_prefix(res.embed_params, "embed."),
                        detail::network_config_json(cfg.network), a.out);
    io::save_loss_trace(res.trace, a.trace.empty() ? a.out + ".trace.csv" : a.trace);
    std::printf("pretrain: %zu pairs, %zu epochs, final loss %s -> %s\n", pairs.size(),
                tcfg.epochs, res.trace.empty() ? "n/a" : num9(res.trace.back().mean_loss).c_str(),
                a.out.c_str());
    return res.aborted_on_nan ? 1 : 0;
}

inline int run_finetune(const TrainArgs& a) {
    RunConfig cfg = a.config_path.empty() ? RunConfig{} : load_config(a.config_path);
    if (a.seed) cfg.seed = *a.seed;
    if (a.mode_2d) detail::apply_2d_mode(cfg.network);

    const io::DatasetManifest manifest = io::load_manifest(a.data);
    const auto templates = io::load_manifest_templates(a.data, manifest);
    const auto pairs = genuine_pairs(templates, cfg.pair_weights);

    const detail::LoadedModel init_model = detail::load_model(a.init);
    if (init_model.cfg.input_dim != cfg.network.input_dim)
        throw std::runtime_error("finetune: checkpoint input_dim " +
                                 std::to_string(init_model.cfg.input_dim) +
                                 " does not match the configured mode");

    TrainConfig tcfg = cfg.finetune_config();
    if (a.epochs) tcfg.epochs = *a.epochs;
    if (a.batch) tcfg.batch_size = *a.batch;

    const ParamSet stn_init =
        init_params(cfg.network, NetKind::SpatialTransformer, mix_seed(cfg.seed, 0x57A7));

    auto save_model = [&](const TrainResult& res, const std::string& path) {
        ParamSet both = detail::add_prefix(res.embed_params, "embed.");
        const ParamSet stn = detail::add_prefix(*res.stn_params, "stn.");
        for (std::size_t i = 0; i < stn.size(); ++i) both.add(stn.names()[i], stn.at(i));
        io::save_checkpoint(both, detail::network_config_json(cfg.network), path);
    };

    if (!a.dual_out.empty()) {
        const DualResult dual = train_dual(templates, pairs, cfg.network, tcfg, cfg.augment,
                                           cfg.pair_weights, init_model.embed, stn_init);
        save_model(dual.all_pose, a.out);
        save_model(dual.same_pose, a.dual_out);
        io::save_loss_trace(dual.all_pose.trace, a.trace.empty() ? a.out + ".trace.csv" : a.trace);
        io::save_loss_trace(dual.same_pose.trace, a.dual_out + ".trace.csv");
        std::printf("finetune: dual networks -> %s, %s\n", a.out.c_str(), a.dual_out.c_str());
        return (dual.all_pose.aborted_on_nan || dual.same_pose.aborted_on_nan) ? 1 : 0;
    }

    const TrainResult res = train(templates, pairs, cfg.network, tcfg, cfg.augment,
                                  cfg.pair_weights, init_model.embed, &stn_init);
    if (res.aborted_on_nan)
        std::fprintf(stderr, "finetune: aborted on non-finite loss; last good state saved\n");
    save_model(res, a.out);
    io::save_loss_trace(res.trace, a.trace.empty() ? a.out + ".trace.csv" : a.trace);
    std::printf("finetune: %zu pairs, %zu epochs -> %s\n", pairs.size(), tcfg.epochs,
                a.out.c_str());
    return res.aborted_on_nan ? 1 : 0;
}

struct EmbedArgs {
    std::string data;
    std::string ckpt;
    std::string out;
    bool plain = false;
};

inline int run_embed(const EmbedArgs& a) {
    const io::DatasetManifest manifest = io::load_manifest(a.data);
    const auto templates = io::load_manifest_templates(a.data, manifest);
    const detail::LoadedModel model = detail::load_model(a.ckpt);
    const Matcher matcher = detail::model_matcher(model, a.plain);

    std::vector<std::pair<std::string, Embedding>> rows;
    std::size_t failed = 0;
    for (const auto& t : templates) {
        const auto e = matcher(t);
        if (e)
            rows.push_back({t.template_id, *e});
        else
            ++failed;
    }
    io::save_embeddings(rows, a.out);
    std::printf("embed: %zu embeddings (%zu failed) -> %s\n", rows.size(), failed,
                a.out.c_str());
    return 0;
}

struct MatchArgs {
    std::string embeddings;
    std::string out;
};

inline int run_match(const MatchArgs& a) {
    const auto embs = io::load_embeddings(a.embeddings);
    std::vector<io::ScoreRow> rows;
    for (std::size_t i = 0; i < embs.size(); ++i)
        for (std::size_t j = i + 1; j < embs.size(); ++j)
            rows.push_back(
                {embs[i].first, embs[j].first, match_score(embs[i].second, embs[j].second)});
    io::save_scores(rows, a.out);
    std::printf("match: %zu pairwise scores -> %s\n", rows.size(), a.out.c_str());
    return 0;
}

struct EvaluateArgs {
    std::string data;
    std::string protocol = "all-vs-all";
    std::string ckpt;
    std::string ckpt_b;
    std::string scores;
    std::string out;
    std::string scores_out;
    std::string curves_dir;
};

inline int run_evaluate(const EvaluateArgs& a) {
    const io::DatasetManifest manifest = io::load_manifest(a.data);
    const auto templates = io::load_manifest_templates(a.data, manifest);

    ProtocolSpec spec;
    if (a.protocol == "all-vs-all")
        spec.mode = ProtocolSpec::Mode::AllVsAll;
    else if (a.protocol == "identification")
        spec.mode = ProtocolSpec::Mode::Identification;
    else
        throw std::runtime_error("evaluate: unknown protocol " + a.protocol);

    ProtocolResult result;
    if (!a.scores.empty()) {
        const auto rows = io::load_scores(a.scores);
        std::map<std::pair<std::string, std::string>, double> lut;
        for (const auto& r : rows) lut[{r.probe_id, r.gallery_id}] = r.score;
        const PairScorer scorer = [&](std::size_t i,
                                      std::size_t j) -> std::pair<double, bool> {
            auto it = lut.find({templates[i].template_id, templates[j].template_id});
            if (it == lut.end())
                it = lut.find({templates[j].template_id, templates[i].template_id});
            if (it == lut.end()) return {0.0, true};
            return {it->second, false};
        };
        result = run_protocol_scored(templates, spec, scorer);
    } else if (!a.ckpt_b.empty()) {
        const detail::LoadedModel model_a = detail::load_model(a.ckpt);
        const detail::LoadedModel model_b = detail::load_model(a.ckpt_b);
        const Matcher ma = detail::model_matcher(model_a, false);
        const Matcher mb = detail::model_matcher(model_b, false);
        std::vector<std::optional<Embedding>> ea(templates.size()), eb(templates.size());
        std::size_t failed = 0;
        for (std::size_t i = 0; i < templates.size(); ++i) {
            ea[i] = ma(templates[i]);
            eb[i] = mb(templates[i]);
            if (!ea[i] || !eb[i]) ++failed;
        }
        const PairScorer scorer = [&](std::size_t i,
                                      std::size_t j) -> std::pair<double, bool> {
            if (!ea[i] || !ea[j] || !eb[i] || !eb[j]) return {0.0, true};
            return {fuse_dual(match_score(*ea[i], *ea[j]), match_score(*eb[i], *eb[j])), false};
        };
        result = run_protocol_scored(templates, spec, scorer, failed);
    } else if (!a.ckpt.empty()) {
        const detail::LoadedModel model = detail::load_model(a.ckpt);
        result = run_protocol(templates, spec, detail::model_matcher(model, false));
    } else {
        throw std::runtime_error("evaluate: need --ckpt, --ckpt with --ckpt-b, or --scores");
    }

    io::save_report(result.report, a.out);
    if (!a.scores_out.empty()) io::save_scores(detail::matrix_to_rows(result.matrix), a.scores_out);
    if (!a.curves_dir.empty()) {
        std::filesystem::create_directories(a.curves_dir);
        emit_curves(result.report, a.curves_dir);
    }
    std::printf("evaluate: %s on %zu templates: EER %s, Rank-1 %s -> %s\n",
                result.report.protocol.c_str(), result.report.n_templates,
                num9(result.report.eer).c_str(), num9(result.report.rank1).c_str(),
                a.out.c_str());
    return 0;
}

struct FuseArgs {
    std::string mode;  // dual | external
    std::string scores_a;
    std::string scores_b;
    std::string external;
    std::string scores;
    std::string out;
};

inline int run_fuse(const FuseArgs& a) {
    std::vector<io::ScoreRow> fused;
    if (a.mode == "dual") {
        const auto rows_a = io::load_scores(a.scores_a);
        const auto rows_b = io::load_scores(a.scores_b);
        std::map<std::pair<std::string, std::string>, double> lut;
        for (const auto& r : rows_b) lut[{r.probe_id, r.gallery_id}] = r.score;
        for (const auto& r : rows_a) {
            auto it = lut.find({r.probe_id, r.gallery_id});
            if (it == lut.end()) it = lut.find({r.gallery_id, r.probe_id});
            if (it == lut.end())
                throw std::runtime_error("fuse: pair " + r.probe_id + "," + r.gallery_id +
                                         " missing from " + a.scores_b);
            fused.push_back({r.probe_id, r.gallery_id, fuse_dual(r.score, it->second)});
        }
    } else if (a.mode == "external") {
        const auto internal = io::load_scores(a.scores);
        std::map<std::pair<std::string, std::string>, double> lut;
        if (!a.external.empty())
            for (const auto& r : io::load_scores(a.external))
                lut[{r.probe_id, r.gallery_id}] = r.score;
        for (const auto& r : internal) {
            auto it = lut.find({r.probe_id, r.gallery_id});
            if (it == lut.end()) it = lut.find({r.gallery_id, r.probe_id});
            const double s3 = it == lut.end() ? 0.0 : it->second;  // missing row -> 0
            fused.push_back({r.probe_id, r.gallery_id, fuse_external(s3, r.score * 300.0)});
        }
    } else {
        throw std::runtime_error("fuse: unknown mode " + a.mode);
    }
    io::save_scores(fused, a.out);
    std::printf("fuse: %zu fused scores -> %s\n", fused.size(), a.out.c_str());
    return 0;
}

struct ReportArgs {
    std::string report;
    std::string out_dir;
};

inline int run_report(const ReportArgs& a) {
    const MetricsReport r = io::load_report(a.report);
    std::filesystem::create_directories(a.out_dir);
    emit_curves(r, a.out_dir);
    std::printf("report: curves for %s -> %s\n", r.protocol.c_str(), a.out_dir.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// Argument wiring

inline int run(std::vector<std::string> args) {
    CLI::App app{"3D graph minutiae matcher: synthetic data, training, evaluation"};
    app.name("g3dm");
    app.require_subcommand(1);

    SynthArgs synth;
    auto* synth_cmd = app.add_subcommand(
        "synth",
        "Generate a synthetic dataset: manifest.json, templates/*.jsonl "
        "(JSON lines {\"template_id\",\"finger_id\",\"pose_label\",\"yaw\",\"minutiae\":"
        "[[x,y,z,dx,dy,dz],...]}), grids/*.csv, optional contacts.jsonl");
    synth_cmd->add_option("--out", synth.out, "Output directory")->required();
    synth_cmd->add_option("--fingers", synth.fingers, "Number of synthetic fingers");
    synth_cmd->add_option("--poses", synth.poses, "Comma-separated yaw angles in degrees");
    synth_cmd->add_option("--impressions", synth.impressions, "Impressions per pose");
    synth_cmd->add_option("--minutiae", synth.minutiae, "Minutiae per finger [20, 200]");
    synth_cmd->add_option("--dropout", synth.dropout, "Per-minutia dropout rate [0, 0.5]");
    synth_cmd->add_option("--jitter", synth.jitter, "Position jitter sigma, px");
    synth_cmd->add_option("--theta-jitter", synth.theta_jitter,
                          "2D orientation jitter sigma, radians");
    synth_cmd->add_option("--contacts", synth.contacts, "Contact-style identities to generate");
    synth_cmd->add_option("--contact-impressions", synth.contact_impressions,
                          "Impressions per contact identity");
    synth_cmd->add_flag("--no-grids", synth.no_grids, "Skip gradient/depth grid files");
    synth_cmd->add_option("--name", synth.name, "Dataset name");
    synth_cmd->add_option("--seed", synth.seed, "Deterministic seed");

    LiftArgs lift;
    auto* lift_cmd = app.add_subcommand(
        "lift",
        "Lift 2D minutiae to 3D. Modes: sphere (contact sets onto the spherical "
        "finger model), flat (z=0 planar templates for the 2D baseline), grids "
        "(sample gradient/depth CSV grids)");
    lift_cmd->add_option("--mode", lift.mode, "sphere | flat | grids")->required();
    lift_cmd->add_option("--sets", lift.sets,
                         "2D sets JSONL: {\"set_id\",\"identity_id\",\"minutiae\":"
                         "[[x,y,theta],...]}")
        ->required();
    lift_cmd->add_option("--out", lift.out,
                         "Output dir (sphere/flat) or output JSONL (grids)")
        ->required();
    lift_cmd->add_option("--grad", lift.grad_path, "Gradient grid CSV (grids mode)");
    lift_cmd->add_option("--depth", lift.depth_path, "Depth grid CSV (grids mode)");
    lift_cmd->add_option("--grid-scale", lift.grid_scale, "Pixels per grid cell");
    lift_cmd->add_option("--c", lift.c, "Spherical-lift constant (pixels^2)");
    lift_cmd->add_option("--alpha", lift.alpha, "Orientation scale");
    lift_cmd->add_option("--name", lift.name, "Dataset name");

    TrainArgs pretrain;
    auto* pre_cmd = app.add_subcommand(
        "pretrain", "Stage-1 training of the graph embedder on lifted contact templates");
    pre_cmd->add_option("--data", pretrain.data, "Dataset manifest.json")->required();
    pre_cmd->add_option("--config", pretrain.config_path, "TOML configuration");
    pre_cmd->add_option("--out", pretrain.out, "Output checkpoint")->required();
    pre_cmd->add_option("--trace", pretrain.trace, "Loss trace CSV (default <out>.trace.csv)");
    pre_cmd->add_flag("--mode-2d", pretrain.mode_2d, "Train the planar (x, y, theta) baseline");
    std::uint64_t pre_seed = 0;
    auto* pre_seed_opt = pre_cmd->add_option("--seed", pre_seed, "Seed override");
    std::size_t pre_epochs = 0;
    auto* pre_epochs_opt = pre_cmd->add_option("--epochs", pre_epochs, "Epoch override");
    std::size_t pre_batch = 0;
    auto* pre_batch_opt = pre_cmd->add_option("--batch", pre_batch, "Batch-size override");

    TrainArgs finetune;
    auto* fin_cmd = app.add_subcommand(
        "finetune",
        "Stage-2 training: spatial transformer plus embedder on posed 3D templates");
    fin_cmd->add_option("--data", finetune.data, "Dataset manifest.json")->required();
    fin_cmd->add_option("--init", finetune.init, "Stage-1 checkpoint")->required();
    fin_cmd->add_option("--config", finetune.config_path, "TOML configuration");
    fin_cmd->add_option("--out", finetune.out, "Output checkpoint (all-pose network)")
        ->required();
    fin_cmd->add_option("--dual-out", finetune.dual_out,
                        "Also train the same-orientation network into this checkpoint");
    fin_cmd->add_option("--trace", finetune.trace, "Loss trace CSV");
    fin_cmd->add_flag("--mode-2d", finetune.mode_2d, "Train the planar baseline");
    std::uint64_t fin_seed = 0;
    auto* fin_seed_opt = fin_cmd->add_option("--seed", fin_seed, "Seed override");
    std::size_t fin_epochs = 0;
    auto* fin_epochs_opt = fin_cmd->add_option("--epochs", fin_epochs, "Epoch override");
    std::size_t fin_batch = 0;
    auto* fin_batch_opt = fin_cmd->add_option("--batch", fin_batch, "Batch-size override");

    EmbedArgs embed_args;
    auto* emb_cmd = app.add_subcommand(
        "embed", "Compute 256-d embeddings for every template of a manifest");
    emb_cmd->add_option("--data", embed_args.data, "Dataset manifest.json")->required();
    emb_cmd->add_option("--ckpt", embed_args.ckpt, "Model checkpoint")->required();
    emb_cmd->add_option("--out", embed_args.out, "Embeddings CSV (template_id,dim,v...)")
        ->required();
    emb_cmd->add_flag("--plain", embed_args.plain,
                      "Skip pose correction even when the checkpoint has a transformer");

    MatchArgs match_args;
    auto* match_cmd = app.add_subcommand(
        "match", "All-vs-all pairwise scores from an embeddings CSV "
                 "(output: probe_id,gallery_id,score)");
    match_cmd->add_option("--embeddings", match_args.embeddings, "Embeddings CSV")->required();
    match_cmd->add_option("--out", match_args.out, "Score CSV")->required();

    EvaluateArgs eval_args;
    auto* eval_cmd = app.add_subcommand(
        "evaluate",
        "Run a matching protocol and write a metrics report (EER, Rank-1, DET/CMC points)");
    eval_cmd->add_option("--data", eval_args.data, "Dataset manifest.json")->required();
    eval_cmd->add_option("--protocol", eval_args.protocol, "all-vs-all | identification");
    eval_cmd->add_option("--ckpt", eval_args.ckpt, "Model checkpoint");
    eval_cmd->add_option("--ckpt-b", eval_args.ckpt_b,
                         "Same-orientation checkpoint; scores fuse as 0.6*s1+0.4*s2 when "
                         "s2 >= 0.7, else s2");
    eval_cmd->add_option("--scores", eval_args.scores, "Precomputed score CSV");
    eval_cmd->add_option("--out", eval_args.out, "Report JSON")->required();
    eval_cmd->add_option("--scores-out", eval_args.scores_out, "Persist the raw score matrix");
    eval_cmd->add_option("--curves-dir", eval_args.curves_dir, "Emit DET/ROC/CMC curves here");

    FuseArgs fuse_args;
    auto* fuse_cmd = app.add_subcommand(
        "fuse",
        "Fuse score files. dual: 0.6*s1+0.4*s2 when s2 >= 0.7, else s2. external: "
        "s3/1000 + s*300/300 with missing external rows treated as 0");
    fuse_cmd->add_option("--mode", fuse_args.mode, "dual | external")->required();
    fuse_cmd->add_option("--scores-a", fuse_args.scores_a, "All-pose score CSV (dual)");
    fuse_cmd->add_option("--scores-b", fuse_args.scores_b, "Same-pose score CSV (dual)");
    fuse_cmd->add_option("--external", fuse_args.external, "External matcher score CSV");
    fuse_cmd->add_option("--scores", fuse_args.scores, "Internal score CSV (external mode)");
    fuse_cmd->add_option("--out", fuse_args.out, "Fused score CSV")->required();

    ReportArgs report_args;
    auto* rep_cmd =
        app.add_subcommand("report", "Render DET/ROC/CMC curve CSVs and SVGs from a report");
    rep_cmd->add_option("--report", report_args.report, "Report JSON")->required();
    rep_cmd->add_option("--out-dir", report_args.out_dir, "Output directory")->required();

    std::vector<const char*> argv;
    argv.push_back("g3dm");
    for (const auto& s : args) argv.push_back(s.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "g3dm: %s\n", e.what());
        std::fprintf(stderr, "%s\n", app.help().c_str());
        return 2;
    }

    try {
        if (*synth_cmd) return run_synth(synth);
        if (*lift_cmd) return run_lift(lift);
        if (*pre_cmd) {
            if (*pre_seed_opt) pretrain.seed = pre_seed;
            if (*pre_epochs_opt) pretrain.epochs = pre_epochs;
            if (*pre_batch_opt) pretrain.batch = pre_batch;
            return run_pretrain(pretrain);
        }
        if (*fin_cmd) {
            if (*fin_seed_opt) finetune.seed = fin_seed;
            if (*fin_epochs_opt) finetune.epochs = fin_epochs;
            if (*fin_batch_opt) finetune.batch = fin_batch;
            return run_finetune(finetune);
        }
        if (*emb_cmd) return run_embed(embed_args);
        if (*match_cmd) return run_match(match_args);
        if (*eval_cmd) return run_evaluate(eval_args);
        if (*fuse_cmd) return run_fuse(fuse_args);
        if (*rep_cmd) return run_report(report_args);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "g3dm: %s\n", e.what());
        return 1;
    }
    return 0;
}

inline int run(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.push_back(argv[i]);
    return run(std::move(args));
}

}  // namespace g3dm::cli
