#include "htk/cli.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "htk/common.hpp"
#include "htk/config.hpp"
#include "htk/container.hpp"
#include "htk/data.hpp"
#include "htk/heatmap.hpp"
#include "htk/hotspot.hpp"
#include "htk/metrics.hpp"
#include "htk/net.hpp"
#include "htk/train.hpp"

#include "CLI11.hpp"
#include "json.hpp"

namespace htk::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

RunConfig make_config(const std::string& config_path, const std::vector<std::string>& sets) {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    apply_overrides(cfg, sets);
    return cfg;
}

void sync_data_from_manifest(RunConfig& cfg, const DatasetManifest& m) {
    cfg.data.image_size = m.image_size;
    cfg.data.clip_len = m.clip_len;
    cfg.data.actions = m.actions;
    cfg.data.objects = m.objects;
}

std::vector<int> parse_holdout(const std::string& s) {
    std::vector<int> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        const auto comma = s.find(',', start);
        const std::string tok = s.substr(start, comma == std::string::npos ? comma : comma - start);
        if (tok.empty()) throw ConfigError("bad --novel-holdout value '" + s + "'");
        try {
            std::size_t used = 0;
            const int v = std::stoi(tok, &used);
            if (used != tok.size()) throw std::invalid_argument(tok);
            out.push_back(v);
        } catch (const std::exception&) {
            throw ConfigError("bad --novel-holdout value '" + s + "': expected comma-separated class indices");
        }
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

fs::path resolve_checkpoint_dir(const fs::path& given) {
    if (fs::exists(given / "manifest.json")) return given;
    if (fs::exists(given / "checkpoint" / "manifest.json")) return given / "checkpoint";
    throw IoError("no checkpoint manifest under " + given.string());
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw IoError("malformed JSON in " + path.string() + ": " + e.what());
    }
    return j;
}

void write_json_file(const fs::path& path, const ordered_json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << "\n";
    if (!out) throw IoError("short write: " + path.string());
}

struct LoadedModel {
    HotspotModel<float> model;
    RunConfig cfg;
    std::string hash;
};

LoadedModel load_model(const fs::path& ckpt_dir) {
    const fs::path dir = resolve_checkpoint_dir(ckpt_dir);
    const json manifest = read_json_file(dir / "manifest.json");
    if (!manifest.contains("config")) throw IoError("checkpoint manifest lacks a config snapshot");
    LoadedModel lm;
    lm.cfg = parse_run_config(manifest.at("config"));
    Rng rng(derive_seed(lm.cfg.seed, fnv1a64("model-init")));
    lm.model = build_model(lm.cfg, rng);
    load_checkpoint(dir, lm.model, static_cast<Adam<float>*>(nullptr), nullptr);
    lm.hash = manifest.value("config_hash", std::string("unknown"));
    return lm;
}

Heatmap heatmap_from_file(const fs::path& path) {
    Tensor<double> t = load_tensor<double>(path);
    if (t.rank() != 2) throw IoError("heatmap file " + path.string() + " is not a 2-d tensor");
    Heatmap m(t.dim(0), t.dim(1));
    m.v = t.value();
    return m;
}

void heatmap_to_file(const fs::path& path, const Heatmap& m) {
    save_tensor(path, Tensor<double>(Shape{m.h, m.w}, m.v));
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const std::string& out_dir, const RunConfig& cfg) {
    const DatasetManifest m = gen_dataset(cfg.data, cfg.seed, out_dir);
    std::cout << "dataset " << m.root.string() << ": " << m.clips.size() << " clips, "
              << m.objects.size() << " objects x " << m.actions.size() << " actions, hash "
              << m.config_hash << "\n";
    return 0;
}

int cmd_train(const std::string& data_dir, const std::string& out_dir, RunConfig cfg,
              const std::string& holdout, const std::string& resume) {
    DatasetManifest m = load_manifest(fs::path(data_dir) / "manifest.json");
    if (!holdout.empty()) m = novel_object_split(m, parse_holdout(holdout)).first;
    sync_data_from_manifest(cfg, m);

    const auto items = build_train_items(m, "train", cfg.train.chunk_len);
    if (items.empty()) throw ValueError("train: no training items in " + data_dir);

    Rng rng(derive_seed(cfg.seed, fnv1a64("model-init")));
    HotspotModel<float> model = build_model(cfg, rng);

    const auto logs = fit(model, items, train_config_from(cfg), out_dir, to_json(cfg),
                          resume.empty() ? fs::path{} : fs::path(resume));
    if (!logs.empty()) {
        const EpochLog& last = logs.back();
        std::cout << "trained variant " << cfg.model.variant << " for " << logs.size() << " epochs: loss "
                  << last.total << ", train accuracy " << last.accuracy << "\n";
    }
    std::cout << "checkpoint " << (fs::path(out_dir) / "checkpoint").string() << " (config hash "
              << config_hash(cfg) << ")\n";
    return 0;
}

int cmd_predict(const std::string& data_dir, const std::string& ckpt, const std::string& out_dir,
                const std::string& baseline, const std::string& holdout, const std::string& split) {
    DatasetManifest m = load_manifest(fs::path(data_dir) / "manifest.json");
    if (!holdout.empty()) m = novel_object_split(m, parse_holdout(holdout)).second;

    LoadedModel lm;
    const bool needs_model = baseline != "center";
    if (needs_model) {
        if (ckpt.empty()) throw ConfigError("predict: --checkpoint is required unless --baseline center");
        lm = load_model(ckpt);
        if (lm.model.actions != m.actions)
            throw ConfigError("predict: checkpoint action vocabulary does not match the dataset");
    }

    fs::create_directories(out_dir);
    ordered_json entries = ordered_json::array();
    Heatmap center;  // shared by every pair under the center baseline
    if (baseline == "center") center = center_bias_map(m.image_size, m.image_size);

    std::size_t emitted = 0;
    for (const auto& e : m.clips) {
        if (e.split != split) continue;
        Tensor<float> img = load_inactive_tensor(m, e);
        std::vector<Heatmap> maps;
        if (baseline == "center") {
            maps.assign(m.actions.size(), center);
        } else if (baseline == "gradcam") {
            for (std::size_t a = 0; a < m.actions.size(); ++a)
                maps.push_back(gradcam_map(lm.model, img, static_cast<int>(a)));
        } else {
            maps = predict_hotspots(lm.model, img, e.id).maps;
        }
        for (std::size_t a = 0; a < m.actions.size(); ++a) {
            const std::string stem = e.id + "_" + m.actions[a];
            heatmap_to_file(fs::path(out_dir) / (stem + ".htk"), maps[a]);
            save_pgm(fs::path(out_dir) / (stem + ".pgm"), normalize_max(maps[a]));
            ordered_json row;
            row["clip"] = e.id;
            row["action"] = m.actions[a];
            row["action_id"] = a;
            row["image"] = e.inactive_file;
            row["htk"] = stem + ".htk";
            row["pgm"] = stem + ".pgm";
            entries.push_back(std::move(row));
            emitted++;
        }
    }
    if (emitted == 0) throw ValueError("predict: no clips in split '" + split + "'");

    ordered_json pj;
    pj["baseline"] = baseline;
    pj["config_hash"] = needs_model ? lm.hash : std::string("none");
    pj["image_size"] = m.image_size;
    pj["count"] = emitted;
    pj["entries"] = std::move(entries);
    write_json_file(fs::path(out_dir) / "predictions.json", pj);
    std::cout << "wrote " << emitted << " maps to " << out_dir << "\n";
    return 0;
}

int cmd_eval(const std::string& data_dir, const std::vector<std::string>& pred_dirs,
             const std::string& out_file, const RunConfig& cfg) {
    const DatasetManifest m = load_manifest(fs::path(data_dir) / "manifest.json");
    const auto annots = load_annotations(m.root / "annotations.jsonl");
    if (annots.empty()) throw ValueError("eval: dataset has no annotations");

    // (clip, action) -> one point list per annotator
    std::map<std::pair<std::string, std::string>, std::vector<std::vector<std::pair<double, double>>>> gt;
    for (const auto& a : annots) gt[{a.clip_id, a.action}].push_back(a.points);

    const double gt_sigma = cfg.metrics.gt_sigma_frac * m.image_size;
    const KlDirection dir =
        cfg.metrics.kl_direction == "pred_gt" ? KlDirection::PredToGt : KlDirection::GtToPred;

    ordered_json splits = ordered_json::array();
    std::vector<MetricScores> split_means;
    for (const auto& pd : pred_dirs) {
        const json pj = read_json_file(fs::path(pd) / "predictions.json");
        std::vector<PairEval> pairs;
        for (const auto& row : pj.at("entries")) {
            const auto key = std::make_pair(row.at("clip").get<std::string>(),
                                            row.at("action").get<std::string>());
            const auto it = gt.find(key);
            if (it == gt.end()) continue;  // no annotations for this pair
            PairEval pe;
            pe.image = row.value("image", key.first);
            pe.action = key.second;
            pe.pred = heatmap_from_file(fs::path(pd) / row.at("htk").get<std::string>());
            if (cfg.metrics.blur_sigma > 0) pe.pred = gaussian_blur(pe.pred, cfg.metrics.blur_sigma);
            for (const auto& pts : it->second)
                pe.annots.push_back(keypoints_to_heatmap(pe.pred.h, pe.pred.w, pts, gt_sigma));
            pairs.push_back(std::move(pe));
        }
        if (pairs.empty()) throw ValueError("eval: no annotated predictions in " + pd);
        const MetricsReport rep = evaluate(pairs, dir);

        ordered_json rows = ordered_json::array();
        for (const auto& r : rep.rows) {
            ordered_json jr;
            jr["image"] = r.image;
            jr["action"] = r.action;
            jr["kld"] = r.s.kld;
            jr["sim"] = r.s.sim;
            jr["auc"] = r.s.auc;
            rows.push_back(std::move(jr));
        }
        ordered_json sj;
        sj["pred"] = pd;
        sj["config_hash"] = pj.value("config_hash", "unknown");
        sj["baseline"] = pj.value("baseline", "hotspot");
        sj["pairs"] = rep.pairs;
        sj["excluded"] = rep.excluded;
        sj["mean"] = {{"kld", rep.mean.kld}, {"sim", rep.mean.sim}, {"auc", rep.mean.auc}};
        sj["rows"] = std::move(rows);
        splits.push_back(std::move(sj));
        split_means.push_back(rep.mean);
    }

    const MetricScores overall = mean_scores(split_means);
    ordered_json out;
    out["kl_direction"] = cfg.metrics.kl_direction;
    out["gt_sigma"] = gt_sigma;
    out["blur_sigma"] = cfg.metrics.blur_sigma;
    out["splits"] = std::move(splits);
    out["mean"] = {{"kld", overall.kld}, {"sim", overall.sim}, {"auc", overall.auc}};
    write_json_file(out_file, out);
    std::cout << "eval mean over " << pred_dirs.size() << " prediction set(s): kld " << overall.kld
              << ", sim " << overall.sim << ", auc " << overall.auc << "\n";
    return 0;
}

int cmd_cluster(const std::string& data_dir, const std::string& ckpt, const std::string& out_file,
                const std::string& split, int per_class) {
    const DatasetManifest m = load_manifest(fs::path(data_dir) / "manifest.json");
    LoadedModel lm = load_model(ckpt);

    std::vector<std::pair<std::string, std::vector<Tensor<float>>>> class_images;
    for (std::size_t o = 0; o < m.objects.size(); ++o) class_images.emplace_back(m.objects[o], std::vector<Tensor<float>>{});
    for (const auto& e : m.clips) {
        if (e.split != split) continue;
        auto& bucket = class_images[static_cast<std::size_t>(e.object_id)].second;
        if (static_cast<int>(bucket.size()) >= per_class) continue;
        bucket.push_back(load_inactive_tensor(m, e));
    }
    const Dendrogram dg = cluster_objects(lm.model, class_images);
    const std::string text = render_dendrogram(dg);
    std::cout << text;
    if (!out_file.empty()) {
        ordered_json j;
        j["config_hash"] = lm.hash;
        j["labels"] = dg.labels;
        ordered_json merges = ordered_json::array();
        for (const auto& mg : dg.merges) {
            ordered_json jm;
            jm["a"] = mg.a;
            jm["b"] = mg.b;
            jm["height"] = mg.height;
            jm["id"] = mg.id;
            merges.push_back(std::move(jm));
        }
        j["merges"] = std::move(merges);
        j["text"] = text;
        write_json_file(out_file, j);
    }
    return 0;
}

int run_impl(int argc, const char* const* argv) {
    CLI::App app{"interaction hotspot toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> sets;
    std::uint64_t seed_flag = 0;
    std::string variant_flag;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file");
        sub->add_option("--set", sets, "config override key.path=value; wins over --config");
        sub->add_option("--seed", seed_flag, "master seed; wins over config");
    };

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic interaction dataset");
    std::string gen_out;
    gen->add_option("--out", gen_out, "output directory")->required();
    add_common(gen);

    auto* train = app.add_subcommand("train", "train a model");
    std::string train_data, train_out, train_holdout, train_resume;
    train->add_option("--data", train_data, "dataset directory")->required();
    train->add_option("--out", train_out, "run directory (logs + checkpoints)")->required();
    train->add_option("--variant", variant_flag, "model variant: basic, res, l2, full");
    train->add_option("--novel-holdout", train_holdout, "comma-separated object class indices held out");
    train->add_option("--resume", train_resume, "checkpoint directory to resume from");
    add_common(train);

    auto* predict = app.add_subcommand("predict", "write per-action hotspot maps for a split");
    std::string pr_data, pr_ckpt, pr_out, pr_baseline = "hotspot", pr_holdout, pr_split = "test";
    predict->add_option("--data", pr_data, "dataset directory")->required();
    predict->add_option("--checkpoint", pr_ckpt, "checkpoint (or train run) directory");
    predict->add_option("--out", pr_out, "output directory")->required();
    predict->add_option("--baseline", pr_baseline, "hotspot (default), center, or gradcam")
        ->check(CLI::IsMember({"hotspot", "center", "gradcam"}));
    predict->add_option("--novel-holdout", pr_holdout, "predict the held-out test side of this split");
    predict->add_option("--split", pr_split, "dataset split (default test)");

    auto* eval = app.add_subcommand("eval", "score predictions against annotations");
    std::string ev_data, ev_out;
    std::vector<std::string> ev_preds;
    eval->add_option("--data", ev_data, "dataset directory")->required();
    eval->add_option("--pred", ev_preds, "prediction directory (repeatable)")->required();
    eval->add_option("--out", ev_out, "report JSON path")->required();
    add_common(eval);

    auto* cluster = app.add_subcommand("cluster", "cluster object classes by anticipated embeddings");
    std::string cl_data, cl_ckpt, cl_out, cl_split = "test";
    int cl_per_class = 16;
    cluster->add_option("--data", cl_data, "dataset directory")->required();
    cluster->add_option("--checkpoint", cl_ckpt, "checkpoint (or train run) directory")->required();
    cluster->add_option("--out", cl_out, "optional JSON output path");
    cluster->add_option("--split", cl_split, "dataset split (default test)");
    cluster->add_option("--per-class", cl_per_class, "images per class (default 16)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed() || train->parsed() || eval->parsed()) {
            RunConfig cfg = make_config(config_path, sets);
            for (const auto* sub : {gen, train, eval})
                if (sub->parsed() && sub->count("--seed")) cfg.seed = seed_flag;
            if (train->parsed() && train->count("--variant")) {
                variant_spec(variant_flag);
                cfg.model.variant = variant_flag;
            }
            if (gen->parsed()) return cmd_gen_data(gen_out, cfg);
            if (train->parsed()) return cmd_train(train_data, train_out, cfg, train_holdout, train_resume);
            return cmd_eval(ev_data, ev_preds, ev_out, cfg);
        }
        if (predict->parsed())
            return cmd_predict(pr_data, pr_ckpt, pr_out, pr_baseline, pr_holdout, pr_split);
        return cmd_cluster(cl_data, cl_ckpt, cl_out, cl_split, cl_per_class);
    } catch (const NumericError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 1;
    } catch (const ShapeError& e) {
        std::cerr << "shape error: " << e.what() << "\n";
        return 1;
    } catch (const ValueError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace

int run(const std::vector<std::string>& args) {
    std::vector<std::string> full;
    full.reserve(args.size() + 1);
    full.push_back("htk");
    full.insert(full.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    argv.reserve(full.size());
    for (const auto& s : full) argv.push_back(s.c_str());
    return run_impl(static_cast<int>(argv.size()), argv.data());
}

int run(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args);
}

}  // namespace htk::cli
