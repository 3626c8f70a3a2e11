#pragma once

#include "cvatlas/agreement/stats.hpp"
#include "cvatlas/atlas/atlas.hpp"
#include "cvatlas/atlas/io.hpp"
#include "cvatlas/data/folds.hpp"
#include "cvatlas/model/checkpoint.hpp"
#include "cvatlas/model/pretrain.hpp"
#include "cvatlas/pipeline/config.hpp"
#include "cvatlas/pipeline/store.hpp"
#include "cvatlas/surrogate/features.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace cvatlas {

/// A stage was run before the stage that produces its input.
class MissingArtifact : public std::runtime_error {
public:
    MissingArtifact(const std::filesystem::path& what, const std::string& stage)
        : std::runtime_error("missing " + what.string() + ": run `cvatlas " + stage + "` first"), stage_(stage) {}
    [[nodiscard]] const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

/// Artifact locations under the output directory.
struct RunLayout {
    std::filesystem::path root;

    [[nodiscard]] std::filesystem::path dataset_dir() const { return root / "dataset"; }
    [[nodiscard]] std::filesystem::path folds() const { return root / "train" / "folds.csv"; }
    [[nodiscard]] std::filesystem::path checkpoint() const { return root / "train" / "model.ckpt"; }
    [[nodiscard]] std::filesystem::path train_manifest() const { return root / "train" / "manifest.json"; }
    [[nodiscard]] std::filesystem::path records() const { return root / "capture" / "records.json"; }
    [[nodiscard]] std::filesystem::path capture_manifest() const { return root / "capture" / "manifest.json"; }
    [[nodiscard]] std::filesystem::path cv_dir() const { return root / "cv"; }
    [[nodiscard]] std::filesystem::path cv_manifest() const { return root / "cv" / "manifest.json"; }
    [[nodiscard]] std::filesystem::path atlas_dir() const { return root / "atlas"; }
    [[nodiscard]] std::filesystem::path label_maps() const { return root / "metrics" / "label_maps.csv"; }
    [[nodiscard]] std::filesystem::path metrics_manifest() const { return root / "metrics" / "manifest.json"; }
    [[nodiscard]] std::filesystem::path store() const { return root / "annotations" / "store.jsonl"; }
    [[nodiscard]] std::filesystem::path merged_annotations() const { return root / "agreement" / "annotations.csv"; }
    [[nodiscard]] std::filesystem::path agreement_manifest() const { return root / "agreement" / "manifest.json"; }
    [[nodiscard]] std::filesystem::path report_json() const { return root / "report" / "report.json"; }
    [[nodiscard]] std::filesystem::path report_md() const { return root / "report" / "report.md"; }
};

inline RunLayout layout(const RunConfig& cfg) { return {cfg.output_dir}; }

namespace detail {

inline std::vector<TextureClass> preset_textures(const std::string& preset) {
    if (preset == "five") return textures::five_class();
    if (preset == "coarse") return textures::coarse3();
    if (preset == "fine") return textures::fine6();
    throw std::invalid_argument("unknown synthetic preset '" + preset + "'");
}

inline void require(const std::filesystem::path& p, const std::string& stage) {
    if (!std::filesystem::exists(p)) throw MissingArtifact(p, stage);
}

inline nlohmann::json read_json(const std::filesystem::path& p, const std::string& stage) {
    require(p, stage);
    return nlohmann::json::parse(detail::read_text(p));
}

/// Stage manifest: no timestamps, files listed with their digests, so equal
/// inputs give equal bytes.
inline void write_manifest(const std::filesystem::path& path, const std::string& stage, const RunConfig& cfg,
                           const std::string& dataset_fp, const std::string& model_fp,
                           const std::vector<std::filesystem::path>& files, nlohmann::json extra = nlohmann::json::object()) {
    nlohmann::json fj = nlohmann::json::object();
    for (const auto& f : files)
        fj[std::filesystem::relative(f, path.parent_path()).generic_string()] = sha256_file(f.string());
    nlohmann::json m{{"stage", stage},
                     {"config_hash", config_hash(cfg)},
                     {"dataset_fingerprint", dataset_fp},
                     {"model_fingerprint", model_fp},
                     {"files", fj}};
    m.update(extra);
    std::filesystem::create_directories(path.parent_path());
    detail::write_text(path, m.dump(2) + "\n");
}

inline std::uint64_t atlas_seed(const RunConfig& cfg) { return derive_seed(cfg.seed, std::string_view("atlas")); }

inline nlohmann::json records_json(const std::vector<ActivationRecord>& records) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : records)
        out.push_back({{"patch_id", r.patch_id},
                       {"layer", r.layer},
                       {"f", vec_json(r.f)},
                       {"gt_class", r.gt_class},
                       {"attribution", vec_json(r.attribution)}});
    return out;
}

inline std::vector<ActivationRecord> records_from_json(const nlohmann::json& j) {
    std::vector<ActivationRecord> out;
    for (const auto& r : j)
        out.push_back({r.at("patch_id").get<std::string>(), r.at("layer").get<int>(), json_vec(r.at("f")),
                       r.at("gt_class").get<int>(), json_vec(r.at("attribution"))});
    return out;
}

inline std::vector<int> label_column(const LabelMap& map, const std::vector<CellIndex>& cells) {
    std::vector<int> out;
    for (const auto& c : cells) {
        const auto* l = map.find(c.i, c.j);
        out.push_back(l && l->label ? *l->label : kMissingLabel);
    }
    return out;
}

}  // namespace detail

/// The configured dataset: generated for synthetic presets, else read from disk.
inline Dataset load_dataset(const RunConfig& cfg) {
    if (cfg.dataset.synthetic) {
        const auto& s = *cfg.dataset.synthetic;
        return make_texture_dataset(detail::preset_textures(s.preset), s.config);
    }
    ClassMap classes;
    if (!cfg.dataset.class_map.empty()) {
        classes = *class_maps::preset(cfg.dataset.class_map);
    } else {
        std::vector<std::string> codes;
        for (const auto& e : std::filesystem::directory_iterator(cfg.dataset.path))
            if (e.is_directory()) codes.push_back(e.path().filename().string());
        std::sort(codes.begin(), codes.end());
        classes = ClassMap::from_codes(codes);
    }
    LoadReport rep;
    auto ds = load_image_folder(cfg.dataset.path, classes, &rep);
    for (const auto& w : rep.warnings) spdlog::warn("{}", w);
    if (ds.patches.empty()) throw std::runtime_error("dataset " + cfg.dataset.path.string() + " has no readable images");
    return ds;
}

/// Frozen backbone: from a checkpoint, pretrained on a proxy set, or random.
inline Backbone make_backbone(const RunConfig& cfg, const Dataset& train_split) {
    if (!cfg.model.checkpoint.empty()) return load_checkpoint(cfg.model.checkpoint).model.backbone();
    if (cfg.model.pretrain_epochs == 0)
        return Backbone::random(cfg.model.backbone, derive_seed(cfg.seed, std::string_view("backbone")));
    Dataset proxy = train_split;
    if (cfg.dataset.synthetic) {
        auto s = cfg.dataset.synthetic->config;
        s.seed = cfg.model.proxy_seed;
        s.per_class = cfg.model.proxy_per_class;
        proxy = make_texture_dataset(detail::preset_textures(cfg.dataset.synthetic->preset), s);
    }
    PretrainConfig pc;
    pc.epochs = cfg.model.pretrain_epochs;
    pc.seed = derive_seed(cfg.seed, std::string_view("pretrain"));
    auto res = pretrain_backbone(cfg.model.backbone, proxy, pc);
    spdlog::info("pretrained backbone: proxy accuracy {:.3f}", res.train_accuracy);
    return std::move(res.backbone);
}

inline Model load_trained_model(const RunConfig& cfg) {
    const auto p = layout(cfg).checkpoint();
    detail::require(p, "train");
    return load_checkpoint(p).model;
}

/// Writes the synthetic dataset in folder-per-class layout.
inline std::filesystem::path make_dataset_stage(const RunConfig& cfg) {
    const auto ds = load_dataset(cfg);
    const auto dir = layout(cfg).dataset_dir();
    write_image_folder(dir, ds);
    return dir;
}

struct TrainSummary {
    double val_accuracy = 0.0;
    double val_auroc = 0.0;
    double val_f1 = 0.0;
    int best_epoch = -1;
};

/// Folds, frozen backbone, linear head on the training folds, checkpoint.
inline TrainSummary train_stage(const RunConfig& cfg) {
    const auto L = layout(cfg);
    std::filesystem::create_directories(L.checkpoint().parent_path());
    const auto ds = load_dataset(cfg);
    ds.validate();
    const auto folds = stratified_group_kfold(ds, cfg.train.folds, derive_seed(cfg.seed, std::string_view("folds")));
    write_fold_csv(L.folds().string(), ds, folds);
    const auto train = subset(ds, folds.complement(cfg.train.val_fold));
    const auto val = subset(ds, folds.members(cfg.train.val_fold));

    Backbone bb = make_backbone(cfg, train);
    const int C = static_cast<int>(ds.class_map.size());
    const int D = bb.spec().token_dim;
    Model model(std::move(bb), LinearHead::init(C, D, 0), ds.class_map);
    auto tc = cfg.train.train;
    tc.seed = derive_seed(cfg.seed, std::string_view("head"));
    const auto res = train_linear_head(model, train, val, tc);
    model.set_head(res.head);
    const auto rep = evaluate(model, val);

    Checkpoint ck{model, res.log, {{"config_hash", config_hash(cfg)}, {"dataset_fingerprint", ds.fingerprint()}}};
    save_checkpoint(L.checkpoint(), ck);
    TrainSummary s{rep.accuracy, rep.auroc, rep.f1, res.best_epoch};
    detail::write_manifest(L.train_manifest(), "train", cfg, ds.fingerprint(), model.fingerprint(),
                           {L.folds(), L.checkpoint()},
                           {{"validation",
                             {{"accuracy", s.val_accuracy},
                              {"auroc", detail::num_json(s.val_auroc)},
                              {"macro_f1", s.val_f1},
                              {"best_epoch", s.best_epoch},
                              {"fold", cfg.train.val_fold}}}});
    return s;
}

/// Activation records of the (optionally subsampled) dataset at the atlas layer.
inline std::size_t capture_stage(const RunConfig& cfg) {
    const auto L = layout(cfg);
    const auto model = load_trained_model(cfg);
    const auto ds = load_dataset(cfg);
    const int layer = cfg.atlas.layer.value_or(model.default_layer());
    const auto patches = subsample(ds.patches, cfg.atlas.max_records,
                                   derive_seed(detail::atlas_seed(cfg), std::string_view("subsample")));
    const auto records = capture_activations(model, patches, layer);
    std::filesystem::create_directories(L.records().parent_path());
    detail::write_text(L.records(), detail::records_json(records).dump(1));
    detail::write_manifest(L.capture_manifest(), "capture", cfg, ds.fingerprint(), model.fingerprint(), {L.records()},
                           {{"layer", layer}, {"record_count", records.size()}});
    return records.size();
}

struct CvSummary {
    std::size_t classes = 0;
    std::size_t self_classified = 0;
};

/// One class visualization per class: cv/class_<code>.png plus a sidecar.
/// Self-classification is judged on the saved 8-bit image.
inline CvSummary cv_stage(const RunConfig& cfg) {
    const auto L = layout(cfg);
    const auto model = load_trained_model(cfg);
    const auto train = detail::read_json(L.train_manifest(), "train");
    std::filesystem::create_directories(L.cv_dir());
    const auto hash = config_hash(cfg);
    CvSummary s;
    std::vector<std::filesystem::path> files;
    nlohmann::json entries = nlohmann::json::array();
    for (int c = 0; c < model.num_classes(); ++c) {
        VisConfig vc;
        vc.steps = cfg.cv.steps;
        vc.jitter = cfg.cv.jitter;
        vc.seed = derive_seed(derive_seed(cfg.seed, std::string_view("cv")), static_cast<std::uint64_t>(c));
        const auto res = class_visualization(model, c, vc);
        const auto img = quantized(res.image);
        const int predicted = argmax(model.logits(normalize(img)));
        const auto code = model.classes().code(c);
        const auto png = L.cv_dir() / ("class_" + code + ".png");
        const auto side = L.cv_dir() / ("class_" + code + ".json");
        write_png(png, img);
        auto sj = sidecar_json(vc, res.trace, hash);
        sj["class"] = code;
        sj["predicted"] = model.classes().code(predicted);
        detail::write_text(side, sj.dump(2) + "\n");
        files.push_back(png);
        files.push_back(side);
        entries.push_back({{"class", code}, {"predicted", sj["predicted"]}, {"image", png.filename().string()}});
        ++s.classes;
        s.self_classified += predicted == c;
    }
    detail::write_manifest(L.cv_manifest(), "cv", cfg, train.at("dataset_fingerprint").get<std::string>(),
                           model.fingerprint(), files,
                           {{"steps", cfg.cv.steps}, {"classes", entries}, {"self_classified", s.self_classified}});
    return s;
}

/// Embeds captured records, grids, aggregates, inverts every non-empty cell
/// and exports the atlas directory.
inline Atlas atlas_stage(const RunConfig& cfg) {
    const auto L = layout(cfg);
    const auto model = load_trained_model(cfg);
    const auto cap = detail::read_json(L.capture_manifest(), "capture");
    if (cap.at("model_fingerprint") != model.fingerprint())
        throw std::runtime_error("captured records come from a different model: rerun `cvatlas capture`");
    detail::require(L.records(), "capture");
    Atlas a;
    a.grid = cfg.atlas.grid;
    a.layer = cap.at("layer").get<int>();
    a.classes = model.classes();
    a.records = detail::records_from_json(nlohmann::json::parse(detail::read_text(L.records())));
    if (a.records.empty()) throw std::runtime_error("no captured records");
    ReducerConfig rc;
    rc.kind = cfg.atlas.reducer;
    rc.tsne.perplexity = cfg.atlas.perplexity;
    rc.tsne.iterations = cfg.atlas.tsne_iterations;
    a.embedding = embed_2d(activation_matrix(a.records), rc, detail::atlas_seed(cfg));
    for (const auto& w : a.embedding.warnings) spdlog::warn("{}", w);
    a.assignment = gridify(a.embedding, a.grid);
    a.cells = aggregate(a.records, a.assignment, a.grid, model.num_classes());
    a.dataset_fingerprint = cap.at("dataset_fingerprint").get<std::string>();
    a.model_fingerprint = model.fingerprint();
    a.config_hash = config_hash(cfg);
    VisConfig vc;
    vc.steps = cfg.atlas.steps;
    vc.seed = derive_seed(cfg.seed, std::string_view("inversion"));
    const auto sum = synthesize_atlas(a, model, vc);
    if (sum.failed) spdlog::warn("{} of {} cells failed synthesis", sum.failed, sum.failed + sum.synthesized);
    std::filesystem::remove_all(L.atlas_dir());
    export_atlas(a, L.atlas_dir());
    return a;
}

/// Label maps of every configured method plus majority-GT, and their
/// agreement with the majority-GT labels.
inline nlohmann::json metrics_stage(const RunConfig& cfg) {
    const auto L = layout(cfg);
    detail::require(L.atlas_dir() / "manifest.json", "atlas");
    const auto atlas = import_atlas(L.atlas_dir());
    auto model = std::make_shared<const Model>(load_trained_model(cfg));
    if (atlas.model_fingerprint != model->fingerprint())
        throw std::runtime_error("atlas was built with a different model: rerun `cvatlas atlas`");
    const auto ds = load_dataset(cfg);
    const VitFeatureExtractor extractor(model);
    std::optional<ReferenceSets> refs;
    std::vector<LabelMap> maps;
    for (const auto& m : cfg.metrics.methods) {
        if (m.method != LabelMethod::Attribution && !refs)
            refs = build_reference_sets(ds, extractor, cfg.metrics.reference_per_class,
                                        derive_seed(cfg.seed, std::string_view("references")));
        maps.push_back(assign_labels(atlas, m.method, m.strategy, refs ? &*refs : nullptr, &extractor));
    }
    const auto gt = majority_gt_labels(atlas);
    std::vector<CellIndex> cells;
    for (const auto& c : gt.cells) cells.push_back({c.i, c.j});
    const auto ref = detail::label_column(gt, cells);
    const std::size_t C = atlas.classes.size();
    nlohmann::json per = nlohmann::json::array();
    for (const auto& map : maps) {
        const auto col = detail::label_column(map, cells);
        nlohmann::json e{{"method", map.method}};
        const auto [x, y] = retained_pairs(col, ref, C, UncertainMode::Exclude);
        if (x.size() >= 2) {
            const auto k = cohens_kappa(col, ref, C);
            e["kappa_vs_majority_gt"] = detail::num_json(k.value);
            e["kappa_ci"] = detail::ci_json(bootstrap_ci(col, ref, C, kappa_statistic, cfg.agreement.bootstrap,
                                                         derive_seed(cfg.seed, std::string_view("bootstrap"))));
            const auto d = descriptive_metrics(x, y, C);
            e["accuracy"] = detail::num_json(d.accuracy);
            e["macro_f1"] = detail::num_json(d.macro_f1);
        } else {
            e["kappa_vs_majority_gt"] = nullptr;
        }
        e["labelled_cells"] = x.size();
        per.push_back(std::move(e));
    }
    maps.push_back(gt);
    std::filesystem::create_directories(L.label_maps().parent_path());
    write_label_maps(L.label_maps(), maps, atlas.classes);
    nlohmann::json extra{{"cells", cells.size()}, {"methods", per}};
    detail::write_manifest(L.metrics_manifest(), "metrics", cfg, atlas.dataset_fingerprint, atlas.model_fingerprint,
                           {L.label_maps()}, extra);
    return extra;
}

/// Merges annotation sources; a (item, rater) pair given twice with
/// different labels is an error.
inline AnnotationMatrix merge_annotations(const std::vector<AnnotationMatrix>& parts, const ClassMap& classes) {
    std::set<std::string> items, raters;
    for (const auto& p : parts) {
        items.insert(p.items.begin(), p.items.end());
        raters.insert(p.raters.begin(), p.raters.end());
    }
    AnnotationMatrix m(classes, {items.begin(), items.end()}, {raters.begin(), raters.end()});
    std::map<std::string, std::size_t> ii, ri;
    for (std::size_t k = 0; k < m.items.size(); ++k) ii[m.items[k]] = k;
    for (std::size_t k = 0; k < m.raters.size(); ++k) ri[m.raters[k]] = k;
    for (const auto& p : parts)
        for (std::size_t a = 0; a < p.items.size(); ++a)
            for (std::size_t b = 0; b < p.raters.size(); ++b) {
                const int v = p.labels[a][b];
                if (v == kMissingLabel) continue;
                int& slot = m.labels[ii.at(p.items[a])][ri.at(p.raters[b])];
                if (slot != kMissingLabel && slot != v)
                    throw std::runtime_error("conflicting annotations for " + p.items[a] + " by " + p.raters[b]);
                slot = v;
            }
    return m;
}

/// Agreement among raters from the annotation store and configured CSVs.
inline AgreementReport agreement_stage(const RunConfig& cfg) {
    const auto L = layout(cfg);
    detail::require(L.atlas_dir() / "manifest.json", "atlas");
    const auto manifest = read_manifest(L.atlas_dir());
    const auto classes = class_map_from_json(manifest.at("classes"));
    std::vector<AnnotationMatrix> parts;
    std::vector<std::filesystem::path> inputs;
    if (std::filesystem::exists(L.store())) {
        const AnnotationStore store(L.store(), manifest.at("checksum").get<std::string>().substr(0, 16), classes,
                                    manifest.at("grid").get<int>());
        parts.push_back(store.matrix());
    }
    for (const auto& p : cfg.agreement.annotations) {
        if (!std::filesystem::exists(p)) throw std::runtime_error("annotation file " + p.string() + " does not exist");
        parts.push_back(read_annotation_csv(p.string(), classes));
    }
    if (parts.empty())
        throw MissingArtifact(L.store(), "serve");
    const auto m = merge_annotations(parts, classes);
    if (m.num_raters() < 2) throw std::runtime_error("agreement needs at least 2 raters, found " + std::to_string(m.num_raters()));
    const auto rep = agreement_report(m, cfg.agreement.uncertain_mode, cfg.agreement.bootstrap,
                                      derive_seed(cfg.seed, std::string_view("bootstrap")));
    std::filesystem::create_directories(L.merged_annotations().parent_path());
    detail::write_text(L.merged_annotations(), annotation_csv(m));
    detail::write_manifest(L.agreement_manifest(), "agreement", cfg, manifest.at("dataset_fingerprint").get<std::string>(),
                           manifest.at("model_fingerprint").get<std::string>(), {L.merged_annotations()},
                           {{"items", m.num_items()}, {"raters", m.raters}, {"report", to_json(rep)}});
    return rep;
}

/// Collects every stage manifest present; refuses to combine artifacts whose
/// dataset or model fingerprints differ.
inline nlohmann::json report_stage(const RunConfig& cfg) {
    const auto L = layout(cfg);
    detail::require(L.train_manifest(), "train");
    const std::vector<std::pair<std::string, std::filesystem::path>> sources{
        {"train", L.train_manifest()},   {"capture", L.capture_manifest()},   {"cv", L.cv_manifest()},
        {"atlas", L.atlas_dir() / "manifest.json"}, {"metrics", L.metrics_manifest()}, {"agreement", L.agreement_manifest()}};
    nlohmann::json stages = nlohmann::json::object();
    std::string dataset_fp, model_fp, first;
    for (const auto& [name, path] : sources) {
        if (!std::filesystem::exists(path)) continue;
        const auto m = name == "atlas" ? read_manifest(L.atlas_dir()) : nlohmann::json::parse(detail::read_text(path));
        const auto d = m.at("dataset_fingerprint").get<std::string>();
        const auto f = m.at("model_fingerprint").get<std::string>();
        if (first.empty()) {
            first = name;
            dataset_fp = d;
            model_fp = f;
        } else if (d != dataset_fp || f != model_fp) {
            throw std::runtime_error("refusing to mix artifacts: " + name + " was produced from a different " +
                                     (d != dataset_fp ? "dataset" : "model") + " than " + first);
        }
        nlohmann::json s{{"config_hash", m.at("config_hash")}};
        if (name == "train") s["validation"] = m.at("validation");
        if (name == "cv") {
            s["self_classified"] = m.at("self_classified");
            s["classes"] = m.at("classes").size();
        }
        if (name == "atlas") {
            s["grid"] = m.at("grid");
            s["layer"] = m.at("layer");
            std::size_t non_empty = 0;
            for (const auto& c : m.at("cells")) non_empty += c.at("n").get<std::size_t>() > 0;
            s["non_empty_cells"] = non_empty;
        }
        if (name == "metrics") s["methods"] = m.at("methods");
        if (name == "agreement") s["report"] = m.at("report");
        stages[name] = std::move(s);
    }
    nlohmann::json r{{"dataset_fingerprint", dataset_fp}, {"model_fingerprint", model_fp}, {"stages", stages}};
    std::filesystem::create_directories(L.report_json().parent_path());
    detail::write_text(L.report_json(), r.dump(2) + "\n");

    std::ostringstream md;
    md << "# Run report\n\n";
    md << "- dataset fingerprint: `" << dataset_fp << "`\n- model fingerprint: `" << model_fp << "`\n";
    if (stages.contains("train"))
        md << "- validation accuracy: " << stages["train"]["validation"]["accuracy"].dump() << "\n";
    if (stages.contains("cv"))
        md << "- class visualizations self-classified: " << stages["cv"]["self_classified"].dump() << " of "
           << stages["cv"]["classes"].dump() << "\n";
    if (stages.contains("atlas"))
        md << "- atlas: " << stages["atlas"]["grid"].dump() << "x" << stages["atlas"]["grid"].dump() << " at layer "
           << stages["atlas"]["layer"].dump() << ", " << stages["atlas"]["non_empty_cells"].dump() << " non-empty cells\n";
    if (stages.contains("metrics")) {
        md << "\n| method | kappa vs majority GT |\n|---|---|\n";
        for (const auto& e : stages["metrics"]["methods"])
            md << "| " << e["method"].get<std::string>() << " | " << e["kappa_vs_majority_gt"].dump() << " |\n";
    }
    if (stages.contains("agreement")) {
        const auto& a = stages["agreement"]["report"];
        md << "\n- Fleiss kappa: " << (a["fleiss_kappa"].is_null() ? "n/a" : a["fleiss_kappa"]["value"].dump()) << "\n";
        md << "- Krippendorff alpha: "
           << (a["krippendorff_alpha"].is_null() ? "n/a" : a["krippendorff_alpha"]["value"].dump()) << "\n";
    }
    detail::write_text(L.report_md(), md.str());
    return r;
}

}  // namespace cvatlas
