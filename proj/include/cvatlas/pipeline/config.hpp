#pragma once

#include "cvatlas/agreement/matrix.hpp"
#include "cvatlas/atlas/embed.hpp"
#include "cvatlas/core/hash.hpp"
#include "cvatlas/data/synthetic.hpp"
#include "cvatlas/model/train.hpp"
#include "cvatlas/model/vit.hpp"
#include "cvatlas/surrogate/labels.hpp"

#include <json.hpp>
#include <yaml-cpp/yaml.h>

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cvatlas {

/// Schema violation; `line` is 1-based, 0 when unknown.
class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& file, int line, const std::string& msg)
        : std::runtime_error(file + (line > 0 ? ":" + std::to_string(line) : std::string()) + ": " + msg), line_(line) {}
    [[nodiscard]] int line() const noexcept { return line_; }

private:
    int line_;
};

struct SyntheticSpec {
    std::string preset = "five";  // five | coarse | fine
    SyntheticConfig config;
};

struct DatasetSection {
    std::filesystem::path path;  // image folder root; empty when synthetic
    std::optional<SyntheticSpec> synthetic;
    std::string class_map;  // preset name; empty: sorted class directory names
};

struct ModelSection {
    BackboneSpec backbone{4, 32, 8, 4, 32, 2};
    std::filesystem::path checkpoint;  // optional backbone source
    int pretrain_epochs = 15;          // 0 keeps the random backbone
    std::size_t proxy_per_class = 60;
    std::uint64_t proxy_seed = 99;
};

struct TrainSection {
    int folds = 5;
    int val_fold = 0;
    TrainConfig train;
};

struct CvSection {
    std::size_t steps = 8192;
    bool jitter = false;
};

struct AtlasSection {
    std::optional<int> layer;
    int grid = 10;
    Reducer reducer = Reducer::TSNE;
    double perplexity = 30.0;
    int tsne_iterations = 1000;
    std::size_t steps = 8192;  // inversion steps per cell
    std::size_t max_records = 0;
};

struct MetricSpec {
    LabelMethod method = LabelMethod::Attribution;
    Strategy strategy = Strategy::NN;
};

struct MetricsSection {
    std::vector<MetricSpec> methods{{LabelMethod::Attribution, Strategy::NN},
                                    {LabelMethod::Attribution, Strategy::Dist},
                                    {LabelMethod::LPIPS, Strategy::NN},
                                    {LabelMethod::LPIPS, Strategy::Dist},
                                    {LabelMethod::Cosine, Strategy::NN},
                                    {LabelMethod::Cosine, Strategy::Dist},
                                    {LabelMethod::Mahalanobis, Strategy::NN}};
    std::size_t reference_per_class = 64;
};

struct AgreementSection {
    std::vector<std::filesystem::path> annotations;  // extra annotation CSVs
    UncertainMode uncertain_mode = UncertainMode::Exclude;
    std::size_t bootstrap = 300;
};

struct ServeSection {
    std::string host = "127.0.0.1";
    int port = 8080;
    bool blind = true;
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::filesystem::path output_dir;
    DatasetSection dataset;
    ModelSection model;
    TrainSection train;
    CvSection cv;
    AtlasSection atlas;
    MetricsSection metrics;
    AgreementSection agreement;
    ServeSection serve;
};

/// Parses "LPIPS_NN", "Cosine_Dist", "Mahalanobis", ...
inline MetricSpec metric_from_string(const std::string& s) {
    const auto us = s.find('_');
    const auto method = label_method_from_string(s.substr(0, us));
    if (us == std::string::npos) {
        if (method != LabelMethod::Mahalanobis) throw std::invalid_argument("method '" + s + "' needs a _NN or _Dist suffix");
        return {method, Strategy::NN};
    }
    return {method, strategy_from_string(s.substr(us + 1))};
}

inline std::string to_string(const MetricSpec& m) { return method_id(m.method, m.strategy); }

namespace detail {

/// Walks one YAML mapping, rejecting unknown keys with their line number.
class Section {
public:
    Section(const YAML::Node& node, std::string file, std::string where)
        : node_(node), file_(std::move(file)), where_(std::move(where)) {
        if (node_ && !node_.IsNull() && !node_.IsMap()) fail(node_, where_ + " must be a mapping");
    }

    [[noreturn]] void fail(const YAML::Node& n, const std::string& msg) const {
        throw ConfigError(file_, n.Mark().line >= 0 ? n.Mark().line + 1 : 0, msg);
    }

    [[nodiscard]] YAML::Node get(const std::string& key) {
        known_.insert(key);
        if (!node_ || node_.IsNull()) return YAML::Node();
        return node_[key];
    }

    template <typename T>
    void read(const std::string& key, T& out) {
        const auto n = get(key);
        if (!n || n.IsNull()) return;
        try {
            out = n.as<T>();
        } catch (const YAML::Exception&) {
            fail(n, where_ + "." + key + ": expected " + type_name<T>());
        }
    }

    void read_path(const std::string& key, std::filesystem::path& out, const std::filesystem::path& base) {
        std::string s;
        read(key, s);
        if (!s.empty()) out = std::filesystem::path(s).is_absolute() ? std::filesystem::path(s) : base / s;
    }

    void finish() const {
        if (!node_ || node_.IsNull()) return;
        for (const auto& kv : node_) {
            const auto key = kv.first.as<std::string>();
            if (!known_.count(key)) fail(kv.first, "unknown key '" + key + "' in " + where_);
        }
    }

    [[nodiscard]] const std::string& file() const noexcept { return file_; }

private:
    template <typename T>
    static std::string type_name() {
        if constexpr (std::is_same_v<T, bool>) return "a boolean";
        else if constexpr (std::is_integral_v<T>) return "an integer";
        else if constexpr (std::is_floating_point_v<T>) return "a number";
        else if constexpr (std::is_same_v<T, std::string>) return "a string";
        else return "a list";
    }

    YAML::Node node_;
    std::string file_;
    std::string where_;
    std::set<std::string> known_;
};

}  // namespace detail

/// Parses YAML text; relative paths resolve against `base_dir`. Input paths
/// (dataset folder, checkpoint) must exist.
inline RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir,
                                  const std::string& file = "config") {
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::ParserException& e) {
        throw ConfigError(file, e.mark.line + 1, e.msg);
    }
    if (!root || !root.IsMap()) throw ConfigError(file, 1, "config must be a mapping");
    RunConfig cfg;
    detail::Section top(root, file, "config");
    auto check = [&](detail::Section& s, const YAML::Node& n, bool ok, const std::string& msg) {
        if (!ok) s.fail(n, msg);
    };

    const auto seed = top.get("seed");
    if (!seed) throw ConfigError(file, 1, "missing required key 'seed' (seeds must be explicit)");
    top.read("seed", cfg.seed);
    std::string out;
    top.read("output_dir", out);
    if (out.empty()) throw ConfigError(file, 1, "missing required key 'output_dir'");
    cfg.output_dir = std::filesystem::path(out).is_absolute() ? std::filesystem::path(out) : base_dir / out;

    {
        const auto node = top.get("dataset");
        if (!node) throw ConfigError(file, 1, "missing required section 'dataset'");
        detail::Section s(node, file, "dataset");
        s.read_path("path", cfg.dataset.path, base_dir);
        s.read("class_map", cfg.dataset.class_map);
        const auto syn = s.get("synthetic");
        if (syn && !syn.IsNull()) {
            detail::Section t(syn, file, "dataset.synthetic");
            SyntheticSpec spec;
            t.read("preset", spec.preset);
            t.read("per_class", spec.config.per_class);
            t.read("image_size", spec.config.image_size);
            t.read("groups_per_class", spec.config.groups_per_class);
            t.read("seed", spec.config.seed);
            t.read("palette_swap", spec.config.palette_swap);
            check(t, syn, spec.preset == "five" || spec.preset == "coarse" || spec.preset == "fine",
                  "dataset.synthetic.preset must be five, coarse or fine");
            check(t, syn, spec.config.palette_swap >= 0.0 && spec.config.palette_swap <= 1.0,
                  "dataset.synthetic.palette_swap must lie in [0, 1]");
            t.finish();
            cfg.dataset.synthetic = spec;
        }
        check(s, node, cfg.dataset.path.empty() != !cfg.dataset.synthetic,
              "dataset needs exactly one of 'path' or 'synthetic'");
        if (!cfg.dataset.path.empty() && !std::filesystem::is_directory(cfg.dataset.path))
            s.fail(node["path"], "dataset.path does not exist: " + cfg.dataset.path.string());
        if (!cfg.dataset.class_map.empty() && !class_maps::preset(cfg.dataset.class_map))
            s.fail(node["class_map"], "unknown class map preset '" + cfg.dataset.class_map + "'");
        s.finish();
    }
    {
        const auto node = top.get("model");
        detail::Section s(node, file, "model");
        auto& b = cfg.model.backbone;
        const auto bb = s.get("backbone");
        detail::Section t(bb, file, "model.backbone");
        t.read("layers", b.num_layers);
        t.read("dim", b.token_dim);
        t.read("patch", b.patch_size);
        t.read("heads", b.num_heads);
        t.read("input", b.input_size);
        t.read("mlp_ratio", b.mlp_ratio);
        t.finish();
        try {
            b.validate();
        } catch (const std::invalid_argument& e) {
            t.fail(bb ? bb : node, std::string("model.backbone: ") + e.what());
        }
        s.read_path("checkpoint", cfg.model.checkpoint, base_dir);
        if (!cfg.model.checkpoint.empty() && !std::filesystem::exists(cfg.model.checkpoint))
            s.fail(node["checkpoint"], "model.checkpoint does not exist: " + cfg.model.checkpoint.string());
        s.read("pretrain_epochs", cfg.model.pretrain_epochs);
        s.read("proxy_per_class", cfg.model.proxy_per_class);
        s.read("proxy_seed", cfg.model.proxy_seed);
        check(s, node, cfg.model.pretrain_epochs >= 0, "model.pretrain_epochs must be >= 0");
        s.finish();
    }
    {
        const auto node = top.get("train");
        detail::Section s(node, file, "train");
        auto& t = cfg.train;
        s.read("folds", t.folds);
        s.read("val_fold", t.val_fold);
        s.read("epochs", t.train.max_epochs);
        s.read("patience", t.train.patience);
        s.read("learning_rate", t.train.optimizer.learning_rate);
        s.read("weight_decay", t.train.optimizer.weight_decay);
        s.read("batch_size", t.train.batch_size);
        check(s, node, t.folds >= 2, "train.folds must be >= 2");
        check(s, node, t.val_fold >= 0 && t.val_fold < t.folds, "train.val_fold must lie in [0, folds)");
        check(s, node, t.train.max_epochs >= 1 && t.train.batch_size >= 1, "train.epochs and batch_size must be >= 1");
        s.finish();
    }
    {
        detail::Section s(top.get("cv"), file, "cv");
        s.read("steps", cfg.cv.steps);
        s.read("jitter", cfg.cv.jitter);
        s.finish();
    }
    {
        const auto node = top.get("atlas");
        detail::Section s(node, file, "atlas");
        const auto layer = s.get("layer");
        if (layer && !layer.IsNull()) {
            int l = 0;
            s.read("layer", l);
            check(s, layer, l >= 0 && l < cfg.model.backbone.num_layers, "atlas.layer outside the backbone's layers");
            cfg.atlas.layer = l;
        }
        s.read("grid", cfg.atlas.grid);
        std::string reducer = to_string(cfg.atlas.reducer);
        s.read("reducer", reducer);
        try {
            cfg.atlas.reducer = reducer_from_string(reducer);
        } catch (const std::invalid_argument& e) {
            s.fail(node["reducer"], e.what());
        }
        s.read("perplexity", cfg.atlas.perplexity);
        s.read("tsne_iterations", cfg.atlas.tsne_iterations);
        s.read("steps", cfg.atlas.steps);
        s.read("max_records", cfg.atlas.max_records);
        check(s, node, cfg.atlas.grid >= 1, "atlas.grid must be >= 1");
        s.finish();
    }
    {
        const auto node = top.get("metrics");
        detail::Section s(node, file, "metrics");
        const auto methods = s.get("methods");
        if (methods && !methods.IsNull()) {
            if (!methods.IsSequence()) s.fail(methods, "metrics.methods must be a list");
            cfg.metrics.methods.clear();
            for (const auto& m : methods) {
                try {
                    cfg.metrics.methods.push_back(metric_from_string(m.as<std::string>()));
                } catch (const std::exception& e) {
                    s.fail(m, std::string("metrics.methods: ") + e.what());
                }
            }
        }
        s.read("reference_per_class", cfg.metrics.reference_per_class);
        s.finish();
    }
    {
        const auto node = top.get("agreement");
        detail::Section s(node, file, "agreement");
        const auto ann = s.get("annotations");
        if (ann && !ann.IsNull()) {
            if (!ann.IsSequence()) s.fail(ann, "agreement.annotations must be a list of paths");
            for (const auto& a : ann) {
                const std::filesystem::path p(a.as<std::string>());
                cfg.agreement.annotations.push_back(p.is_absolute() ? p : base_dir / p);
            }
        }
        std::string mode = to_string(cfg.agreement.uncertain_mode);
        s.read("uncertain_mode", mode);
        try {
            cfg.agreement.uncertain_mode = uncertain_mode_from_string(mode);
        } catch (const std::invalid_argument& e) {
            s.fail(node["uncertain_mode"], e.what());
        }
        s.read("bootstrap", cfg.agreement.bootstrap);
        s.finish();
    }
    {
        detail::Section s(top.get("serve"), file, "serve");
        s.read("host", cfg.serve.host);
        s.read("port", cfg.serve.port);
        s.read("blind", cfg.serve.blind);
        s.finish();
    }
    top.finish();
    return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string(), 0, "cannot read config");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str(), path.parent_path().empty() ? "." : path.parent_path(), path.string());
}

/// Canonical JSON of every setting that influences artifacts (serving and
/// the output location excluded).
inline nlohmann::json canonical_json(const RunConfig& c) {
    nlohmann::json ds = {{"path", c.dataset.path.string()}, {"class_map", c.dataset.class_map}};
    if (c.dataset.synthetic) {
        const auto& s = *c.dataset.synthetic;
        ds["synthetic"] = {{"preset", s.preset},
                           {"per_class", s.config.per_class},
                           {"image_size", s.config.image_size},
                           {"groups_per_class", s.config.groups_per_class},
                           {"seed", s.config.seed},
                           {"palette_swap", s.config.palette_swap}};
    }
    const auto& b = c.model.backbone;
    nlohmann::json methods = nlohmann::json::array();
    for (const auto& m : c.metrics.methods) methods.push_back(to_string(m));
    nlohmann::json ann = nlohmann::json::array();
    for (const auto& a : c.agreement.annotations) ann.push_back(a.string());
    return {{"seed", c.seed},
            {"dataset", ds},
            {"model",
             {{"backbone",
               {{"layers", b.num_layers},
                {"dim", b.token_dim},
                {"patch", b.patch_size},
                {"heads", b.num_heads},
                {"input", b.input_size},
                {"mlp_ratio", b.mlp_ratio}}},
              {"checkpoint", c.model.checkpoint.string()},
              {"pretrain_epochs", c.model.pretrain_epochs},
              {"proxy_per_class", c.model.proxy_per_class},
              {"proxy_seed", c.model.proxy_seed}}},
            {"train",
             {{"folds", c.train.folds},
              {"val_fold", c.train.val_fold},
              {"epochs", c.train.train.max_epochs},
              {"patience", c.train.train.patience},
              {"learning_rate", c.train.train.optimizer.learning_rate},
              {"weight_decay", c.train.train.optimizer.weight_decay},
              {"batch_size", c.train.train.batch_size}}},
            {"cv", {{"steps", c.cv.steps}, {"jitter", c.cv.jitter}}},
            {"atlas",
             {{"layer", c.atlas.layer ? nlohmann::json(*c.atlas.layer) : nlohmann::json(nullptr)},
              {"grid", c.atlas.grid},
              {"reducer", to_string(c.atlas.reducer)},
              {"perplexity", c.atlas.perplexity},
              {"tsne_iterations", c.atlas.tsne_iterations},
              {"steps", c.atlas.steps},
              {"max_records", c.atlas.max_records}}},
            {"metrics", {{"methods", methods}, {"reference_per_class", c.metrics.reference_per_class}}},
            {"agreement",
             {{"annotations", ann},
              {"uncertain_mode", to_string(c.agreement.uncertain_mode)},
              {"bootstrap", c.agreement.bootstrap}}}};
}

inline std::string config_hash(const RunConfig& c) { return sha256_hex(canonical_json(c).dump()); }

}  // namespace cvatlas
