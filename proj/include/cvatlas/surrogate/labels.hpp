#pragma once

#include "cvatlas/atlas/atlas.hpp"
#include "cvatlas/surrogate/metrics.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cvatlas {

enum class LabelMethod { Attribution, LPIPS, Cosine, Mahalanobis };
enum class Strategy { NN, Dist };

inline std::string to_string(LabelMethod m) {
    switch (m) {
        case LabelMethod::Attribution: return "Attribution";
        case LabelMethod::LPIPS: return "LPIPS";
        case LabelMethod::Cosine: return "Cosine";
        case LabelMethod::Mahalanobis: return "Mahalanobis";
    }
    return "?";
}

inline LabelMethod label_method_from_string(const std::string& s) {
    for (auto m : {LabelMethod::Attribution, LabelMethod::LPIPS, LabelMethod::Cosine, LabelMethod::Mahalanobis})
        if (to_string(m) == s) return m;
    throw std::invalid_argument("unknown labelling method '" + s + "'");
}

inline std::string to_string(Strategy s) { return s == Strategy::NN ? "NN" : "Dist"; }

inline Strategy strategy_from_string(const std::string& s) {
    if (s == "NN") return Strategy::NN;
    if (s == "Dist") return Strategy::Dist;
    throw std::invalid_argument("unknown strategy '" + s + "' (expected NN or Dist)");
}

/// e.g. "Attribution_NN", "LPIPS_Dist@vit", "Mahalanobis@vit".
inline std::string method_id(LabelMethod m, Strategy s, const std::string& extractor = {}) {
    std::string id = to_string(m);
    if (m != LabelMethod::Mahalanobis) id += "_" + to_string(s);
    if (m != LabelMethod::Attribution && !extractor.empty()) id += "@" + extractor;
    return id;
}

/// Sampled real images of one class, their features and the covariance fit
/// of their final representations.
struct ClassReference {
    std::vector<std::string> patch_ids;
    std::vector<FeatureSet> features;
    CovarianceFit fit;
};

struct ReferenceSets {
    std::string extractor;
    std::uint64_t seed = 0;
    std::vector<ClassReference> classes;
};

/// Up to `per_class` patches per class, chosen by a per-class seeded shuffle.
inline ReferenceSets build_reference_sets(const Dataset& ds, const FeatureExtractor& extractor,
                                          std::size_t per_class = 64, std::uint64_t seed = 0) {
    ReferenceSets refs{extractor.name(), seed, std::vector<ClassReference>(ds.class_map.size())};
    std::vector<std::vector<std::size_t>> by_class(ds.class_map.size());
    for (std::size_t i = 0; i < ds.patches.size(); ++i)
        by_class.at(static_cast<std::size_t>(ds.patches[i].class_id)).push_back(i);
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto idx = by_class[c];
        Rng rng(derive_seed(seed, c));
        std::shuffle(idx.begin(), idx.end(), rng);
        if (idx.size() < per_class)
            spdlog::warn("reference set for {}: only {} of {} requested images", ds.class_map.code(static_cast<int>(c)),
                         idx.size(), per_class);
        idx.resize(std::min(idx.size(), per_class));
        auto& ref = refs.classes[c];
        Matrix finals(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(extractor.final_dim()));
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const auto& p = ds.patches[idx[k]];
            ref.patch_ids.push_back(p.id);
            ref.features.push_back(extractor.extract(p.image));
            finals.row(static_cast<Eigen::Index>(k)) = ref.features.back().final.transpose();
        }
        if (idx.size() >= 2) ref.fit = ledoit_wolf_fit(finals);
    }
    return refs;
}

struct CellLabel {
    int i = 0;
    int j = 0;
    std::string method;
    std::optional<int> label;  // empty: no decision possible
    double score = std::numeric_limits<double>::quiet_NaN();
    bool tie = false;
    friend bool operator==(const CellLabel& a, const CellLabel& b) {
        return a.i == b.i && a.j == b.j && a.method == b.method && a.label == b.label && a.tie == b.tie &&
               ((std::isnan(a.score) && std::isnan(b.score)) || a.score == b.score);
    }
};

/// One entry per non-empty atlas cell, row-major.
struct LabelMap {
    std::string method;
    int grid = 0;
    std::vector<CellLabel> cells;

    [[nodiscard]] const CellLabel* find(int i, int j) const {
        for (const auto& c : cells)
            if (c.i == i && c.j == j) return &c;
        return nullptr;
    }
};

namespace detail {

/// Arg min (or max) over classes; ties resolve to the lowest class and set `tie`.
inline std::pair<int, bool> pick(const std::vector<double>& v, bool maximize) {
    int best = -1;
    bool tie = false;
    for (std::size_t c = 0; c < v.size(); ++c) {
        if (std::isnan(v[c])) continue;
        if (best < 0 || (maximize ? v[c] > v[static_cast<std::size_t>(best)] : v[c] < v[static_cast<std::size_t>(best)])) {
            best = static_cast<int>(c);
            tie = false;
        } else if (v[c] == v[static_cast<std::size_t>(best)]) {
            tie = true;
        }
    }
    return {best, tie};
}

}  // namespace detail

/// Labels for cells described by their generated-image features (empty
/// optional: no generated image). Used by assign_labels for the metric methods.
inline std::vector<CellLabel> label_by_features(const std::vector<std::optional<FeatureSet>>& cell_features,
                                                const std::vector<CellIndex>& coords, LabelMethod method,
                                                Strategy strategy, const ReferenceSets& refs,
                                                const LpipsWeights& weights = {}) {
    if (method == LabelMethod::Attribution) throw std::invalid_argument("label_by_features: attribution uses the atlas");
    if (cell_features.size() != coords.size()) throw std::invalid_argument("label_by_features: size mismatch");
    const std::string id = method_id(method, strategy, refs.extractor);
    std::vector<CellLabel> out;
    for (std::size_t k = 0; k < coords.size(); ++k) {
        CellLabel cl{coords[k].i, coords[k].j, id, std::nullopt, std::numeric_limits<double>::quiet_NaN(), false};
        if (!cell_features[k]) {
            spdlog::warn("{}: cell ({}, {}) has no generated image; left unlabelled", id, cl.i, cl.j);
            out.push_back(cl);
            continue;
        }
        const FeatureSet& q = *cell_features[k];
        std::vector<double> per_class(refs.classes.size(), std::numeric_limits<double>::quiet_NaN());
        for (std::size_t c = 0; c < refs.classes.size(); ++c) {
            const auto& ref = refs.classes[c];
            if (method == LabelMethod::Mahalanobis) {
                if (ref.fit.samples < 2)
                    throw std::invalid_argument("Mahalanobis labelling: class " + std::to_string(c) + " has no fitted reference");
                per_class[c] = mahalanobis_sq(q.final, ref.fit.mean, ref.fit.precision);
                continue;
            }
            if (ref.features.empty()) continue;
            double agg = strategy == Strategy::NN ? std::numeric_limits<double>::infinity() : 0.0;
            for (const auto& r : ref.features) {
                const double d = method == LabelMethod::LPIPS ? lpips(q, r, weights) : cosine_distance(q.final, r.final);
                agg = strategy == Strategy::NN ? std::min(agg, d) : agg + d;
            }
            if (strategy == Strategy::Dist) agg /= static_cast<double>(ref.features.size());
            per_class[c] = agg;
        }
        const auto [best, tie] = detail::pick(per_class, false);
        if (best >= 0) {
            cl.label = best;
            cl.score = per_class[static_cast<std::size_t>(best)];
            cl.tie = tie;
        }
        out.push_back(cl);
    }
    return out;
}

/// Attribution labels: Dist = arg max of mean attribution; NN = majority of
/// the members' individual arg-max classes.
inline LabelMap attribution_labels(const Atlas& atlas, Strategy strategy) {
    LabelMap map{method_id(LabelMethod::Attribution, strategy), atlas.grid, {}};
    for (const auto& cell : atlas.cells) {
        if (cell.empty()) continue;
        CellLabel cl{cell.i, cell.j, map.method, std::nullopt, 0.0, false};
        if (strategy == Strategy::Dist) {
            std::vector<double> s(static_cast<std::size_t>(cell.mean_attribution.size()));
            for (std::size_t c = 0; c < s.size(); ++c) s[c] = cell_attribution_score(cell, static_cast<int>(c));
            const auto [best, tie] = detail::pick(s, true);
            cl.label = best;
            cl.score = s[static_cast<std::size_t>(best)];
            cl.tie = tie;
        } else {
            std::vector<std::size_t> votes(static_cast<std::size_t>(cell.mean_attribution.size()), 0);
            for (auto m : cell.members) ++votes[static_cast<std::size_t>(argmax(atlas.records.at(m).attribution))];
            cl.label = majority(votes, &cl.tie);
            cl.score = static_cast<double>(votes[static_cast<std::size_t>(*cl.label)]) / static_cast<double>(cell.n());
        }
        map.cells.push_back(cl);
    }
    return map;
}

/// Labels every non-empty cell of the atlas with one method and strategy
/// (Mahalanobis ignores the strategy).
inline LabelMap assign_labels(const Atlas& atlas, LabelMethod method, Strategy strategy,
                              const ReferenceSets* refs = nullptr, const FeatureExtractor* extractor = nullptr,
                              const LpipsWeights& weights = {}) {
    if (method == LabelMethod::Attribution) return attribution_labels(atlas, strategy);
    if (!refs || !extractor) throw std::invalid_argument("assign_labels: " + to_string(method) + " needs references and an extractor");
    if (refs->extractor != extractor->name())
        throw std::invalid_argument("assign_labels: references were built with extractor " + refs->extractor);
    if (refs->classes.size() != atlas.classes.size())
        throw std::invalid_argument("assign_labels: reference classes do not match the atlas");
    std::vector<std::optional<FeatureSet>> feats;
    std::vector<CellIndex> coords;
    for (const auto& cell : atlas.cells) {
        if (cell.empty()) continue;
        coords.push_back({cell.i, cell.j});
        feats.push_back(cell.generated_image ? std::optional(extractor->extract(*cell.generated_image)) : std::nullopt);
    }
    return {method_id(method, strategy, refs->extractor), atlas.grid,
            label_by_features(feats, coords, method, strategy, *refs, weights)};
}

/// Majority ground-truth labels of the non-empty cells, as a label map.
inline LabelMap majority_gt_labels(const Atlas& atlas) {
    LabelMap map{"MajorityGT", atlas.grid, {}};
    for (const auto& c : atlas.cells)
        if (!c.empty())
            map.cells.push_back({c.i, c.j, map.method, c.majority_gt,
                                 static_cast<double>(c.class_histogram[static_cast<std::size_t>(*c.majority_gt)]) /
                                     static_cast<double>(c.n()),
                                 c.majority_tie});
    return map;
}

inline constexpr const char* kLabelMapHeader = "cell_i,cell_j,method,label,score,tie_flag";

inline std::string label_maps_to_csv(const std::vector<LabelMap>& maps, const ClassMap& classes) {
    std::ostringstream os;
    os.precision(17);
    os << kLabelMapHeader << "\n";
    for (const auto& m : maps)
        for (const auto& c : m.cells) {
            os << c.i << "," << c.j << "," << c.method << "," << (c.label ? classes.code(*c.label) : std::string()) << ",";
            if (!std::isnan(c.score)) os << c.score;
            os << "," << (c.tie ? 1 : 0) << "\n";
        }
    return os.str();
}

inline void write_label_maps(const std::filesystem::path& path, const std::vector<LabelMap>& maps,
                             const ClassMap& classes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << label_maps_to_csv(maps, classes);
}

/// Parses a label-map CSV; one LabelMap per method in first-seen order.
inline std::vector<LabelMap> read_label_maps(std::istream& in, const ClassMap& classes, int grid = 0) {
    std::string line;
    if (!std::getline(in, line) || line != kLabelMapHeader)
        throw std::runtime_error("label map: expected header '" + std::string(kLabelMapHeader) + "'");
    std::vector<LabelMap> maps;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) f.push_back(tok);
        if (line.back() == ',') f.emplace_back();
        if (f.size() != 6) throw std::runtime_error("label map line " + std::to_string(lineno) + ": expected 6 fields");
        CellLabel cl;
        try {
            cl.i = std::stoi(f[0]);
            cl.j = std::stoi(f[1]);
            cl.score = f[4].empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(f[4]);
        } catch (const std::exception&) {
            throw std::runtime_error("label map line " + std::to_string(lineno) + ": malformed number");
        }
        cl.method = f[2];
        if (!f[3].empty()) {
            const auto id = classes.find(f[3]);
            if (!id) throw std::runtime_error("label map line " + std::to_string(lineno) + ": unknown class " + f[3]);
            cl.label = *id;
        }
        cl.tie = f[5] == "1";
        auto it = std::find_if(maps.begin(), maps.end(), [&](const LabelMap& m) { return m.method == cl.method; });
        if (it == maps.end()) {
            maps.push_back({cl.method, grid, {}});
            it = maps.end() - 1;
        }
        it->cells.push_back(cl);
    }
    return maps;
}

}  // namespace cvatlas
