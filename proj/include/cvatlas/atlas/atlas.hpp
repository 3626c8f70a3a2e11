#pragma once

#include "cvatlas/atlas/embed.hpp"
#include "cvatlas/atlas/records.hpp"
#include "cvatlas/core/image_io.hpp"
#include "cvatlas/featvis/optimize.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace cvatlas {

struct CellIndex {
    int i = 0;  // row, from the y coordinate
    int j = 0;  // column, from the x coordinate
    friend bool operator==(const CellIndex&, const CellIndex&) = default;
};

namespace detail {

inline int bin(double v, double lo, double hi, int g) {
    if (!(hi > lo)) return 0;
    const int b = static_cast<int>(std::floor((v - lo) / (hi - lo) * g));
    return std::clamp(b, 0, g - 1);
}

}  // namespace detail

/// Equal-width g x g binning of the coordinate bounding box; points on the
/// upper edge fall in the last bin.
inline std::vector<CellIndex> gridify(const Embedding2D& emb, int g) {
    if (g < 1) throw std::invalid_argument("gridify: grid size must be >= 1");
    std::vector<CellIndex> out(emb.size());
    if (emb.size() == 0) return out;
    if (!emb.coords.allFinite()) throw std::invalid_argument("gridify: non-finite coordinates");
    const double x0 = emb.coords.col(0).minCoeff(), x1 = emb.coords.col(0).maxCoeff();
    const double y0 = emb.coords.col(1).minCoeff(), y1 = emb.coords.col(1).maxCoeff();
    for (std::size_t r = 0; r < out.size(); ++r) {
        const auto k = static_cast<Eigen::Index>(r);
        out[r] = {detail::bin(emb.coords(k, 1), y0, y1, g), detail::bin(emb.coords(k, 0), x0, x1, g)};
    }
    return out;
}

struct AtlasCell {
    int i = 0;
    int j = 0;
    std::vector<std::size_t> members;  // indices into Atlas::records
    Vector mean_activation;
    std::vector<std::size_t> class_histogram;
    Vector mean_attribution;
    std::optional<int> majority_gt;
    bool majority_tie = false;
    std::optional<ImageTensor> generated_image;  // 8-bit quantised display image
    double initial_loss = std::numeric_limits<double>::quiet_NaN();
    double inversion_loss = std::numeric_limits<double>::quiet_NaN();
    std::uint64_t seed = 0;
    std::string error;  // synthesis failure, empty on success

    [[nodiscard]] std::size_t n() const noexcept { return members.size(); }
    [[nodiscard]] bool empty() const noexcept { return members.empty(); }

    friend bool operator==(const AtlasCell& a, const AtlasCell& b) {
        auto same_loss = [](double x, double y) { return (std::isnan(x) && std::isnan(y)) || x == y; };
        return a.i == b.i && a.j == b.j && a.members == b.members && a.mean_activation == b.mean_activation &&
               a.class_histogram == b.class_histogram && a.mean_attribution == b.mean_attribution &&
               a.majority_gt == b.majority_gt && a.majority_tie == b.majority_tie &&
               a.generated_image == b.generated_image && same_loss(a.initial_loss, b.initial_loss) &&
               same_loss(a.inversion_loss, b.inversion_loss) && a.seed == b.seed && a.error == b.error;
    }
};

/// Arg max of a histogram; ties go to the lowest index and set `tie`.
inline std::optional<int> majority(const std::vector<std::size_t>& hist, bool* tie = nullptr) {
    std::optional<int> best;
    std::size_t top = 0, count = 0;
    for (std::size_t c = 0; c < hist.size(); ++c) {
        if (hist[c] > top) top = hist[c], best = static_cast<int>(c), count = 1;
        else if (hist[c] == top && top > 0) ++count;
    }
    if (tie) *tie = count > 1;
    return best;
}

/// Cells in row-major order (index i * g + j).
inline std::vector<AtlasCell> aggregate(const std::vector<ActivationRecord>& records,
                                        const std::vector<CellIndex>& assignment, int g, int num_classes) {
    if (assignment.size() != records.size())
        throw std::invalid_argument("aggregate: assignment does not cover all records");
    if (g < 1) throw std::invalid_argument("aggregate: grid size must be >= 1");
    const Eigen::Index d = records.empty() ? 0 : records.front().f.size();
    std::vector<AtlasCell> cells(static_cast<std::size_t>(g * g));
    for (int i = 0; i < g; ++i)
        for (int j = 0; j < g; ++j) {
            auto& c = cells[static_cast<std::size_t>(i * g + j)];
            c.i = i;
            c.j = j;
            c.mean_activation = Vector::Zero(d);
            c.mean_attribution = Vector::Zero(num_classes);
            c.class_histogram.assign(static_cast<std::size_t>(num_classes), 0);
        }
    for (std::size_t r = 0; r < records.size(); ++r) {
        const auto [i, j] = assignment[r];
        if (i < 0 || i >= g || j < 0 || j >= g) throw std::out_of_range("aggregate: cell index outside grid");
        const auto& rec = records[r];
        if (rec.f.size() != d || rec.attribution.size() != num_classes)
            throw std::invalid_argument("aggregate: inconsistent record dimensions for " + rec.patch_id);
        if (rec.gt_class < 0 || rec.gt_class >= num_classes)
            throw std::invalid_argument("aggregate: ground-truth class out of range for " + rec.patch_id);
        auto& c = cells[static_cast<std::size_t>(i * g + j)];
        c.members.push_back(r);
        c.mean_activation += rec.f;
        c.mean_attribution += rec.attribution;
        ++c.class_histogram[static_cast<std::size_t>(rec.gt_class)];
    }
    for (auto& c : cells) {
        if (c.empty()) continue;
        c.mean_activation /= static_cast<double>(c.n());
        c.mean_attribution /= static_cast<double>(c.n());
        c.majority_gt = majority(c.class_histogram, &c.majority_tie);
    }
    return cells;
}

/// Mean over members of the stored attribution scalars for class c.
inline double cell_attribution_score(const AtlasCell& cell, int c) {
    if (cell.empty())
        throw std::invalid_argument("cell_attribution_score: cell (" + std::to_string(cell.i) + "," +
                                    std::to_string(cell.j) + ") is empty");
    if (c < 0 || c >= cell.mean_attribution.size()) throw std::out_of_range("cell_attribution_score: class out of range");
    return cell.mean_attribution(c);
}

struct Atlas {
    int grid = 0;
    int layer = 0;
    ClassMap classes;
    std::vector<AtlasCell> cells;
    std::vector<ActivationRecord> records;
    Embedding2D embedding;
    std::vector<CellIndex> assignment;
    std::string dataset_fingerprint;
    std::string model_fingerprint;
    std::string config_hash;

    [[nodiscard]] AtlasCell& cell(int i, int j) { return cells.at(static_cast<std::size_t>(check(i, j))); }
    [[nodiscard]] const AtlasCell& cell(int i, int j) const { return cells.at(static_cast<std::size_t>(check(i, j))); }
    [[nodiscard]] bool contains(int i, int j) const noexcept { return i >= 0 && j >= 0 && i < grid && j < grid; }
    [[nodiscard]] std::size_t non_empty() const {
        return static_cast<std::size_t>(std::count_if(cells.begin(), cells.end(), [](const auto& c) { return !c.empty(); }));
    }

    friend bool operator==(const Atlas& a, const Atlas& b) {
        return a.grid == b.grid && a.layer == b.layer && a.classes == b.classes && a.cells == b.cells &&
               a.records == b.records && a.embedding.coords == b.embedding.coords &&
               a.embedding.reducer == b.embedding.reducer && a.embedding.perplexity == b.embedding.perplexity &&
               a.embedding.seed == b.embedding.seed && a.assignment == b.assignment &&
               a.dataset_fingerprint == b.dataset_fingerprint && a.model_fingerprint == b.model_fingerprint &&
               a.config_hash == b.config_hash;
    }

private:
    [[nodiscard]] int check(int i, int j) const {
        if (!contains(i, j))
            throw std::out_of_range("cell (" + std::to_string(i) + "," + std::to_string(j) + ") outside " +
                                    std::to_string(grid) + "x" + std::to_string(grid) + " grid");
        return i * grid + j;
    }
};

struct AtlasConfig {
    std::optional<int> layer;  // default: model.default_layer()
    int grid = 10;
    ReducerConfig reducer;
    std::uint64_t seed = 0;
    std::size_t max_records = 0;  // 0 keeps every patch
};

/// Capture, embed, grid and aggregate (no image synthesis).
inline Atlas build_atlas(const Model& model, const Dataset& ds, const AtlasConfig& cfg) {
    Atlas a;
    a.grid = cfg.grid;
    a.layer = cfg.layer.value_or(model.default_layer());
    a.classes = model.classes();
    if (ds.class_map.codes() != model.classes().codes())
        throw std::invalid_argument("build_atlas: dataset classes do not match the model's class map");
    const auto patches = subsample(ds.patches, cfg.max_records, derive_seed(cfg.seed, std::string_view("subsample")));
    a.records = capture_activations(model, patches, a.layer);
    a.embedding = embed_2d(activation_matrix(a.records), cfg.reducer, cfg.seed);
    a.assignment = gridify(a.embedding, cfg.grid);
    a.cells = aggregate(a.records, a.assignment, cfg.grid, model.num_classes());
    a.dataset_fingerprint = ds.fingerprint();
    a.model_fingerprint = model.fingerprint();
    return a;
}

struct SynthesisSummary {
    std::size_t synthesized = 0;
    std::size_t failed = 0;
};

/// Feature inversion towards each non-empty cell's mean activation. Cell
/// (i, j) uses seed derive_seed(cfg.seed, i * g + j); failures are recorded
/// on the cell and do not stop the others.
inline SynthesisSummary synthesize_atlas(Atlas& atlas, const Model& model, const VisConfig& cfg) {
    SynthesisSummary summary;
    for (auto& cell : atlas.cells) {
        cell.generated_image.reset();
        cell.error.clear();
        cell.initial_loss = cell.inversion_loss = std::numeric_limits<double>::quiet_NaN();
        if (cell.empty()) continue;
        VisConfig c = cfg;
        c.seed = cell.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(cell.i * atlas.grid + cell.j));
        try {
            auto res = feature_inversion(model, atlas.layer, cell.mean_activation, c);
            cell.generated_image = quantized(res.image);
            cell.initial_loss = res.trace.objective.front();
            cell.inversion_loss = res.trace.best_objective();
            ++summary.synthesized;
        } catch (const std::exception& e) {
            cell.error = e.what();
            ++summary.failed;
            spdlog::warn("synthesis failed for cell ({}, {}): {}", cell.i, cell.j, e.what());
        }
    }
    return summary;
}

/// Mean over non-empty cells of the majority-class share.
inline double mean_cell_purity(const Atlas& atlas) {
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& c : atlas.cells) {
        if (c.empty()) continue;
        total += static_cast<double>(*std::max_element(c.class_histogram.begin(), c.class_histogram.end())) /
                 static_cast<double>(c.n());
        ++count;
    }
    if (count == 0) throw std::invalid_argument("mean_cell_purity: atlas has no records");
    return total / static_cast<double>(count);
}

/// Fraction of records whose class equals their cell's majority class.
inline double record_purity(const Atlas& atlas) {
    std::size_t hits = 0, total = 0;
    for (const auto& c : atlas.cells) {
        if (c.empty()) continue;
        hits += *std::max_element(c.class_histogram.begin(), c.class_histogram.end());
        total += c.n();
    }
    if (total == 0) throw std::invalid_argument("record_purity: atlas has no records");
    return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace cvatlas
