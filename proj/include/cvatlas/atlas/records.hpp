#pragma once

#include "cvatlas/data/augment.hpp"
#include "cvatlas/data/dataset.hpp"
#include "cvatlas/model/classifier.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace cvatlas {

/// cls activation of one patch at one layer plus its per-class attribution
/// attribution[c] = <f, d logit_c / d f>.
struct ActivationRecord {
    std::string patch_id;
    int layer = 0;
    Vector f;
    int gt_class = -1;
    Vector attribution;

    friend bool operator==(const ActivationRecord&, const ActivationRecord&) = default;
};

/// Captures un-augmented patches (display space; normalised here).
inline std::vector<ActivationRecord> capture_activations(const Model& model, const std::vector<LabeledPatch>& patches,
                                                         int layer) {
    model.backbone().check_layer(layer);
    std::vector<ActivationRecord> out;
    out.reserve(patches.size());
    for (const auto& p : patches) {
        auto a = model.attribution(normalize(p.image), layer);
        if (!a.activation.allFinite() || !a.attribution.allFinite())
            throw std::runtime_error("capture_activations: non-finite activation for " + p.id);
        out.push_back({p.id, layer, std::move(a.activation), p.class_id, std::move(a.attribution)});
    }
    return out;
}

/// Seeded subsample of at most `max_count` patches, original order kept.
inline std::vector<LabeledPatch> subsample(const std::vector<LabeledPatch>& patches, std::size_t max_count,
                                           std::uint64_t seed) {
    if (max_count == 0 || patches.size() <= max_count) return patches;
    std::vector<std::size_t> idx(patches.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(max_count);
    std::sort(idx.begin(), idx.end());
    std::vector<LabeledPatch> out;
    out.reserve(max_count);
    for (auto i : idx) out.push_back(patches[i]);
    return out;
}

inline Matrix activation_matrix(const std::vector<ActivationRecord>& records) {
    if (records.empty()) return {};
    Matrix x(static_cast<Eigen::Index>(records.size()), records.front().f.size());
    for (std::size_t i = 0; i < records.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = records[i].f.transpose();
    return x;
}

}  // namespace cvatlas
