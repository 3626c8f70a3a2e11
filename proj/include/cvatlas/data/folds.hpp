#pragma once

#include "cvatlas/core/rng.hpp"
#include "cvatlas/data/dataset.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace cvatlas {

struct FoldAssignment {
    int k = 0;
    std::vector<int> fold;  // per patch, in dataset order

    [[nodiscard]] std::vector<std::size_t> members(int f) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < fold.size(); ++i)
            if (fold[i] == f) out.push_back(i);
        return out;
    }

    [[nodiscard]] std::vector<std::size_t> complement(int f) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < fold.size(); ++i)
            if (fold[i] != f) out.push_back(i);
        return out;
    }

    friend bool operator==(const FoldAssignment&, const FoldAssignment&) = default;
};

namespace detail {

inline double population_std(const std::vector<double>& v) {
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double acc = 0.0;
    for (double x : v) acc += (x - mean) * (x - mean);
    return std::sqrt(acc / static_cast<double>(v.size()));
}

}  // namespace detail

/// Greedy stratified group k-fold in the style of scikit-learn's
/// StratifiedGroupKFold(shuffle=True): groups are visited in seeded random
/// order, stably re-sorted by decreasing class-distribution spread, and each
/// is placed in the fold that minimises the mean across-fold spread of
/// per-class proportions (ties go to the fold holding fewer patches).
inline FoldAssignment stratified_group_kfold(const Dataset& ds, int k, std::uint64_t seed) {
    if (k < 2) throw std::invalid_argument("stratified_group_kfold: k must be >= 2");
    const std::size_t n_classes = ds.class_map.size();

    std::map<std::string, std::size_t> group_index;
    std::vector<std::size_t> patch_group(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        auto [it, inserted] = group_index.emplace(ds.patches[i].group_id, group_index.size());
        patch_group[i] = it->second;
    }
    const std::size_t n_groups = group_index.size();
    if (n_groups < static_cast<std::size_t>(k))
        throw std::invalid_argument("stratified_group_kfold: " + std::to_string(n_groups) +
                                    " distinct groups is fewer than k=" + std::to_string(k));

    std::vector<std::vector<double>> group_counts(n_groups, std::vector<double>(n_classes, 0.0));
    std::vector<double> class_totals(n_classes, 0.0);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto c = static_cast<std::size_t>(ds.patches[i].class_id);
        group_counts[patch_group[i]][c] += 1.0;
        class_totals[c] += 1.0;
    }
    for (std::size_t c = 0; c < n_classes; ++c) {
        std::size_t groups_with_class = 0;
        for (const auto& g : group_counts) groups_with_class += g[c] > 0 ? 1 : 0;
        if (groups_with_class == 1)
            spdlog::warn("stratified_group_kfold: class '{}' occurs in a single group; stratification degraded",
                         ds.class_map.code(static_cast<int>(c)));
    }

    std::vector<std::size_t> order(n_groups);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<double> spread(n_groups);
    for (std::size_t g = 0; g < n_groups; ++g) spread[g] = detail::population_std(group_counts[g]);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return spread[a] > spread[b]; });

    const auto kk = static_cast<std::size_t>(k);
    std::vector<std::vector<double>> fold_counts(kk, std::vector<double>(n_classes, 0.0));
    std::vector<double> fold_sizes(kk, 0.0);
    std::vector<int> group_fold(n_groups, -1);

    auto evaluate = [&](std::size_t candidate, std::size_t g) {
        double total = 0.0;
        std::size_t used = 0;
        std::vector<double> column(kk);
        for (std::size_t c = 0; c < n_classes; ++c) {
            if (class_totals[c] == 0) continue;
            for (std::size_t f = 0; f < kk; ++f) {
                double cnt = fold_counts[f][c] + (f == candidate ? group_counts[g][c] : 0.0);
                column[f] = cnt / class_totals[c];
            }
            total += detail::population_std(column);
            ++used;
        }
        return used ? total / static_cast<double>(used) : 0.0;
    };

    for (std::size_t g : order) {
        std::size_t best = 0;
        double best_eval = std::numeric_limits<double>::infinity();
        double best_size = std::numeric_limits<double>::infinity();
        for (std::size_t f = 0; f < kk; ++f) {
            const double e = evaluate(f, g);
            const bool close = std::abs(e - best_eval) <= 1e-12;
            if ((!close && e < best_eval) || (close && fold_sizes[f] < best_size)) {
                best = f;
                best_eval = e;
                best_size = fold_sizes[f];
            }
        }
        group_fold[g] = static_cast<int>(best);
        for (std::size_t c = 0; c < n_classes; ++c) fold_counts[best][c] += group_counts[g][c];
        fold_sizes[best] += std::accumulate(group_counts[g].begin(), group_counts[g].end(), 0.0);
    }

    FoldAssignment out{k, std::vector<int>(ds.size())};
    for (std::size_t i = 0; i < ds.size(); ++i) out.fold[i] = group_fold[patch_group[i]];
    return out;
}

/// Largest absolute difference between a fold's class proportion and the
/// global class proportion, over all folds and classes.
inline double max_proportion_deviation(const Dataset& ds, const FoldAssignment& folds) {
    const std::size_t nc = ds.class_map.size();
    std::vector<double> global(nc, 0.0);
    for (const auto& p : ds.patches) global[static_cast<std::size_t>(p.class_id)] += 1.0;
    for (auto& g : global) g /= static_cast<double>(ds.size());
    double worst = 0.0;
    for (int f = 0; f < folds.k; ++f) {
        auto idx = folds.members(f);
        if (idx.empty()) continue;
        std::vector<double> local(nc, 0.0);
        for (auto i : idx) local[static_cast<std::size_t>(ds.patches[i].class_id)] += 1.0;
        for (std::size_t c = 0; c < nc; ++c)
            worst = std::max(worst, std::abs(local[c] / static_cast<double>(idx.size()) - global[c]));
    }
    return worst;
}

/// CSV `patch_id,group_id,class_code,fold`.
inline void write_fold_csv(const std::string& path, const Dataset& ds, const FoldAssignment& folds) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_fold_csv: cannot open " + path);
    out << "patch_id,group_id,class_code,fold\n";
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& p = ds.patches[i];
        out << p.id << ',' << p.group_id << ',' << ds.class_map.code(p.class_id) << ',' << folds.fold[i] << '\n';
    }
}

}  // namespace cvatlas
